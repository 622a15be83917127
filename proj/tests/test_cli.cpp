// SPDX-License-Identifier: Apache-2.0
// Drives the ssp binary end to end on a tiny configuration.
#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include "ssp/checkpoint.hpp"
#include "ssp/serialize.hpp"

namespace fs = std::filesystem;
using namespace ssp;

namespace {

struct Outcome {
  int code;
  std::string output;
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(SSP_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string field(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
  return {};
}

struct Workspace {
  fs::path root;
  fs::path config;
  fs::path data;

  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("ssp_test_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
    data = root / "data";
    config = root / "tiny.json";
    write_file(config, R"({"T": 2, "H": 4, "W": 4, "patch_h": 2, "patch_w": 2, "d": 8, "D": 4, "L": 2,
 "d_s": 4, "d_t": 4, "n_ifs": 1, "n_classes": 3, "samples_per_class": 5,
 "epochs": 2, "warmup_epochs": 1, "batch_size": 4, "threads": 1, "dataset": ")" +
                           data.string() + "\"}\n");
  }
  ~Workspace() { fs::remove_all(root); }

  std::string base() const { return "--config " + config.string(); }
};

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("train --epochs notanumber").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("gen") {
  Workspace w("gen");
  SUBCASE("same seed gives the same index hash") {
    const Outcome a = run("gen " + w.base() + " --seed 7");
    REQUIRE(a.code == 0);
    CHECK(field(a.output, "classes ") == "3  samples 15  train 12  val 3");
    const Outcome b = run("gen " + w.base() + " --seed 7 --dataset " + (w.root / "again").string());
    REQUIRE(b.code == 0);
    CHECK(!field(a.output, "index sha256 ").empty());
    CHECK(field(a.output, "index sha256 ") == field(b.output, "index sha256 "));
    const Outcome c = run("gen " + w.base() + " --seed 8 --dataset " + (w.root / "other").string());
    CHECK(field(a.output, "index sha256 ") != field(c.output, "index sha256 "));
  }
  SUBCASE("default config") {
    const Outcome a = run("gen --dataset " + (w.root / "default").string());
    REQUIRE(a.code == 0);
    CHECK(field(a.output, "classes ") == "6  samples 600  train 480  val 120");
  }
  SUBCASE("unknown key names the key") {
    write_file(w.root / "bad.json", R"({"n_clases": 4})");
    const Outcome a = run("gen --config " + (w.root / "bad.json").string());
    CHECK(a.code == 2);
    CHECK(a.output.find("n_clases") != std::string::npos);
  }
  SUBCASE("invalid value") {
    write_file(w.root / "bad.json", R"({"d": -3})");
    CHECK(run("gen --config " + (w.root / "bad.json").string()).code == 2);
    write_file(w.root / "bad.json", "{not json");
    CHECK(run("gen --config " + (w.root / "bad.json").string()).code == 2);
    CHECK(run("gen " + w.base() + " --policy nonsense").code == 2);
  }
}

TEST_CASE("train, eval and analyze") {
  Workspace w("train");
  REQUIRE(run("gen " + w.base()).code == 0);
  const fs::path out = w.root / "run";
  const Outcome t = run("train " + w.base() + " --out " + out.string());
  REQUIRE(t.code == 0);
  CHECK(t.output.find("frozen tensors: unchanged") != std::string::npos);
  CHECK(read_file(out / "frozen_hashes.txt").find("frozen tensors: unchanged") != std::string::npos);
  CHECK(fs::exists(out / "metrics.csv"));

  const Outcome e = run("eval " + out.string());
  CHECK(e.code == 0);
  CHECK(e.output.find("val samples 3") != std::string::npos);

  const Outcome a = run("analyze " + out.string() + " --paths --gates --decay --channels 2");
  REQUIRE(a.code == 0);
  // Promptless scan chain spans S - 1 hops: cls + T*N tokens.
  CHECK(a.output.find("without inter-frame prompts 8 (S-1 = 8)") != std::string::npos);
  CHECK(fs::exists(out / "exports" / "paths.csv"));
  CHECK(fs::exists(out / "exports" / "decay_layer1_ch1.csv"));
  const std::string gates = read_file(out / "exports" / "gates_layer0.csv");
  CHECK(std::count(gates.begin(), gates.end(), '\n') == 1 + 2 * 4);

  SUBCASE("determinism") {
    const fs::path again = w.root / "run_again";
    REQUIRE(run("train " + w.base() + " --out " + again.string()).code == 0);
    CHECK(read_file(out / "metrics.csv") == read_file(again / "metrics.csv"));
    CHECK(read_file(out / "checkpoints" / "final" / "manifest.txt") ==
          read_file(again / "checkpoints" / "final" / "manifest.txt"));
  }
  SUBCASE("missing checkpoint") {
    fs::remove_all(out / "checkpoints" / "best");
    CHECK(run("analyze " + out.string()).code == 4);
    CHECK(run("eval " + out.string()).code == 4);
    CHECK(run("analyze " + (w.root / "nowhere").string()).code == 4);
  }
  SUBCASE("missing dataset") {
    CHECK(run("train " + w.base() + " --dataset " + (w.root / "nodata").string()).code == 4);
  }
}

TEST_CASE("zero learning rate keeps the initial parameters") {
  Workspace w("lr0");
  REQUIRE(run("gen " + w.base()).code == 0);
  const fs::path out = w.root / "run";
  const Outcome t = run("train " + w.base() + " --policy full --lr 0 --out " + out.string());
  REQUIRE(t.code == 0);
  Checkpoint initial = load_checkpoint(out / "checkpoints" / "initial");
  Checkpoint final_ = load_checkpoint(out / "checkpoints" / "final");
  const auto a = tensor_hashes(initial.params);
  const auto b = tensor_hashes(final_.params);
  CHECK(a == b);
}

TEST_CASE("non-finite loss exits with the numeric code") {
  Workspace w("nan");
  REQUIRE(run("gen " + w.base()).code == 0);
  const Outcome t = run("train " + w.base() + " --lr 1e308 --policy full --out " + (w.root / "run").string());
  CHECK(t.code == 3);
  CHECK(fs::exists(w.root / "run" / "abort" / "state.txt"));
}
