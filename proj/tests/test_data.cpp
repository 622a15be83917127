// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "ssp/config.hpp"
#include "ssp/data.hpp"
#include "ssp/errors.hpp"
#include "ssp/serialize.hpp"
#include "ssp/training.hpp"

namespace fs = std::filesystem;
using namespace ssp;

namespace {

SynthSpec clean_spec() {
  SynthSpec s;
  s.noise_sigma = 0.0;
  return s;
}

double pixel(const Tensor& v, const SynthSpec& s, std::size_t t, std::size_t y, std::size_t x) {
  return v[((t * s.C) * s.H + y) * s.W + x];
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ssp_test_data_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("sample generation examples") {
  const SynthSpec s = clean_spec();
  SUBCASE("blink-off frames are background") {
    for (std::size_t index : {0u, 3u, 17u}) {
      const Tensor v = generate_sample(s, 5, index);
      for (std::size_t t = 1; t < s.T; t += 2)
        for (std::size_t y = 0; y < s.H; ++y)
          for (std::size_t x = 0; x < s.W; ++x) CHECK(pixel(v, s, t, y, x) == 0.0);
      double on = 0;
      for (std::size_t y = 0; y < s.H; ++y)
        for (std::size_t x = 0; x < s.W; ++x) on += pixel(v, s, 0, y, x);
      CHECK(on == 16.0);
    }
  }
  SUBCASE("determinism") {
    SynthSpec noisy;
    for (std::size_t c = 0; c < noisy.n_classes; ++c) {
      const Tensor a = generate_sample(noisy, c, 11), b = generate_sample(noisy, c, 11);
      CHECK(a.bitwise_equal(b));
      CHECK_FALSE(a.bitwise_equal(generate_sample(noisy, c, 12)));
    }
    SynthSpec other = noisy;
    other.seed = 1;
    CHECK_FALSE(generate_sample(noisy, 0, 0).bitwise_equal(generate_sample(other, 0, 0)));
  }
  SUBCASE("right and left motion are mirror images") {
    for (std::size_t index = 0; index < 20; ++index) {
      const Tensor right = generate_sample(s, 0, index), left = generate_sample(s, 1, index);
      for (std::size_t t = 0; t < s.T; ++t)
        for (std::size_t y = 0; y < s.H; ++y)
          for (std::size_t x = 0; x < s.W; ++x)
            CHECK(pixel(right, s, t, y, x) == pixel(left, s, t, y, s.W - 1 - x));
    }
  }
  SUBCASE("every class moves or changes between frames") {
    for (std::size_t c = 0; c < s.n_classes; ++c) {
      const Tensor v = generate_sample(s, c, 4);
      const std::size_t frame = s.C * s.H * s.W;
      for (std::size_t t = 0; t + 1 < s.T; ++t)
        CHECK_FALSE(std::equal(v.data().begin() + static_cast<long>(t * frame),
                               v.data().begin() + static_cast<long>((t + 1) * frame),
                               v.data().begin() + static_cast<long>((t + 1) * frame)));
    }
  }
  SUBCASE("values stay in [0, 1] under noise") {
    SynthSpec noisy;
    noisy.noise_sigma = 0.3;
    for (double v : generate_sample(noisy, 2, 0).data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(generate_sample(s, s.n_classes, 0), ContractError);
    SynthSpec bad = s;
    bad.n_classes = 7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = s;
    bad.H = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("frame shuffling") {
  const SynthSpec s = clean_spec();
  const Tensor v = generate_sample(s, 0, 2);
  std::vector<std::size_t> order(s.T);
  std::iota(order.begin(), order.end(), 0);
  CHECK(shuffle_frames(v, order).bitwise_equal(v));
  std::reverse(order.begin(), order.end());
  const Tensor r = shuffle_frames(v, order);
  for (std::size_t t = 0; t < s.T; ++t) CHECK(pixel(r, s, t, 5, 7) == pixel(v, s, s.T - 1 - t, 5, 7));
  CHECK_THROWS_AS(shuffle_frames(v, {0, 1}), DimensionError);
  order[0] = s.T;
  CHECK_THROWS_AS(shuffle_frames(v, order), ContractError);
}

TEST_CASE("stratified split is exactly balanced") {
  for (std::size_t per_class : {5u, 10u, 25u, 50u}) {
    const auto splits = stratified_split(6, per_class, 3);
    REQUIRE(splits.size() == 6 * per_class);
    const std::size_t expected_val = static_cast<std::size_t>(std::lround(kValFraction * static_cast<double>(per_class)));
    for (std::size_t c = 0; c < 6; ++c) {
      const auto begin = splits.begin() + static_cast<long>(c * per_class);
      CHECK(static_cast<std::size_t>(std::count(begin, begin + static_cast<long>(per_class), Split::kVal)) ==
            expected_val);
    }
    CHECK(stratified_split(6, per_class, 3) == splits);
  }
  CHECK(stratified_split(6, 50, 3) != stratified_split(6, 50, 4));
}

TEST_CASE("dataset round trip and integrity") {
  SynthSpec s;
  s.n_classes = 3;
  s.samples_per_class = 5;
  const fs::path dir = scratch("roundtrip");
  const DatasetIndex index = write_dataset(s, dir);
  CHECK(index.entries.size() == 15);

  const std::string csv = read_file(dir / "index.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 15);

  const Dataset d = read_dataset(dir);
  REQUIRE(d.videos.size() == 15);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 5; ++i) {
      const std::size_t k = c * 5 + i;
      CHECK(d.labels[k] == c);
      CHECK(d.videos[k].bitwise_equal(generate_sample(s, c, i)));
    }
  CHECK(d.splits == stratified_split(3, 5, s.seed));
  CHECK(spec_to_json(d.spec) == spec_to_json(s));
  CHECK(d.indices(Split::kVal).size() == 3);

  // Regenerating gives the same bytes.
  const fs::path again = scratch("roundtrip_again");
  const DatasetIndex index2 = write_dataset(s, again);
  for (std::size_t k = 0; k < 15; ++k) CHECK(index.entries[k].sha256 == index2.entries[k].sha256);

  SUBCASE("tampered payload") {
    const fs::path victim = dir / index.entries[7].path;
    std::string bytes = read_file(victim);
    bytes[bytes.size() - 3] ^= 0x01;
    write_file(victim, bytes);
    try {
      read_dataset(dir);
      FAIL("tampering went unnoticed");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(index.entries[7].path) != std::string::npos);
    }
  }
  SUBCASE("missing index") {
    fs::remove(dir / "index.csv");
    CHECK_THROWS_AS(read_dataset(dir), MissingArtifactError);
  }
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("frame order carries the label") {
  // Classes 0 and 1 differ only in direction of travel, so once frames are
  // shuffled the model should fall back to chance.
  RunConfig base;
  base.model.n_classes = 2;
  base.samples_per_class = 100;
  base.optim.epochs = 10;
  base.optim.warmup_epochs = 1;
  base.threads = 1;
  TrainHooks quiet;
  quiet.write_files = false;

  auto build = [&](std::uint64_t seed, bool shuffle) {
    RunConfig r = base;
    r.seed = seed;
    r.data_seed = seed;
    Dataset d;
    d.spec = r.synth_spec();
    d.splits = stratified_split(2, r.samples_per_class, d.spec.seed);
    std::mt19937_64 rng(1000 + seed);
    std::vector<std::size_t> order(d.spec.T);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < r.samples_per_class; ++i) {
        Tensor v = generate_sample(d.spec, c, i);
        if (shuffle) {
          std::iota(order.begin(), order.end(), 0);
          std::shuffle(order.begin(), order.end(), rng);
          v = shuffle_frames(v, order);
        }
        d.videos.push_back(std::move(v));
        d.labels.push_back(c);
      }
    return std::pair{r, d};
  };

  double shuffled_mean = 0.0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    auto [r, d] = build(seed, true);
    const TrainResult res = train(r, d, quiet);
    MESSAGE("seed " << seed << " shuffled val top1 " << res.history.back().val_top1);
    shuffled_mean += res.history.back().val_top1 / 3.0;
  }
  MESSAGE("shuffled mean val top1 " << shuffled_mean);
  CHECK(shuffled_mean >= 0.4);
  CHECK(shuffled_mean <= 0.6);

  auto [r, d] = build(0, false);
  const TrainResult ordered = train(r, d, quiet);
  MESSAGE("ordered val top1 " << ordered.best_val_top1);
  CHECK(ordered.best_val_top1 >= 0.9);
}
