// SPDX-License-Identifier: Apache-2.0
// Command-line front end: gen | train | eval | ablate | analyze.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "ssp/ablation.hpp"
#include "ssp/analysis.hpp"
#include "ssp/checkpoint.hpp"
#include "ssp/config.hpp"
#include "ssp/data.hpp"
#include "ssp/errors.hpp"
#include "ssp/hash.hpp"
#include "ssp/parallel.hpp"
#include "ssp/serialize.hpp"
#include "ssp/training.hpp"

namespace fs = std::filesystem;
using namespace ssp;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kMissing = 4 };

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
  std::optional<std::string> policy;
  std::optional<std::string> strategy;
  std::optional<std::size_t> n_ifs;
  std::optional<int> threads;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<double> beta_init;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--dataset", f.dataset, "Dataset directory");
  cmd->add_option("--threads", f.threads, "Worker threads (SSP_DETERMINISTIC=1 forces 1)");
}

void add_training(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--policy", f.policy, "ssp_peft | full | head_only");
  cmd->add_option("--strategy", f.strategy, "last_forward | middle | bidirection | bi_independent");
  cmd->add_option("--n-ifs", f.n_ifs, "Number of inter-frame spreading boundaries");
  cmd->add_option("--lr", f.lr, "Peak learning rate");
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--beta-init", f.beta_init, "Initial inter-frame prompt scale");
}

RunConfig resolve(const CommonFlags& f, bool seed_is_data_seed = false) {
  RunConfig c = f.config_path.empty() ? RunConfig{} : load_run_config(f.config_path);
  if (f.seed) (seed_is_data_seed ? c.data_seed : c.seed) = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.dataset) c.dataset = *f.dataset;
  if (f.policy) c.policy = parse_policy(*f.policy);
  if (f.strategy) c.model.strategy = parse_strategy(*f.strategy);
  if (f.n_ifs) c.model.n_ifs = *f.n_ifs;
  if (f.threads) c.threads = *f.threads;
  if (f.lr) c.optim.lr = *f.lr;
  if (f.epochs) {
    c.optim.epochs = *f.epochs;
    // A short override keeps a tenth of the run as warmup.
    if (c.optim.warmup_epochs >= c.optim.epochs) c.optim.warmup_epochs = c.optim.epochs / 10;
  }
  if (f.beta_init) c.beta_init = *f.beta_init;
  c.validate();
  return c;
}

int cmd_gen(const CommonFlags& f) {
  const RunConfig c = resolve(f, true);
  const fs::path dir = c.dataset;
  const SynthSpec spec = c.synth_spec();
  const DatasetIndex index = write_dataset(spec, dir);
  std::size_t n_val = 0;
  for (const auto& e : index.entries) n_val += e.split == Split::kVal ? 1 : 0;
  std::printf("dataset %s\n", dir.string().c_str());
  std::printf("classes %zu  samples %zu  train %zu  val %zu\n", spec.n_classes, index.entries.size(),
              index.entries.size() - n_val, n_val);
  std::printf("index sha256 %s\n", sha256_hex(read_file(dir / "index.csv")).c_str());
  return kOk;
}

int cmd_train(const CommonFlags& f) {
  const RunConfig c = resolve(f);
  const Dataset data = read_dataset(c.dataset);
  TrainHooks hooks;
  hooks.verbose = true;
  const TrainResult r = train(c, data, hooks);
  std::printf("run %s\n", c.out.c_str());
  std::printf("parameters %zu  trainable %zu (%.2f%%)\n", r.counts.total, r.counts.trainable,
              100.0 * r.counts.trainable_fraction());
  std::printf("best val top1 %.4f at epoch %zu\n", r.best_val_top1, r.best_epoch);
  std::printf("frozen tensors: %s\n", r.frozen_unchanged ? "unchanged" : "CHANGED");
  return kOk;
}

RunConfig run_dir_config(const fs::path& run_dir) {
  const fs::path cfg = run_dir / "config.json";
  if (!fs::exists(cfg)) throw MissingArtifactError("run config not found: " + cfg.string());
  return load_run_config(cfg);
}

int cmd_eval(const CommonFlags& f, const std::string& run_arg) {
  const fs::path run_dir = !run_arg.empty() ? fs::path(run_arg) : fs::path(resolve(f).out);
  RunConfig c = run_dir_config(run_dir);
  if (f.dataset) c.dataset = *f.dataset;
  if (f.threads) c.threads = *f.threads;
  Checkpoint ck = load_checkpoint(run_dir / "checkpoints" / "best");
  const Dataset data = read_dataset(c.dataset);
  const std::vector<std::size_t> idx = data.indices(Split::kVal);
  std::vector<const Tensor*> videos;
  std::vector<std::size_t> labels;
  for (std::size_t i : idx) {
    videos.push_back(&data.videos[i]);
    labels.push_back(data.labels[i]);
  }
  const EvalResult ev = evaluate_batch({ck.config, ck.params, c.options, videos, labels}, c.threads);
  std::printf("val samples %zu  loss %.6f  top1 %.4f\n", ev.count, ev.loss, ev.top1());
  return kOk;
}

int cmd_ablate(const CommonFlags& f, std::size_t n_seeds) {
  const RunConfig c = resolve(f);
  const Dataset data = read_dataset(c.dataset);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(c.seed + i);
  const auto rows = run_ablation(c, data, seeds, true);
  const auto summary = summarize(rows);
  const fs::path out = c.out;
  write_file(out / "ablation.csv", ablation_csv(rows));
  write_file(out / "ablation_summary.csv", ablation_summary_csv(summary));
  for (const ArmSummary& s : summary)
    std::printf("%-8s %-17s mean %.4f  sd %.4f  (n=%zu)\n", s.grid.c_str(), s.arm.c_str(), s.mean, s.sd, s.runs);
  std::printf("wrote %s\n", (out / "ablation.csv").string().c_str());
  return kOk;
}

struct AnalyzeFlags {
  bool decay = false;
  bool paths = false;
  bool gates = false;
  bool pairs = false;
  std::size_t channels = 4;
  std::size_t sample = 0;
};

int cmd_analyze(const CommonFlags& f, const AnalyzeFlags& a, const std::string& run_arg) {
  const fs::path run_dir = !run_arg.empty() ? fs::path(run_arg) : fs::path(resolve(f).out);
  const RunConfig c = run_dir_config(run_dir);
  Checkpoint ck = load_checkpoint(run_dir / "checkpoints" / "best");
  const bool all = !a.decay && !a.paths && !a.gates;
  const fs::path exports = run_dir / "exports";

  Tensor video;
  if (fs::exists(fs::path(c.dataset) / "index.csv")) {
    const Dataset data = read_dataset(c.dataset);
    const auto val = data.indices(Split::kVal);
    if (val.empty()) throw ContractError("dataset has no validation samples");
    video = data.videos.at(val.at(a.sample % val.size()));
  } else {
    video = generate_sample(c.synth_spec(), 0, a.sample);
  }
  ForwardTrace trace;
  {
    Tape tape;
    forward(tape, video, ck.config, ck.params, c.options, &trace);
  }

  const std::size_t layers = trace.layers.size();
  if (all || a.decay) {
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t e = trace.layers[l].block.fwd.delta.dim(1);
      for (std::size_t ch = 0; ch < std::min(a.channels, e); ++ch) {
        const DecayCurve curve = decay_curve(trace, l, ch);
        if (!is_monotone(curve)) throw NumericError("decay curve for layer " + std::to_string(l) + " is not monotone");
        write_file(exports / ("decay_layer" + std::to_string(l) + "_ch" + std::to_string(ch) + ".csv"), decay_csv(curve));
        if (a.pairs) {
          write_file(exports / ("decay_pairs_layer" + std::to_string(l) + "_ch" + std::to_string(ch) + ".csv"),
                     decay_pairs_csv(trace, l, ch, 0));
        }
      }
    }
    std::printf("decay curves: %zu layers x %zu channels\n", layers, a.channels);
  }
  if (all || a.paths) {
    write_file(exports / "paths.csv", paths_csv(ck.config));
    const ConnectivityGraph plain(ck.config.T, ck.config.patches(), false);
    const ConnectivityGraph prompted(ck.config.T, ck.config.patches(), true, ck.config.n_ifs, ck.config.strategy);
    std::printf("max hops over the sequence: without inter-frame prompts %zu (S-1 = %zu), with %zu\n",
                plain.max_sequence_hops(), plain.sequence_length() - 1, prompted.max_sequence_hops());
    std::printf("frame 1 -> %zu: without %zu, with %zu\n", ck.config.T, path_length(ck.config, 1, ck.config.T, false),
                path_length(ck.config, 1, ck.config.T, true));
  }
  if (all || a.gates) {
    const std::size_t per_row = ck.config.W / ck.config.patch_w;
    for (std::size_t l = 0; l < layers; ++l) {
      write_file(exports / ("gates_layer" + std::to_string(l) + ".csv"), update_gates_csv(trace, l, per_row));
      if (trace.layers[l].prompts) {
        write_file(exports / ("layer" + std::to_string(l) + "_prompts.csv"), prompts_csv(trace, l));
      }
    }
    std::printf("update gates: %zu layers, %zu rows each\n", layers, ck.config.T * ck.config.patches());
  }
  std::printf("exports in %s\n", exports.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"State-space prompting for video classification"};
  app.require_subcommand(1);
  CommonFlags flags;
  AnalyzeFlags analyze_flags;
  std::string run_arg;
  std::size_t n_seeds = 3;

  CLI::App* gen = app.add_subcommand("gen", "Generate the synthetic dataset");
  add_common(gen, flags);
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, flags);
  add_training(train_cmd, flags);
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a run's best checkpoint on the validation split");
  add_common(eval, flags);
  eval->add_option("run", run_arg, "Run directory");
  CLI::App* ablate = app.add_subcommand("ablate", "Module and gate ablation grid");
  add_common(ablate, flags);
  add_training(ablate, flags);
  ablate->add_option("--seeds", n_seeds, "Seeds per arm")->check(CLI::PositiveNumber);
  CLI::App* analyze = app.add_subcommand("analyze", "Export decay curves, path lengths and gate values");
  add_common(analyze, flags);
  analyze->add_option("run", run_arg, "Run directory");
  analyze->add_flag("--decay", analyze_flags.decay, "Transmission decay curves");
  analyze->add_flag("--paths", analyze_flags.paths, "Frame-to-frame path lengths");
  analyze->add_flag("--gates", analyze_flags.gates, "Update gates and prompt values");
  analyze->add_flag("--pairs", analyze_flags.pairs, "Also dump every (i, j) transmission value");
  analyze->add_option("--channels", analyze_flags.channels, "Channels per layer for decay curves");
  analyze->add_option("--sample", analyze_flags.sample, "Validation sample to trace");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen(flags);
    if (*train_cmd) return cmd_train(flags);
    if (*eval) return cmd_eval(flags, run_arg);
    if (*ablate) return cmd_ablate(flags, n_seeds);
    if (*analyze) return cmd_analyze(flags, analyze_flags, run_arg);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return kNumeric;
  } catch (const MissingArtifactError& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return kMissing;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
