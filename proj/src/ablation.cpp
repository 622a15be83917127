// SPDX-License-Identifier: Apache-2.0
#include "ssp/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

#include "ssp/training.hpp"

namespace ssp {

namespace {

ForwardOptions make_options(bool ifg, bool ifs, bool entropy, bool variance) {
  ForwardOptions o;
  o.use_ifg = ifg;
  o.use_ifs = ifs;
  o.use_entropy_gate = entropy;
  o.use_variance_gate = variance;
  return o;
}

auto options_key(const ForwardOptions& o) {
  return std::make_tuple(o.use_ifg, o.use_ifs, o.use_entropy_gate, o.use_variance_gate);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<AblationArm> ablation_arms() {
  return {
      {"ifg+ifs", "modules", make_options(true, true, true, true)},
      {"ifg_only", "modules", make_options(true, false, true, true)},
      {"ifs_only", "modules", make_options(false, true, true, true)},
      {"neither", "modules", make_options(false, false, true, true)},
      {"entropy+variance", "gates", make_options(true, true, true, true)},
      {"entropy_only", "gates", make_options(true, true, true, false)},
      {"variance_only", "gates", make_options(true, true, false, true)},
      {"no_gates", "gates", make_options(true, true, false, false)},
  };
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const Dataset& data, const std::vector<std::uint64_t>& seeds,
                                      bool verbose) {
  std::map<std::tuple<bool, bool, bool, bool, std::uint64_t>, std::pair<double, double>> cache;
  std::vector<AblationRow> rows;
  for (const AblationArm& arm : ablation_arms()) {
    for (std::uint64_t seed : seeds) {
      const auto key = std::tuple_cat(options_key(arm.options), std::make_tuple(seed));
      auto it = cache.find(key);
      if (it == cache.end()) {
        RunConfig cfg = base;
        cfg.options = arm.options;
        cfg.seed = seed;
        TrainHooks hooks;
        hooks.write_files = false;
        const TrainResult r = train(cfg, data, hooks);
        it = cache.emplace(key, std::make_pair(r.best_val_top1, r.history.back().val_top1)).first;
        if (verbose) {
          std::printf("arm %-17s seed %llu  best val %.3f\n", arm.name.c_str(), static_cast<unsigned long long>(seed),
                      r.best_val_top1);
          std::fflush(stdout);
        }
      }
      rows.push_back({arm.name, arm.grid, arm.options, seed, it->second.first, it->second.second});
    }
  }
  return rows;
}

std::vector<ArmSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<ArmSummary> out;
  for (const AblationRow& r : rows) {
    if (out.empty() || out.back().arm != r.arm || out.back().grid != r.grid) out.push_back({r.arm, r.grid, 0, 0, 0});
    ArmSummary& s = out.back();
    s.mean += r.val_top1;
    ++s.runs;
  }
  for (ArmSummary& s : out) {
    s.mean /= static_cast<double>(s.runs);
    double sq = 0.0;
    for (const AblationRow& r : rows)
      if (r.arm == s.arm && r.grid == s.grid) sq += (r.val_top1 - s.mean) * (r.val_top1 - s.mean);
    s.sd = s.runs > 1 ? std::sqrt(sq / static_cast<double>(s.runs - 1)) : 0.0;
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "grid,arm,use_ifg,use_ifs,use_entropy_gate,use_variance_gate,seed,best_val_top1,final_val_top1\n";
  for (const AblationRow& r : rows) {
    out << r.grid << ',' << r.arm << ',' << r.options.use_ifg << ',' << r.options.use_ifs << ','
        << r.options.use_entropy_gate << ',' << r.options.use_variance_gate << ',' << r.seed << ',' << num(r.val_top1)
        << ',' << num(r.final_val_top1) << '\n';
  }
  return out.str();
}

std::string ablation_summary_csv(const std::vector<ArmSummary>& summary) {
  std::ostringstream out;
  out << "grid,arm,runs,mean_val_top1,sd_val_top1\n";
  for (const ArmSummary& s : summary)
    out << s.grid << ',' << s.arm << ',' << s.runs << ',' << num(s.mean) << ',' << num(s.sd) << '\n';
  return out.str();
}

}  // namespace ssp
