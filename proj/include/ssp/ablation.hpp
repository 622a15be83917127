// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssp/config.hpp"
#include "ssp/data.hpp"

namespace ssp {

struct AblationArm {
  std::string name;
  std::string grid;  // "modules" or "gates"
  ForwardOptions options;
};

/// The module grid {IFG, IFS} x {on, off} followed by the gate grid
/// {entropy, variance} x {on, off} with both modules on.
std::vector<AblationArm> ablation_arms();

struct AblationRow {
  std::string arm;
  std::string grid;
  ForwardOptions options;
  std::uint64_t seed = 0;
  double val_top1 = 0.0;  // best validation accuracy over the run
  double final_val_top1 = 0.0;
};

struct ArmSummary {
  std::string arm;
  std::string grid;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation over seeds
  std::size_t runs = 0;
};

/// Trains every arm for every seed. Arms with identical options share runs.
std::vector<AblationRow> run_ablation(const RunConfig& base, const Dataset& data, const std::vector<std::uint64_t>& seeds,
                                      bool verbose = false);

std::vector<ArmSummary> summarize(const std::vector<AblationRow>& rows);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_summary_csv(const std::vector<ArmSummary>& summary);

}  // namespace ssp
