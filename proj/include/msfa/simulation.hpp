#pragma once

#include <map>
#include <string>
#include <vector>

#include "msfa/types.hpp"

namespace msfa {

struct ScenarioSpec {
  int n_studies = 0;           // S
  int n_vars = 0;              // P
  std::vector<int> sizes;      // n_s
  std::vector<int> totals;     // T_s
  int true_common = 0;         // K
  double loading_scale = 1.0;
  std::uint64_t seed = 0;

  FactorDims dims() const;
  void validate() const;
};

// Presets 1, 2, 3: K = 0, 1, 3 with S=4, n_s={285,140,195,578}, T_s={6,7,10,9}.
ScenarioSpec scenario_preset(int scenario, int p = 100);

// Free loading entries i.i.d. N(0, loading_scale^2), masked entries zero,
// psi entries Uniform[0.2, 1.2]. Deterministic given spec.seed.
MsfaParams generate_true_params(const ScenarioSpec& spec);

// n_s i.i.d. draws from N(0, Sigma_s) per study via Cholesky of the assembled
// covariance, then per-study column centering. Returns the centered dataset;
// the pre-centering sample means are recorded in column_means.
StudyDataset simulate_dataset(const MsfaParams& params, const std::vector<int>& sizes,
                              std::uint64_t seed);

// Same marginal law sampled through the latent composition
// x = Phi f + Lambda_s l + e; used as an independent sampling route in tests.
StudyDataset simulate_dataset_latent(const MsfaParams& params,
                                     const std::vector<int>& sizes, std::uint64_t seed);

// Table-1-shaped selection-frequency summary over replicates.
struct ScenarioTable {
  std::vector<int> candidate_k;
  std::map<std::string, std::vector<int>> counts;  // criterion -> tally per candidate
  int n_replicates = 0;
  int n_failures = 0;
  std::vector<std::string> failure_messages;
};

struct KRange {
  int lo = 0;
  int hi = 0;
};

ScenarioTable run_scenario_study(const ScenarioSpec& spec, int n_replicates,
                                 const KRange& k_range, const FitConfig& config);

}  // namespace msfa
