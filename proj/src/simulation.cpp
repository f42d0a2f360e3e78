#include "msfa/simulation.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <string>

#include "msfa/error.hpp"
#include "msfa/model.hpp"
#include "msfa/rng.hpp"
#include "msfa/selection.hpp"

namespace msfa {

FactorDims ScenarioSpec::dims() const {
  FactorDims d;
  d.common = true_common;
  for (int t : totals) d.specific.push_back(t - true_common);
  return d;
}

void ScenarioSpec::validate() const {
  if (n_studies < 1) throw ConfigError("scenario needs at least one study");
  if (static_cast<int>(sizes.size()) != n_studies ||
      static_cast<int>(totals.size()) != n_studies)
    throw ConfigError("sizes/totals must list one value per study");
  for (int t : totals)
    if (true_common > t) throw DimsError("K exceeds a study's total dimension T_s");
  require_feasible(dims(), n_vars);
  for (int i = 0; i < n_studies; ++i)
    if (sizes[static_cast<std::size_t>(i)] < 2)
      throw ConfigError("study " + std::to_string(i + 1) + " needs n_s >= 2");
}

ScenarioSpec scenario_preset(int scenario, int p) {
  ScenarioSpec spec;
  spec.n_studies = 4;
  spec.n_vars = p;
  spec.sizes = {285, 140, 195, 578};
  spec.totals = {6, 7, 10, 9};
  switch (scenario) {
    case 1: spec.true_common = 0; break;
    case 2: spec.true_common = 1; break;
    case 3: spec.true_common = 3; break;
    default:
      throw ConfigError("unknown scenario preset " + std::to_string(scenario) +
                        " (expected 1, 2 or 3)");
  }
  return spec;
}

MsfaParams generate_true_params(const ScenarioSpec& spec) {
  spec.validate();
  const int p = spec.n_vars;
  const FactorDims dims = spec.dims();
  const ConstraintMasks masks = ConstraintMasks::build(p, dims);
  Rng rng = make_rng(mix_seed(spec.seed, 0x70a5));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.2, 1.2);

  MsfaParams params;
  params.phi = Matrix::Zero(p, dims.common);
  for (int c = 0; c < dims.common; ++c)
    for (int row = 0; row < p; ++row)
      if (masks.phi(row, c)) params.phi(row, c) = spec.loading_scale * normal(rng);
  for (int s = 0; s < spec.n_studies; ++s) {
    const int j = dims.specific[static_cast<std::size_t>(s)];
    Matrix lam = Matrix::Zero(p, j);
    for (int c = 0; c < j; ++c)
      for (int row = 0; row < p; ++row)
        if (masks.lambda[static_cast<std::size_t>(s)](row, c))
          lam(row, c) = spec.loading_scale * normal(rng);
    params.lambda.push_back(std::move(lam));
    Vector psi(p);
    for (int row = 0; row < p; ++row) psi(row) = unif(rng);
    params.psi.push_back(std::move(psi));
  }
  return params;
}

StudyDataset simulate_dataset(const MsfaParams& params, const std::vector<int>& sizes,
                              std::uint64_t seed) {
  const int p = params.n_vars();
  if (static_cast<int>(sizes.size()) != params.n_studies())
    throw ConfigError("one sample size per study is required");
  StudyDataset data;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int s = 0; s < params.n_studies(); ++s) {
    const Matrix sigma = assemble_sigma(params, s);
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success)
      throw NumericError("Sigma not positive definite in study " + std::to_string(s + 1));
    const Matrix l = llt.matrixL();
    Rng rng = make_rng(mix_seed(seed, static_cast<std::uint64_t>(s)));
    const int n_s = sizes[static_cast<std::size_t>(s)];
    Matrix x(n_s, p);
    Vector z(p);
    for (int i = 0; i < n_s; ++i) {
      for (int c = 0; c < p; ++c) z(c) = normal(rng);
      x.row(i) = (l * z).transpose();
    }
    data.studies.push_back(std::move(x));
  }
  data.center();
  return data;
}

StudyDataset simulate_dataset_latent(const MsfaParams& params,
                                     const std::vector<int>& sizes, std::uint64_t seed) {
  const int p = params.n_vars();
  StudyDataset data;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int s = 0; s < params.n_studies(); ++s) {
    const Matrix omega = params.omega(s);
    const Vector noise_sd = params.psi[static_cast<std::size_t>(s)].cwiseSqrt();
    const int t = static_cast<int>(omega.cols());
    Rng rng = make_rng(mix_seed(seed, 0x2000 + static_cast<std::uint64_t>(s)));
    const int n_s = sizes[static_cast<std::size_t>(s)];
    Matrix x(n_s, p);
    Vector z(t);
    for (int i = 0; i < n_s; ++i) {
      for (int c = 0; c < t; ++c) z(c) = normal(rng);
      Vector row = t > 0 ? Vector(omega * z) : Vector(Vector::Zero(p));
      for (int c = 0; c < p; ++c) row(c) += noise_sd(c) * normal(rng);
      x.row(i) = row.transpose();
    }
    data.studies.push_back(std::move(x));
  }
  data.center();
  return data;
}

ScenarioTable run_scenario_study(const ScenarioSpec& spec, int n_replicates,
                                 const KRange& k_range, const FitConfig& config) {
  spec.validate();
  if (n_replicates < 1) throw ConfigError("n_replicates must be >= 1");

  ScenarioTable table;
  for (int k = k_range.lo; k <= k_range.hi; ++k) table.candidate_k.push_back(k);
  const std::size_t width = table.candidate_k.size();
  table.counts["aic"] = std::vector<int>(width, 0);
  table.counts["bic"] = std::vector<int>(width, 0);
  table.counts["lrt"] = std::vector<int>(width, 0);
  table.n_replicates = n_replicates;

  auto tally = [&](const std::string& crit, int k) {
    for (std::size_t i = 0; i < width; ++i)
      if (table.candidate_k[i] == k) ++table.counts[crit][i];
  };

  for (int r = 0; r < n_replicates; ++r) {
    const std::uint64_t rep_seed = mix_seed(spec.seed, static_cast<std::uint64_t>(r));
    try {
      ScenarioSpec rep_spec = spec;
      rep_spec.seed = mix_seed(rep_seed, 1);
      const MsfaParams truth = generate_true_params(rep_spec);
      const StudyDataset data = simulate_dataset(truth, spec.sizes, mix_seed(rep_seed, 2));
      FitConfig rep_config = config;
      rep_config.seed = mix_seed(rep_seed, 3);
      const SelectionReport report =
          select_k(data, spec.totals, k_range.lo, k_range.hi, rep_config);
      tally("aic", report.chosen_k_aic);
      tally("bic", report.chosen_k_bic);
      tally("lrt", report.chosen_k_lrt);
    } catch (const Error& e) {
      ++table.n_failures;
      table.failure_messages.push_back("replicate " + std::to_string(r + 1) + ": " +
                                       e.what());
    }
  }
  return table;
}

}  // namespace msfa
