// End-to-end acceptance suite. Each numbered check prints one PASS/FAIL line;
// the process exits nonzero if any check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "msfa/dataio.hpp"
#include "msfa/error.hpp"
#include "msfa/estimator.hpp"
#include "msfa/evaluation.hpp"
#include "msfa/model.hpp"
#include "msfa/selection.hpp"
#include "msfa/simulation.hpp"
#include "support.hpp"

using namespace msfa;
namespace mt = msfa::testing;

namespace {

int n_failed = 0;

void report(int number, const std::string& name, bool ok, const std::string& detail) {
  std::printf("criterion %d (%s): %s%s%s\n", number, name.c_str(),
              ok ? "PASS" : "FAIL", detail.empty() ? "" : " ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++n_failed;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Random feasible dims for the monotonicity sweep.
FactorDims random_feasible_dims(Rng& rng, int p, int n_studies) {
  for (;;) {
    FactorDims dims;
    dims.common = static_cast<int>(rng() % 4);
    dims.specific.clear();
    for (int s = 0; s < n_studies; ++s)
      dims.specific.push_back(static_cast<int>(rng() % 4));
    try {
      free_param_count(dims, p);
      return dims;
    } catch (const DimsError&) {
    }
  }
}

void criterion_monotone() {
  Rng rng = make_rng(101);
  int violations = 0;
  int fits = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const int p = 10 + static_cast<int>(rng() % 31);
    const int n_studies = 2 + static_cast<int>(rng() % 3);
    const FactorDims dims = random_feasible_dims(rng, p, n_studies);
    std::vector<int> sizes;
    for (int s = 0; s < n_studies; ++s)
      sizes.push_back(p + 10 + static_cast<int>(rng() % 51));
    const MsfaParams truth = mt::random_params(p, dims, 500 + rep);
    const StudyDataset data = simulate_dataset(truth, sizes, 900 + rep);
    FitConfig config;
    config.seed = static_cast<std::uint64_t>(rep);
    config.max_iter = 60;
    const FitResult fit = fit_msfa(data, dims, config);
    ++fits;
    for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i)
      if (fit.loglik_trace[i] < fit.loglik_trace[i - 1] - 1e-8) ++violations;
  }
  report(1, "monotone ECM", violations == 0,
         std::to_string(fits) + " fits, " + std::to_string(violations) +
             " trace violations");
}

void criterion_estep_oracle() {
  Rng rng = make_rng(202);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const int p = 3 + static_cast<int>(rng() % 6);
    const int n_studies = 1 + static_cast<int>(rng() % 2);
    const FactorDims dims = random_feasible_dims(rng, p, n_studies);
    std::vector<int> sizes(n_studies, 12);
    const MsfaParams params = mt::random_params(p, dims, 1500 + rep);
    const StudyDataset data = simulate_dataset(params, sizes, 1900 + rep);
    const EStepStats stats = compute_estep_stats(params, data);
    for (int s = 0; s < n_studies; ++s) {
      Matrix s1, s2;
      mt::estep_oracle(params, data, s, s1, s2);
      if (s1.size() > 0)
        worst = std::max(worst, (stats.s1[s] - s1).cwiseAbs().maxCoeff());
      if (s2.size() > 0)
        worst = std::max(worst, (stats.s2[s] - s2).cwiseAbs().maxCoeff());
    }
  }
  char detail[64];
  std::snprintf(detail, sizeof(detail), "max abs deviation %.2e", worst);
  report(2, "E-step oracle", worst < 1e-8, detail);
}

void criterion_stationarity() {
  // stationarity is only expected at interior optima, so runs whose fit
  // drives a uniqueness toward the floor (Heywood direction) are replaced
  // by further seeds until 20 interior converged fits are collected
  int ok_count = 0;
  int checked = 0;
  int skipped = 0;
  double worst_ratio = 0.0;
  for (int rep = 0; checked < 20 && rep < 60; ++rep) {
    FactorDims dims;
    dims.common = 1;
    dims.specific = {1, 1};
    const int p = 8;
    const std::vector<int> sizes{90, 110};
    const MsfaParams truth = mt::random_params(p, dims, 2500 + rep);
    const StudyDataset data = simulate_dataset(truth, sizes, 2900 + rep);
    FitConfig config;
    config.seed = static_cast<std::uint64_t>(rep);
    config.tol = 1e-12;
    config.max_iter = 1000000;
    const FitResult fit = fit_msfa(data, dims, config);
    double min_psi = std::numeric_limits<double>::infinity();
    for (const auto& psi : fit.params.psi) min_psi = std::min(min_psi, psi.minCoeff());
    if (min_psi < 5e-2) {
      ++skipped;
      continue;
    }
    ++checked;
    const double grad = mt::max_loglik_gradient(fit.params, data);
    const double bound =
        1e-3 * (1.0 + std::abs(fit.final_loglik) / fit.total_obs());
    worst_ratio = std::max(worst_ratio, grad / bound);
    if (fit.converged && grad <= bound) ++ok_count;
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail),
                "%d/20 interior fits stationary, %d boundary runs skipped, worst "
                "grad/bound %.3f",
                ok_count, skipped, worst_ratio);
  report(3, "stationarity", checked == 20 && ok_count == 20, detail);
}

void criterion_selection_table() {
  const int n_reps = 20;
  bool ok = true;
  std::string detail;
  for (int scenario = 1; scenario <= 3; ++scenario) {
    ScenarioSpec spec = scenario_preset(scenario, 40);
    spec.seed = 4000 + static_cast<std::uint64_t>(scenario);
    FitConfig config;
    config.seed = spec.seed;
    // the selection statistics need genuinely converged fits; the default
    // iteration cap stops some chains on a likelihood plateau
    config.max_iter = 40000;
    const ScenarioTable table = run_scenario_study(spec, n_reps, {0, 5}, config);
    const auto it = std::find(table.candidate_k.begin(), table.candidate_k.end(),
                              spec.true_common);
    const std::size_t idx =
        static_cast<std::size_t>(it - table.candidate_k.begin());
    const int aic_hits = table.counts.at("aic")[idx];
    const int lrt_hits = table.counts.at("lrt")[idx];
    const int bic_hits = table.counts.at("bic")[idx];
    const bool scenario_ok = table.n_failures == 0 &&
                             aic_hits >= static_cast<int>(0.9 * n_reps) &&
                             lrt_hits >= static_cast<int>(0.8 * n_reps);
    ok = ok && scenario_ok;
    detail += "S" + std::to_string(scenario) + " aic " + std::to_string(aic_hits) +
              "/20 lrt " + std::to_string(lrt_hits) + "/20 bic " +
              std::to_string(bic_hits) + "/20; ";
  }
  report(4, "selection frequencies", ok, detail);
}

void criterion_loading_recovery() {
  const int n_reps = 20;
  ScenarioSpec spec = scenario_preset(3, 40);
  const int p = spec.n_vars;
  const int k = spec.true_common;
  spec.seed = 5000;
  const MsfaParams truth = generate_true_params(spec);

  std::vector<double> all_corr;
  std::vector<Matrix> msfa_loadings, merged_loadings;
  for (int rep = 0; rep < n_reps; ++rep) {
    const StudyDataset data =
        simulate_dataset(truth, spec.sizes, 5100 + static_cast<std::uint64_t>(rep));
    FitConfig config;
    config.seed = static_cast<std::uint64_t>(rep);
    config.max_iter = 40000;
    const FitResult fit = fit_msfa(data, spec.dims(), config);
    const Alignment a = align_loadings(fit.params.phi, truth.phi);
    for (double c : a.correlations) all_corr.push_back(c);
    msfa_loadings.push_back(a.aligned);

    // merged-FA baseline: one factor analysis on the stacked studies with the
    // true common dimension, aligned to the same reference
    int total_rows = 0;
    for (const auto& x : data.studies) total_rows += static_cast<int>(x.rows());
    Matrix stacked(total_rows, p);
    int row = 0;
    for (const auto& x : data.studies) {
      stacked.middleRows(row, static_cast<int>(x.rows())) = x;
      row += static_cast<int>(x.rows());
    }
    stacked.rowwise() -= stacked.colwise().mean();
    const FitResult merged = fit_fa(stacked, k, config);
    merged_loadings.push_back(align_loadings(merged.params.lambda[0], truth.phi).aligned);
  }

  const double med = median(all_corr);

  int msfa_tighter = 0;
  const int n_entries = p * k;
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < k; ++c) {
      auto sd = [&](const std::vector<Matrix>& mats) {
        double mean = 0.0;
        for (const auto& m : mats) mean += m(r, c);
        mean /= mats.size();
        double ss = 0.0;
        for (const auto& m : mats) ss += (m(r, c) - mean) * (m(r, c) - mean);
        return std::sqrt(ss / (mats.size() - 1));
      };
      if (sd(msfa_loadings) <= sd(merged_loadings)) ++msfa_tighter;
    }
  const double frac = static_cast<double>(msfa_tighter) / n_entries;

  char detail[96];
  std::snprintf(detail, sizeof(detail),
                "median aligned |corr| %.4f, tighter-spread fraction %.2f", med, frac);
  report(5, "loading recovery", med >= 0.95 && frac >= 0.70, detail);
}

void criterion_cv_direction() {
  const int n_runs = 20;
  int msfa_wins = 0;
  for (int run = 0; run < n_runs; ++run) {
    ScenarioSpec spec;
    spec.n_studies = 4;
    spec.n_vars = 30;
    spec.sizes = {150, 120, 130, 200};
    spec.totals = {6, 7, 10, 9};
    spec.true_common = 3;
    spec.seed = 6000 + static_cast<std::uint64_t>(run);
    const MsfaParams truth = generate_true_params(spec);
    const StudyDataset data =
        simulate_dataset(truth, spec.sizes, 6500 + static_cast<std::uint64_t>(run));
    FitConfig config;
    config.seed = static_cast<std::uint64_t>(run);
    config.tol = 1e-7;
    const CvReport cv = cv_mse(data, spec.dims(), 0.75, 1, config);
    if (cv.msfa.mse <= cv.fa_merged.mse) ++msfa_wins;
  }
  report(6, "cross-validated prediction", msfa_wins >= 16,
         std::to_string(msfa_wins) + "/20 runs with MSFA MSE <= merged-FA MSE");
}

void criterion_exact_formulas() {
  bool ok = true;
  std::string detail;

  const auto [aic, bic] = information_criteria(-1000.0, 10, 100);
  if (std::abs(aic - 2020.0) > 1e-12 ||
      std::abs(bic - (2000.0 + 10.0 * std::log(100.0))) > 1e-12) {
    ok = false;
    detail += "information-criteria arithmetic; ";
  }

  FactorDims paper_dims;
  paper_dims.common = 3;
  paper_dims.specific = {3, 4, 7, 6};
  if (free_param_count(paper_dims, 100) != 2592 ||
      mt::mask_count_oracle(paper_dims, 100) != 2592) {
    ok = false;
    detail += "free-parameter count; ";
  }

  Rng rng = make_rng(700);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(12, 3), g(3, 3);
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 3; ++c) a(r, c) = normal(rng);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) g(r, c) = normal(rng);
  const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();
  if (std::abs(rv_coefficient(a, a) - 1.0) > 1e-10 ||
      std::abs(rv_coefficient(a, Matrix(3.0 * a)) - 1.0) > 1e-10 ||
      std::abs(rv_coefficient(a, Matrix(a * q)) - rv_coefficient(a, a)) > 1e-10) {
    ok = false;
    detail += "RV properties; ";
  }

  // serialization round-trip on a real fit
  FactorDims dims;
  dims.common = 1;
  dims.specific = {1, 1};
  const MsfaParams truth = mt::random_params(6, dims, 701);
  const StudyDataset data = simulate_dataset(truth, {70, 80}, 702);
  FitConfig config;
  config.seed = 7;
  const FitResult fit = fit_msfa(data, dims, config);
  const std::string path =
      (std::filesystem::temp_directory_path() / "msfa_acceptance_fit.json").string();
  save_fit(fit, path);
  const FitResult back = load_fit(path);
  std::filesystem::remove(path);
  bool roundtrip = back.params.phi == fit.params.phi &&
                   back.final_loglik == fit.final_loglik && back.aic == fit.aic &&
                   back.bic == fit.bic;
  for (int s = 0; s < 2; ++s)
    roundtrip = roundtrip && back.params.lambda[s] == fit.params.lambda[s] &&
                back.params.psi[s] == fit.params.psi[s];
  if (!roundtrip) {
    ok = false;
    detail += "serialization round-trip; ";
  }

  report(7, "exact formulas", ok, ok ? "all identities hold" : detail);
}

void criterion_degenerate_equivalence() {
  int matches = 0;
  for (int rep = 0; rep < 10; ++rep) {
    FactorDims dims;
    dims.common = 0;
    dims.specific = {2};
    const int p = 7;
    const MsfaParams truth = mt::random_params(p, dims, 8000 + rep);
    const StudyDataset data = simulate_dataset(truth, {90}, 8500 + rep);
    FitConfig config;
    config.seed = static_cast<std::uint64_t>(rep);
    const FitResult fa = fit_fa(data.studies[0], 2, config);
    const FitResult msfa = fit_msfa(data, dims, config);
    if (fa.params.lambda[0] == msfa.params.lambda[0] &&
        fa.params.psi[0] == msfa.params.psi[0] &&
        fa.final_loglik == msfa.final_loglik &&
        fa.loglik_trace == msfa.loglik_trace)
      ++matches;
  }
  report(8, "single-study equivalence", matches == 10,
         std::to_string(matches) + "/10 bit-for-bit matches");
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  criterion_monotone();
  criterion_estep_oracle();
  criterion_stationarity();
  criterion_selection_table();
  criterion_loading_recovery();
  criterion_cv_direction();
  criterion_exact_formulas();
  criterion_degenerate_equivalence();
  const auto t1 = std::chrono::steady_clock::now();
  const double minutes =
      std::chrono::duration_cast<std::chrono::seconds>(t1 - t0).count() / 60.0;
  std::printf("%d/8 criteria passed in %.1f minutes\n", 8 - n_failed, minutes);
  return n_failed == 0 ? 0 : 1;
}
