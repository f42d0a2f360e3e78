#include "msfa/selection.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <limits>

#include "msfa/error.hpp"
#include "msfa/estimator.hpp"
#include "msfa/model.hpp"
#include "msfa/rng.hpp"

namespace msfa {

namespace {

Vector correlation_eigenvalues(const Matrix& x) {
  const double n = static_cast<double>(x.rows());
  Matrix centered = x.rowwise() - x.colwise().mean();
  Matrix cov = centered.transpose() * centered / n;
  Vector sd = cov.diagonal().cwiseSqrt();
  for (int c = 0; c < sd.size(); ++c)
    if (!(sd(c) > 0))
      throw DataError("column " + std::to_string(c + 1) + " has zero variance");
  Matrix corr = sd.cwiseInverse().asDiagonal() * cov * sd.cwiseInverse().asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> es(corr);
  Vector ev = es.eigenvalues().reverse();  // descending
  return ev;
}

}  // namespace

int horn_parallel_analysis(const Matrix& study, int n_random, double quantile,
                           std::uint64_t seed) {
  if (study.rows() < 2 || study.cols() < 1)
    throw DataError("parallel analysis needs n >= 2 and P >= 1");
  if (n_random < 1) throw ConfigError("n_random must be >= 1");
  const int p = static_cast<int>(study.cols());
  const Vector data_ev = correlation_eigenvalues(study);

  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix random_ev(n_random, p);  // row r = descending eigenvalues of replicate r
  Matrix noise(study.rows(), p);
  for (int r = 0; r < n_random; ++r) {
    for (int i = 0; i < noise.rows(); ++i)
      for (int c = 0; c < p; ++c) noise(i, c) = normal(rng);
    random_ev.row(r) = correlation_eigenvalues(noise).transpose();
  }

  int t = 0;
  for (int k = 0; k < p; ++k) {
    std::vector<double> order(n_random);
    for (int r = 0; r < n_random; ++r) order[static_cast<std::size_t>(r)] = random_ev(r, k);
    std::sort(order.begin(), order.end());
    const int idx = std::min(
        n_random - 1,
        std::max(0, static_cast<int>(std::ceil(quantile * n_random)) - 1));
    if (data_ev(k) > order[static_cast<std::size_t>(idx)])
      ++t;
    else
      break;
  }
  return t;
}

std::pair<double, double> information_criteria(double loglik, int n_free_params,
                                               int total_obs) {
  const double aic = -2.0 * loglik + 2.0 * n_free_params;
  const double bic = -2.0 * loglik + n_free_params * std::log(static_cast<double>(total_obs));
  return {aic, bic};
}

LrtResult lrt(const FitResult& fit_a, const FitResult& fit_b) {
  if (fit_a.dims.n_studies() != fit_b.dims.n_studies() ||
      fit_a.study_sizes != fit_b.study_sizes)
    throw DimsError("LRT requires fits on the same data");
  for (int s = 0; s < fit_a.dims.n_studies(); ++s)
    if (fit_a.dims.total(s) != fit_b.dims.total(s))
      throw DimsError("LRT requires nested models with equal T_s (study " +
                      std::to_string(s + 1) + " differs)");
  const FitResult& more = fit_a.n_free_params >= fit_b.n_free_params ? fit_a : fit_b;
  const FitResult& less = fit_a.n_free_params >= fit_b.n_free_params ? fit_b : fit_a;
  LrtResult r;
  r.statistic = 2.0 * (more.final_loglik - less.final_loglik);
  r.df = more.n_free_params - less.n_free_params;
  if (r.df == 0) {
    r.p_value = r.statistic <= 1e-12 ? 1.0 : 0.0;
  } else {
    boost::math::chi_squared chi2(r.df);
    const double stat = std::max(r.statistic, 0.0);
    r.p_value = boost::math::cdf(boost::math::complement(chi2, stat));
  }
  return r;
}

SelectionReport select_k(const StudyDataset& data, const std::vector<int>& totals,
                         int k_lo, int k_hi, const FitConfig& config,
                         std::vector<FitResult>* fits_out) {
  data.validate();
  if (static_cast<int>(totals.size()) != data.n_studies())
    throw DimsError("one T_s per study is required");
  const int p = data.n_vars();
  const int min_t = *std::min_element(totals.begin(), totals.end());

  std::vector<int> candidates;
  for (int k = k_lo; k <= k_hi; ++k) {
    if (k < 0 || k > min_t) continue;
    FactorDims dims;
    dims.common = k;
    for (int t : totals) dims.specific.push_back(t - k);
    try {
      require_feasible(dims, p);
    } catch (const DimsError&) {
      continue;
    }
    candidates.push_back(k);
  }
  if (candidates.empty())
    throw DimsError("no feasible K in range " + std::to_string(k_lo) + ".." +
                    std::to_string(k_hi));

  std::vector<FitResult> fits;
  for (int k : candidates) {
    FactorDims dims;
    dims.common = k;
    for (int t : totals) dims.specific.push_back(t - k);
    fits.push_back(fit_msfa(data, dims, config));
  }

  // An LRT rejection can be an artifact of the larger-K fit landing on a
  // worse local optimum (its statistic is inflated by the missing likelihood).
  // Before trusting a rejection, retry the larger-K fit from fresh starts and
  // keep the best; a genuine rejection survives, a spurious one disappears.
  for (std::size_t i = 0; i + 1 < candidates.size(); ++i) {
    if (candidates[i + 1] != candidates[i] + 1) break;
    if (lrt(fits[i], fits[i + 1]).p_value >= 0.05) continue;
    const FactorDims& big_dims = fits[i + 1].dims;

    // warm start: the smaller-K fit already carries the shared structure in
    // its leading specific columns, so promote their cross-study average to
    // the new common column and drop one specific column per study
    {
      const MsfaParams& small = fits[i].params;
      MsfaParams promoted;
      promoted.phi = Matrix(p, candidates[i + 1]);
      Vector shared = Vector::Zero(p);
      for (int s = 0; s < small.n_studies(); ++s)
        shared += small.lambda[static_cast<std::size_t>(s)].col(0);
      shared /= static_cast<double>(small.n_studies());
      promoted.phi << small.phi, shared;
      for (int s = 0; s < small.n_studies(); ++s) {
        const auto& lam = small.lambda[static_cast<std::size_t>(s)];
        promoted.lambda.push_back(lam.rightCols(lam.cols() - 1));
        promoted.psi.push_back(small.psi[static_cast<std::size_t>(s)]);
      }
      FitResult refit = fit_from(std::move(promoted), data, big_dims, config);
      if (refit.final_loglik > fits[i + 1].final_loglik) fits[i + 1] = std::move(refit);
    }

    // then jittered restarts around the best point found so far
    for (std::uint64_t attempt = 1; attempt <= 2; ++attempt) {
      Rng rng = make_rng(mix_seed(
          config.seed,
          0x5eed00 + static_cast<std::uint64_t>(candidates[i + 1]) * 16 + attempt));
      MsfaParams start = fits[i + 1].params;
      double rms = std::sqrt((start.phi.squaredNorm() +
                              [&] {
                                double t = 0;
                                for (const auto& l : start.lambda) t += l.squaredNorm();
                                return t;
                              }()) /
                             std::max<double>(1.0, p * big_dims.max_total()));
      std::normal_distribution<double> noise(0.0, 0.5 * std::max(rms, 0.2));
      for (int c = 0; c < start.phi.cols(); ++c)
        for (int r = 0; r < p; ++r) start.phi(r, c) += noise(rng);
      for (auto& lam : start.lambda)
        for (int c = 0; c < lam.cols(); ++c)
          for (int r = 0; r < p; ++r) lam(r, c) += noise(rng);
      FitResult refit = fit_from(std::move(start), data, big_dims, config);
      if (refit.final_loglik > fits[i + 1].final_loglik) fits[i + 1] = std::move(refit);
    }
    if (lrt(fits[i], fits[i + 1]).p_value < 0.05) break;
  }

  // nestedness repair: at equal T_s the smaller-K model has more free
  // parameters, so its likelihood must not fall below the larger-K one;
  // restart it from the larger-K fit's embedding if the optimizer slipped
  for (std::size_t i = candidates.size(); i-- > 1;) {
    FitResult& small = fits[i - 1];  // smaller K, more params
    const FitResult& big = fits[i];
    if (candidates[i] != candidates[i - 1] + 1) continue;
    if (small.final_loglik >= big.final_loglik - 1e-4) continue;
    MsfaParams embedded = big.params;
    const int k_small = candidates[i - 1];
    // move the last common column into the first specific column of each study
    Matrix phi = embedded.phi.leftCols(k_small);
    for (int s = 0; s < embedded.n_studies(); ++s) {
      const auto& old_lam = embedded.lambda[static_cast<std::size_t>(s)];
      Matrix lam(old_lam.rows(), old_lam.cols() + 1);
      lam.col(0) = embedded.phi.col(k_small);
      lam.rightCols(old_lam.cols()) = old_lam;
      embedded.lambda[static_cast<std::size_t>(s)] = lam;
    }
    embedded.phi = phi;
    FitResult restarted = fit_from(std::move(embedded), data, small.dims, config);
    if (restarted.final_loglik > small.final_loglik) small = std::move(restarted);
  }

  SelectionReport report;
  report.candidate_k = candidates;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    CandidateSummary c;
    c.k = candidates[i];
    c.loglik = fits[i].final_loglik;
    c.n_free_params = fits[i].n_free_params;
    c.aic = fits[i].aic;
    c.bic = fits[i].bic;
    c.converged = fits[i].converged;
    if (i > 0 && candidates[i] == candidates[i - 1] + 1)
      c.lrt_vs_prev = lrt(fits[i - 1], fits[i]);
    report.candidates.push_back(c);
  }

  auto argmin = [&](auto value) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < fits.size(); ++i)
      if (value(fits[i]) < value(fits[best]) - 1e-9) best = i;  // ties keep smallest K
    return candidates[best];
  };
  report.chosen_k_aic = argmin([](const FitResult& f) { return f.aic; });
  report.chosen_k_bic = argmin([](const FitResult& f) { return f.bic; });

  // scan up: while forcing one more shared column survives the LRT, advance
  report.chosen_k_lrt = candidates.back();
  for (std::size_t i = 0; i + 1 < candidates.size(); ++i) {
    if (candidates[i + 1] != candidates[i] + 1) {
      report.chosen_k_lrt = candidates[i];
      break;
    }
    const LrtResult r = lrt(fits[i], fits[i + 1]);
    if (r.p_value < 0.05) {
      report.chosen_k_lrt = candidates[i];
      break;
    }
  }

  report.note =
      "With T_s fixed, decreasing K frees additional study-specific loading "
      "entries, so smaller-K models carry more parameters; BIC's heavier "
      "complexity penalty therefore favors large K.";
  if (fits_out) *fits_out = std::move(fits);
  return report;
}

}  // namespace msfa
