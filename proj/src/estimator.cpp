#include "msfa/estimator.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <string>

#include "msfa/error.hpp"
#include "msfa/model.hpp"
#include "msfa/rng.hpp"

namespace msfa {

namespace {

// SPD solve with a trace-scaled ridge fallback for near-singular systems.
Vector solve_spd(const Matrix& m, const Vector& b, int* n_regularized) {
  if (m.rows() == 0) return Vector(0);
  Eigen::LDLT<Matrix> ldlt(m);
  Vector x = ldlt.solve(b);
  if (ldlt.info() == Eigen::Success && x.allFinite() &&
      (m * x - b).norm() <= 1e-8 * (1.0 + b.norm()))
    return x;
  if (n_regularized) ++(*n_regularized);
  double ridge = 1e-10 * (m.trace() / static_cast<double>(m.rows()) + 1.0);
  for (int attempt = 0; attempt < 8; ++attempt) {
    Matrix mr = m;
    mr.diagonal().array() += ridge;
    Vector xr = Eigen::LDLT<Matrix>(mr).solve(b);
    if (xr.allFinite()) return xr;
    ridge *= 100.0;
  }
  throw NumericError("CM-step linear system unsolvable even with regularization");
}

}  // namespace

EStepStats compute_estep_stats(const MsfaParams& params,
                               const std::vector<Matrix>& sample_cov,
                               const std::vector<int>& study_sizes) {
  EStepStats stats;
  stats.n_common = static_cast<int>(params.phi.cols());
  stats.study_sizes = study_sizes;
  for (std::size_t s = 0; s < sample_cov.size(); ++s) {
    const double n_s = static_cast<double>(study_sizes[s]);
    const Matrix omega = params.omega(static_cast<int>(s));
    const int t = static_cast<int>(omega.cols());
    const Matrix sigma = assemble_sigma(params, static_cast<int>(s));
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success)
      throw NumericError("Sigma is not positive definite in study " + std::to_string(s + 1));
    const Matrix delta = llt.solve(omega).transpose();         // T x P
    const Matrix v = Matrix::Identity(t, t) - delta * omega;   // posterior covariance
    const Matrix nc = n_s * sample_cov[s];
    Matrix s1 = nc * delta.transpose();
    Matrix s2 = n_s * v + delta * nc * delta.transpose();
    s2 = ((s2 + s2.transpose()) * 0.5).eval();
    stats.s1.push_back(std::move(s1));
    stats.s2.push_back(std::move(s2));
  }
  return stats;
}

EStepStats compute_estep_stats(const MsfaParams& params, const StudyDataset& data) {
  if (!data.centered) throw DataError("compute_estep_stats requires centered data");
  std::vector<int> n;
  for (int s = 0; s < data.n_studies(); ++s) n.push_back(data.n_obs(s));
  return compute_estep_stats(params, sample_covariances(data), n);
}

double expected_complete_loglik(const MsfaParams& params, const EStepStats& stats,
                                const std::vector<Matrix>& sample_cov) {
  const int p = params.n_vars();
  double q = 0.0;
  for (int s = 0; s < params.n_studies(); ++s) {
    const double n_s = static_cast<double>(stats.study_sizes[static_cast<std::size_t>(s)]);
    const Matrix omega = params.omega(s);
    const auto& s1 = stats.s1[static_cast<std::size_t>(s)];
    const auto& s2 = stats.s2[static_cast<std::size_t>(s)];
    const auto& psi = params.psi[static_cast<std::size_t>(s)];
    for (int row = 0; row < p; ++row) {
      const Vector w = omega.row(row).transpose();
      const double quad = n_s * sample_cov[static_cast<std::size_t>(s)](row, row) -
                          2.0 * w.dot(s1.row(row).transpose()) + w.dot(s2 * w);
      q += -0.5 * n_s * std::log(psi(row)) - 0.5 * quad / psi(row);
    }
  }
  return q;
}

Matrix cm_update_phi(const EStepStats& stats, const MsfaParams& params,
                     const ConstraintMasks& masks, int* n_regularized) {
  const int p = params.n_vars();
  const int k = static_cast<int>(params.phi.cols());
  Matrix phi = Matrix::Zero(p, k);
  if (k == 0) return phi;
  const int n_studies = params.n_studies();
  for (int row = 0; row < p; ++row) {
    // free columns form a contiguous prefix of the row under the mask
    int n_free = 0;
    while (n_free < k && masks.phi(row, n_free)) ++n_free;
    if (n_free == 0) continue;
    Matrix m = Matrix::Zero(k, k);
    Vector b = Vector::Zero(k);
    for (int s = 0; s < n_studies; ++s) {
      const double inv_psi = 1.0 / params.psi[static_cast<std::size_t>(s)](row);
      m += inv_psi * stats.s2_ff(s);
      Vector rhs = stats.s1_f(s).row(row).transpose();
      const auto& lam = params.lambda[static_cast<std::size_t>(s)];
      if (lam.cols() > 0) rhs -= stats.s2_fl(s) * lam.row(row).transpose();
      b += inv_psi * rhs;
    }
    phi.row(row).head(n_free) =
        solve_spd(m.topLeftCorner(n_free, n_free), b.head(n_free), n_regularized)
            .transpose();
  }
  return phi;
}

Matrix cm_update_lambda(const EStepStats& stats, const MsfaParams& params,
                        const ConstraintMasks& masks, int s, int* n_regularized) {
  const int p = params.n_vars();
  const int k = static_cast<int>(params.phi.cols());
  const int j = static_cast<int>(params.lambda[static_cast<std::size_t>(s)].cols());
  Matrix lam = Matrix::Zero(p, j);
  if (j == 0) return lam;
  const Matrix a_ll = stats.s2_ll(s);
  const Matrix a_lf = stats.s2_fl(s).transpose();
  const auto& mask = masks.lambda[static_cast<std::size_t>(s)];
  for (int row = 0; row < p; ++row) {
    int n_free = 0;
    while (n_free < j && mask(row, n_free)) ++n_free;
    if (n_free == 0) continue;
    Vector b = stats.s1_l(s).row(row).transpose();
    if (k > 0) b -= a_lf * params.phi.row(row).transpose();
    lam.row(row).head(n_free) =
        solve_spd(a_ll.topLeftCorner(n_free, n_free), b.head(n_free), n_regularized)
            .transpose();
  }
  return lam;
}

Vector cm_update_psi(const EStepStats& stats, const MsfaParams& params,
                     const std::vector<Matrix>& sample_cov, int s, double psi_floor) {
  const int p = params.n_vars();
  const double n_s = static_cast<double>(stats.study_sizes[static_cast<std::size_t>(s)]);
  const Matrix omega = params.omega(s);
  const auto& s1 = stats.s1[static_cast<std::size_t>(s)];
  const auto& s2 = stats.s2[static_cast<std::size_t>(s)];
  Vector psi(p);
  for (int row = 0; row < p; ++row) {
    const Vector w = omega.row(row).transpose();
    double v = sample_cov[static_cast<std::size_t>(s)](row, row);
    if (omega.cols() > 0)
      v += (-2.0 * w.dot(s1.row(row).transpose()) + w.dot(s2 * w)) / n_s;
    psi(row) = std::max(v, psi_floor);
  }
  return psi;
}

namespace {

// First n_comps right singular directions scaled by singular value / sqrt(n);
// columns whose singular value underflows get small seeded normal fill-in.
Matrix pca_loading_start(const Matrix& x, int n_comps, Rng& rng) {
  const int p = static_cast<int>(x.cols());
  Matrix loadings = Matrix::Zero(p, n_comps);
  if (n_comps == 0) return loadings;
  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double n = static_cast<double>(x.rows());
  const double tiny = 1e-12 * (sv.size() > 0 ? sv(0) : 1.0);
  std::normal_distribution<double> small(0.0, 0.1);
  for (int c = 0; c < n_comps; ++c) {
    if (c < sv.size() && sv(c) > tiny) {
      Vector col = svd.matrixV().col(c) * (sv(c) / std::sqrt(n));
      int imax = 0;
      col.cwiseAbs().maxCoeff(&imax);
      if (col(imax) < 0) col = -col;
      loadings.col(c) = col;
    } else {
      for (int row = 0; row < p; ++row) loadings(row, c) = small(rng);
    }
  }
  return loadings;
}

Vector psi_start(const Matrix& sample_cov, const Matrix& loadings, double psi_floor) {
  const int p = static_cast<int>(sample_cov.rows());
  Vector psi(p);
  for (int row = 0; row < p; ++row) {
    const double var = sample_cov(row, row);
    double v = var - loadings.row(row).squaredNorm();
    if (v < 1e-3 * std::max(var, 1.0)) v = std::max(psi_floor, 0.1 * var);
    psi(row) = std::max(v, psi_floor);
  }
  return psi;
}

}  // namespace

MsfaParams init_params(const StudyDataset& data, const FactorDims& dims,
                       std::uint64_t seed) {
  if (!data.centered) throw DataError("init_params requires centered data");
  data.validate();
  const int p = data.n_vars();
  require_feasible(dims, p);
  if (dims.n_studies() != data.n_studies())
    throw DimsError("dims cover " + std::to_string(dims.n_studies()) +
                    " studies but data has " + std::to_string(data.n_studies()));
  Rng rng = make_rng(mix_seed(seed, 0x1917));
  const ConstraintMasks masks = ConstraintMasks::build(p, dims);

  // stack all studies row-wise and take the leading PCA directions for Phi
  Matrix stacked(data.total_obs(), p);
  int offset = 0;
  for (const auto& x : data.studies) {
    stacked.middleRows(offset, static_cast<int>(x.rows())) = x;
    offset += static_cast<int>(x.rows());
  }
  MsfaParams params;
  params.phi = pca_loading_start(stacked, dims.common, rng);

  const std::vector<Matrix> cov = sample_covariances(data);
  FitConfig inner;  // loose per-study FA, it only seeds the main fit
  inner.tol = 1e-4;
  inner.max_iter = 200;
  for (int s = 0; s < data.n_studies(); ++s) {
    const int j = dims.specific[static_cast<std::size_t>(s)];
    const auto& x = data.studies[static_cast<std::size_t>(s)];
    if (j == 0) {
      params.lambda.emplace_back(p, 0);
      Vector psi = cov[static_cast<std::size_t>(s)].diagonal();
      params.psi.push_back(psi.cwiseMax(inner.psi_floor));
      continue;
    }
    MsfaParams fa_start;
    fa_start.phi = Matrix(p, 0);
    fa_start.lambda.push_back(pca_loading_start(x, j, rng));
    fa_start.psi.push_back(
        psi_start(cov[static_cast<std::size_t>(s)], fa_start.lambda[0], inner.psi_floor));
    FactorDims fa_dims;
    fa_dims.common = 0;
    fa_dims.specific = {j};
    ConstraintMasks fa_masks = ConstraintMasks::build(p, fa_dims);
    fa_start.project(fa_masks);
    StudyDataset one;
    one.studies.push_back(x);
    one.centered = true;
    one.column_means.push_back(Vector::Zero(p));
    FitResult fa = fit_from(std::move(fa_start), one, fa_dims, inner);
    params.lambda.push_back(std::move(fa.params.lambda[0]));
    params.psi.push_back(std::move(fa.params.psi[0]));
  }
  params.project(masks);
  // a fully masked-out or degenerate Phi column would stall the CM solves
  std::normal_distribution<double> small(0.0, 0.1);
  for (int c = 0; c < params.phi.cols(); ++c) {
    if (params.phi.col(c).norm() < 1e-12)
      for (int row = c; row < p; ++row) params.phi(row, c) = small(rng);
  }
  return params;
}

FitResult fit_from(MsfaParams start, const StudyDataset& data, const FactorDims& dims,
                   const FitConfig& config) {
  if (config.max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (config.tol <= 0) throw ConfigError("tol must be positive");
  if (!data.centered) throw DataError("fit requires centered data");
  data.validate();
  const int p = data.n_vars();
  require_feasible(dims, p);

  const ConstraintMasks masks = ConstraintMasks::build(p, dims);
  start.project(masks);
  for (auto& psi : start.psi) psi = psi.cwiseMax(config.psi_floor);

  const std::vector<Matrix> cov = sample_covariances(data);
  std::vector<int> n;
  for (int s = 0; s < data.n_studies(); ++s) n.push_back(data.n_obs(s));

  FitResult result;
  result.config = config;
  result.dims = dims;
  result.study_sizes = n;
  result.params = std::move(start);
  result.n_free_params = free_param_count(dims, p);

  double ll = log_likelihood(result.params, cov, n);
  result.loglik_trace.push_back(ll);

  for (int iter = 1; iter <= config.max_iter; ++iter) {
    try {
      EStepStats stats = compute_estep_stats(result.params, cov, n);
      result.params.phi =
          cm_update_phi(stats, result.params, masks, &result.n_regularized_solves);
      for (int s = 0; s < data.n_studies(); ++s)
        result.params.lambda[static_cast<std::size_t>(s)] = cm_update_lambda(
            stats, result.params, masks, s, &result.n_regularized_solves);
      for (int s = 0; s < data.n_studies(); ++s)
        result.params.psi[static_cast<std::size_t>(s)] =
            cm_update_psi(stats, result.params, cov, s, config.psi_floor);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (ECM iteration " +
                         std::to_string(iter) + ")");
    }
    const double ll_new = log_likelihood(result.params, cov, n);
    result.loglik_trace.push_back(ll_new);
    result.iterations = iter;
    if ((ll_new - ll) / (1.0 + std::abs(ll)) < config.tol) {
      result.converged = true;
      ll = ll_new;
      break;
    }
    ll = ll_new;
  }

  result.final_loglik = ll;
  result.aic = -2.0 * ll + 2.0 * result.n_free_params;
  result.bic = -2.0 * ll + result.n_free_params * std::log(static_cast<double>(result.total_obs()));
  if (!config.trace) {
    const double last = result.loglik_trace.back();
    result.loglik_trace = {result.loglik_trace.front(), last};
  }
  return result;
}

FitResult fit_msfa(const StudyDataset& data, const FactorDims& dims,
                   const FitConfig& config) {
  return fit_from(init_params(data, dims, config.seed), data, dims, config);
}

FitResult fit_fa(const Matrix& study, int t, const FitConfig& config) {
  StudyDataset one;
  one.studies.push_back(study);
  const double n_s = static_cast<double>(study.rows());
  Vector colsum = study.colwise().sum();
  if (colsum.size() > 0 && colsum.cwiseAbs().maxCoeff() <= 1e-10 * n_s) {
    one.centered = true;
    one.column_means.push_back(Vector::Zero(study.cols()));
  } else {
    one.center();
  }
  FactorDims dims;
  dims.common = 0;
  dims.specific = {t};
  return fit_msfa(one, dims, config);
}

}  // namespace msfa
