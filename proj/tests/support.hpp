#pragma once

// Test-only oracles kept independent of the library's implementation paths.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "msfa/model.hpp"
#include "msfa/rng.hpp"
#include "msfa/types.hpp"

namespace msfa::testing {

// Naive triple-loop evaluation of Phi Phi^T + Lambda_s Lambda_s^T + Psi_s.
inline Matrix sigma_triple_loop(const MsfaParams& params, int s) {
  const int p = params.n_vars();
  const auto& lam = params.lambda[static_cast<std::size_t>(s)];
  Matrix sigma = Matrix::Zero(p, p);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) {
      double v = 0.0;
      for (int k = 0; k < params.phi.cols(); ++k) v += params.phi(a, k) * params.phi(b, k);
      for (int j = 0; j < lam.cols(); ++j) v += lam(a, j) * lam(b, j);
      if (a == b) v += params.psi[static_cast<std::size_t>(s)](a);
      sigma(a, b) = v;
    }
  return sigma;
}

// Per-observation multivariate-normal log-density sum, constant included.
inline double density_sum_loglik(const MsfaParams& params, const StudyDataset& data) {
  double ll = 0.0;
  for (int s = 0; s < data.n_studies(); ++s) {
    const Matrix sigma = sigma_triple_loop(params, s);
    const int p = static_cast<int>(sigma.rows());
    Eigen::LLT<Matrix> llt(sigma);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const auto& x = data.studies[static_cast<std::size_t>(s)];
    for (int i = 0; i < x.rows(); ++i) {
      const Vector xi = x.row(i).transpose();
      const double quad = xi.dot(llt.solve(xi));
      ll += -0.5 * (p * std::log(2.0 * M_PI) + logdet + quad);
    }
  }
  return ll;
}

// Joint-Gaussian conditioning oracle: build the (P + T)-dimensional covariance
// of (x, z) explicitly and condition numerically.
struct ConditionalMoments {
  Vector mean;  // E[z | x]
  Matrix cov;   // Cov[z | x]
};

inline ConditionalMoments condition_on_x(const MsfaParams& params, int s,
                                         const Vector& x) {
  const Matrix omega = params.omega(s);
  const int p = static_cast<int>(omega.rows());
  const int t = static_cast<int>(omega.cols());
  Matrix joint = Matrix::Zero(p + t, p + t);
  joint.topLeftCorner(p, p) = sigma_triple_loop(params, s);
  joint.topRightCorner(p, t) = omega;
  joint.bottomLeftCorner(t, p) = omega.transpose();
  joint.bottomRightCorner(t, t) = Matrix::Identity(t, t);
  const Matrix sigma_xx_inv = joint.topLeftCorner(p, p).inverse();
  ConditionalMoments m;
  m.mean = joint.bottomLeftCorner(t, p) * sigma_xx_inv * x;
  m.cov = joint.bottomRightCorner(t, t) -
          joint.bottomLeftCorner(t, p) * sigma_xx_inv * joint.topRightCorner(p, t);
  return m;
}

// E-step sums built observation-by-observation from the conditioning oracle.
inline void estep_oracle(const MsfaParams& params, const StudyDataset& data, int s,
                         Matrix& s1, Matrix& s2) {
  const auto& x = data.studies[static_cast<std::size_t>(s)];
  const int t = static_cast<int>(params.omega(s).cols());
  s1 = Matrix::Zero(x.cols(), t);
  s2 = Matrix::Zero(t, t);
  for (int i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    const ConditionalMoments m = condition_on_x(params, s, xi);
    s1 += xi * m.mean.transpose();
    s2 += m.cov + m.mean * m.mean.transpose();
  }
}

// Brute-force free-entry count by enumerating the masks.
inline int mask_count_oracle(const FactorDims& dims, int p) {
  const ConstraintMasks masks = ConstraintMasks::build(p, dims);
  int q = 0;
  for (int c = 0; c < masks.phi.cols(); ++c)
    for (int r = 0; r < masks.phi.rows(); ++r)
      if (masks.phi(r, c)) ++q;
  for (const auto& lm : masks.lambda)
    for (int c = 0; c < lm.cols(); ++c)
      for (int r = 0; r < lm.rows(); ++r)
        if (lm(r, c)) ++q;
  q += dims.n_studies() * p;
  return q;
}

// Random valid parameters with the triangular masks applied.
inline MsfaParams random_params(int p, const FactorDims& dims, std::uint64_t seed,
                                double loading_sd = 1.0) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, loading_sd);
  std::uniform_real_distribution<double> unif(0.3, 1.5);
  const ConstraintMasks masks = ConstraintMasks::build(p, dims);
  MsfaParams params;
  params.phi = Matrix::Zero(p, dims.common);
  for (int c = 0; c < dims.common; ++c)
    for (int r = 0; r < p; ++r)
      if (masks.phi(r, c)) params.phi(r, c) = normal(rng);
  for (int s = 0; s < dims.n_studies(); ++s) {
    const int j = dims.specific[static_cast<std::size_t>(s)];
    Matrix lam = Matrix::Zero(p, j);
    for (int c = 0; c < j; ++c)
      for (int r = 0; r < p; ++r)
        if (masks.lambda[static_cast<std::size_t>(s)](r, c)) lam(r, c) = normal(rng);
    params.lambda.push_back(std::move(lam));
    Vector psi(p);
    for (int r = 0; r < p; ++r) psi(r) = unif(rng);
    params.psi.push_back(std::move(psi));
  }
  return params;
}

// Random centered dataset drawn from N(0, I)-ish noise (not model-distributed).
inline StudyDataset random_dataset(int p, const std::vector<int>& sizes,
                                   std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  StudyDataset data;
  for (int n : sizes) {
    Matrix x(n, p);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < p; ++c) x(i, c) = normal(rng);
    data.studies.push_back(std::move(x));
  }
  data.center();
  return data;
}

// Central finite-difference gradient of the log-likelihood over free entries.
// Returns the maximum absolute component.
inline double max_loglik_gradient(const MsfaParams& params, const StudyDataset& data,
                                  double step = 1e-5) {
  const ConstraintMasks masks = ConstraintMasks::build(params.n_vars(), params.dims());
  MsfaParams work = params;
  double max_grad = 0.0;
  auto probe = [&](double* entry) {
    const double saved = *entry;
    *entry = saved + step;
    const double up = log_likelihood(work, data);
    *entry = saved - step;
    const double down = log_likelihood(work, data);
    *entry = saved;
    max_grad = std::max(max_grad, std::abs((up - down) / (2.0 * step)));
  };
  for (int c = 0; c < work.phi.cols(); ++c)
    for (int r = 0; r < work.phi.rows(); ++r)
      if (masks.phi(r, c)) probe(&work.phi(r, c));
  for (int s = 0; s < work.n_studies(); ++s) {
    auto& lam = work.lambda[static_cast<std::size_t>(s)];
    for (int c = 0; c < lam.cols(); ++c)
      for (int r = 0; r < lam.rows(); ++r)
        if (masks.lambda[static_cast<std::size_t>(s)](r, c)) probe(&lam(r, c));
    auto& psi = work.psi[static_cast<std::size_t>(s)];
    for (int r = 0; r < psi.size(); ++r) probe(&psi(r));
  }
  return max_grad;
}

// 1-D golden-section minimizer on [lo, hi].
template <class F>
double golden_section(F f, double lo, double hi, double tol = 1e-10) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  while (b - a > tol) {
    if (f(c) < f(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - inv_phi * (b - a);
    d = a + inv_phi * (b - a);
  }
  return 0.5 * (a + b);
}

}  // namespace msfa::testing
