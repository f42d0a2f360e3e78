#include "msfa/types.hpp"

#include <algorithm>
#include <cmath>

#include "msfa/error.hpp"

namespace msfa {

void StudyDataset::center() {
  column_means.clear();
  for (auto& x : studies) {
    Vector mu = x.colwise().mean();
    x.rowwise() -= mu.transpose();
    column_means.push_back(mu);
  }
  centered = true;
}

void StudyDataset::validate() const {
  if (studies.empty()) throw DataError("dataset has no studies");
  const auto p = studies[0].cols();
  if (!variable_names.empty() && static_cast<Eigen::Index>(variable_names.size()) != p)
    throw DataError("variable_names length does not match column count");
  for (std::size_t s = 0; s < studies.size(); ++s) {
    const auto& x = studies[s];
    if (x.cols() != p)
      throw DataError("study " + std::to_string(s + 1) + " has " +
                      std::to_string(x.cols()) + " columns, expected " + std::to_string(p));
    if (x.rows() < 2)
      throw DataError("study " + std::to_string(s + 1) + " has fewer than 2 observations");
    if (centered) {
      const double n_s = static_cast<double>(x.rows());
      Vector colsum = x.colwise().sum();
      if (colsum.cwiseAbs().maxCoeff() > 1e-10 * n_s)
        throw DataError("study " + std::to_string(s + 1) +
                        " is flagged centered but a column sum exceeds 1e-10*n_s");
    }
  }
}

int FactorDims::max_total() const {
  int m = 0;
  for (int s = 0; s < n_studies(); ++s) m = std::max(m, total(s));
  return m;
}

ConstraintMasks ConstraintMasks::build(int p, const FactorDims& dims) {
  ConstraintMasks m;
  const int k = dims.common;
  m.phi = BoolMatrix::Constant(p, k, false);
  for (int col = 0; col < k; ++col)
    for (int row = col; row < p; ++row) m.phi(row, col) = true;
  for (int s = 0; s < dims.n_studies(); ++s) {
    const int j = dims.specific[static_cast<std::size_t>(s)];
    BoolMatrix lm = BoolMatrix::Constant(p, j, false);
    // overall column index in Omega_s is k + col; free iff k + col <= row
    for (int col = 0; col < j; ++col)
      for (int row = k + col; row < p; ++row) lm(row, col) = true;
    m.lambda.push_back(std::move(lm));
  }
  return m;
}

FactorDims MsfaParams::dims() const {
  FactorDims d;
  d.common = static_cast<int>(phi.cols());
  for (const auto& l : lambda) d.specific.push_back(static_cast<int>(l.cols()));
  return d;
}

Matrix MsfaParams::omega(int s) const {
  const auto& lam = lambda[static_cast<std::size_t>(s)];
  Matrix w(phi.rows(), phi.cols() + lam.cols());
  w << phi, lam;
  return w;
}

void MsfaParams::project(const ConstraintMasks& masks) {
  for (int c = 0; c < phi.cols(); ++c)
    for (int r = 0; r < phi.rows(); ++r)
      if (!masks.phi(r, c)) phi(r, c) = 0.0;
  for (std::size_t s = 0; s < lambda.size(); ++s) {
    auto& l = lambda[s];
    const auto& lm = masks.lambda[s];
    for (int c = 0; c < l.cols(); ++c)
      for (int r = 0; r < l.rows(); ++r)
        if (!lm(r, c)) l(r, c) = 0.0;
  }
}

void MsfaParams::validate(double psi_floor) const {
  const int p = n_vars();
  if (lambda.size() != psi.size()) throw DimsError("lambda/psi study counts differ");
  const ConstraintMasks masks = ConstraintMasks::build(p, dims());
  for (int c = 0; c < phi.cols(); ++c)
    for (int r = 0; r < phi.rows(); ++r)
      if (!masks.phi(r, c) && phi(r, c) != 0.0)
        throw DimsError("phi violates the triangular mask at (" + std::to_string(r) +
                        "," + std::to_string(c) + ")");
  for (std::size_t s = 0; s < lambda.size(); ++s) {
    if (lambda[s].rows() != p) throw DimsError("lambda row count mismatch in study " +
                                               std::to_string(s + 1));
    for (int c = 0; c < lambda[s].cols(); ++c)
      for (int r = 0; r < lambda[s].rows(); ++r)
        if (!masks.lambda[s](r, c) && lambda[s](r, c) != 0.0)
          throw DimsError("lambda_" + std::to_string(s + 1) +
                          " violates the triangular mask");
    if (psi[s].size() != p) throw DimsError("psi length mismatch in study " +
                                            std::to_string(s + 1));
    if (psi[s].minCoeff() < psi_floor)
      throw DimsError("psi entry below floor in study " + std::to_string(s + 1));
  }
}

}  // namespace msfa
