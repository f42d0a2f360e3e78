#include "msfa/model.hpp"

#include <Eigen/Cholesky>
#include <cmath>

#include "msfa/error.hpp"

namespace msfa {

Matrix assemble_sigma(const MsfaParams& params, int s) {
  if (s < 0 || s >= params.n_studies())
    throw IndexError("study index " + std::to_string(s + 1) + " out of range 1.." +
                     std::to_string(params.n_studies()));
  const auto& lam = params.lambda[static_cast<std::size_t>(s)];
  Matrix sigma = params.phi * params.phi.transpose() + lam * lam.transpose();
  sigma.diagonal() += params.psi[static_cast<std::size_t>(s)];
  // symmetrize away rounding asymmetry from the rank-updates
  sigma = ((sigma + sigma.transpose()) * 0.5).eval();
  return sigma;
}

std::vector<Matrix> sample_covariances(const StudyDataset& data) {
  std::vector<Matrix> c;
  c.reserve(data.studies.size());
  for (const auto& x : data.studies)
    c.push_back(x.transpose() * x / static_cast<double>(x.rows()));
  return c;
}

double log_likelihood(const MsfaParams& params, const std::vector<Matrix>& sample_cov,
                      const std::vector<int>& study_sizes) {
  double ll = 0.0;
  for (std::size_t s = 0; s < sample_cov.size(); ++s) {
    const Matrix sigma = assemble_sigma(params, static_cast<int>(s));
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success)
      throw NumericError("Sigma is not positive definite in study " + std::to_string(s + 1));
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double tr = llt.solve(sample_cov[s]).trace();
    ll += -0.5 * study_sizes[s] * (logdet + tr);
  }
  return ll;
}

double log_likelihood(const MsfaParams& params, const StudyDataset& data) {
  if (!data.centered) throw DataError("log_likelihood requires centered data");
  data.validate();
  std::vector<int> n;
  for (int s = 0; s < data.n_studies(); ++s) n.push_back(data.n_obs(s));
  return log_likelihood(params, sample_covariances(data), n);
}

namespace {

long long sigma_param_count(int p, int t) {
  return static_cast<long long>(p) * t + p - static_cast<long long>(t) * (t - 1) / 2;
}

}  // namespace

FeasibilityReport validate_dims(const FactorDims& dims, int p,
                                const std::vector<int>& study_sizes) {
  FeasibilityReport report;
  report.ok = true;
  const long long sigma_entries = static_cast<long long>(p) * (p + 1) / 2;
  for (int s = 0; s < dims.n_studies(); ++s) {
    StudyFeasibility f;
    f.study = s + 1;
    const int t = dims.total(s);
    f.sigma_entries = sigma_entries;
    f.sigma_params = sigma_param_count(p, t);
    f.sigma_param_ok = t >= 0 && f.sigma_params <= sigma_entries;
    const int n_s = s < static_cast<int>(study_sizes.size())
                        ? study_sizes[static_cast<std::size_t>(s)]
                        : 0;
    f.sample_size_ok = p < n_s;
    if (t < 0) f.reason = "T_s < 0";
    else if (!f.sigma_param_ok) f.reason = "parameter count exceeds Sigma entries";
    else if (!f.sample_size_ok) f.reason = "P >= min n_s";
    report.ok = report.ok && f.sigma_param_ok && f.sample_size_ok;
    report.studies.push_back(std::move(f));
  }
  return report;
}

void require_feasible(const FactorDims& dims, int p) {
  const long long sigma_entries = static_cast<long long>(p) * (p + 1) / 2;
  for (int s = 0; s < dims.n_studies(); ++s) {
    const int t = dims.total(s);
    if (t < 0)
      throw DimsError("study " + std::to_string(s + 1) + " has T_s - K < 0");
    if (sigma_param_count(p, t) > sigma_entries)
      throw DimsError("infeasible dims in study " + std::to_string(s + 1) + ": " +
                      std::to_string(sigma_param_count(p, t)) + " Sigma parameters > " +
                      std::to_string(sigma_entries) + " available entries");
  }
}

int free_param_count(const FactorDims& dims, int p) {
  require_feasible(dims, p);
  const int k = dims.common;
  long long q = static_cast<long long>(p) * k - static_cast<long long>(k) * (k - 1) / 2;
  for (int s = 0; s < dims.n_studies(); ++s) {
    const long long j = dims.specific[static_cast<std::size_t>(s)];
    q += p * j - static_cast<long long>(k) * j - j * (j - 1) / 2;
  }
  q += static_cast<long long>(dims.n_studies()) * p;
  return static_cast<int>(q);
}

}  // namespace msfa
