#pragma once

#include <string>
#include <vector>

#include "msfa/types.hpp"

namespace msfa {

// Sigma_s = Phi Phi^T + Lambda_s Lambda_s^T + Psi_s.
Matrix assemble_sigma(const MsfaParams& params, int s);

// l(theta) = sum_s { -(n_s/2) log|Sigma_s| - (n_s/2) tr(Sigma_s^-1 C_s) }
// with C_s = X_s^T X_s / n_s. The additive -(n_s P / 2) log 2pi constant is
// omitted; reported values differ from the full Gaussian log-density by
// sum_s n_s P log(2pi) / 2.
double log_likelihood(const MsfaParams& params, const StudyDataset& data);

// Same objective evaluated from precomputed sample covariances.
double log_likelihood(const MsfaParams& params, const std::vector<Matrix>& sample_cov,
                      const std::vector<int>& study_sizes);

// Per-study ML sample covariance X^T X / n (data must be centered).
std::vector<Matrix> sample_covariances(const StudyDataset& data);

// Free parameters under the triangular masks:
// q = [PK - K(K-1)/2] + sum_s [P J_s - K J_s - J_s(J_s-1)/2] + S P.
// Throws DimsError naming the violating study when dims are infeasible.
int free_param_count(const FactorDims& dims, int p);

struct StudyFeasibility {
  int study = 0;
  bool sigma_param_ok = false;   // P(K+J_s) + P - T_s(T_s-1)/2 <= P(P+1)/2
  bool sample_size_ok = false;   // P < n_s
  long long sigma_params = 0;
  long long sigma_entries = 0;
  std::string reason;
};

struct FeasibilityReport {
  std::vector<StudyFeasibility> studies;
  bool ok = false;
};

FeasibilityReport validate_dims(const FactorDims& dims, int p,
                                const std::vector<int>& study_sizes);

inline FeasibilityReport validate_dims(const FactorDims& dims, const StudyDataset& data) {
  std::vector<int> n;
  for (int s = 0; s < data.n_studies(); ++s) n.push_back(data.n_obs(s));
  return validate_dims(dims, data.n_vars(), n);
}

// Feasibility of the parameter-count inequality alone (no sample sizes).
void require_feasible(const FactorDims& dims, int p);

}  // namespace msfa
