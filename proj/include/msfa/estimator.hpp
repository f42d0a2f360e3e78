#pragma once

#include <vector>

#include "msfa/types.hpp"

namespace msfa {

// Per-study posterior moment sums for the stacked latent vector z = (f, l):
//   s1[s] = sum_i x_is E[z_is | x_is]^T              (P x T_s)
//   s2[s] = sum_i E[z_is z_is^T | x_is]              (T_s x T_s)
// Block views split columns/rows into the common (first K) and specific parts.
struct EStepStats {
  std::vector<Matrix> s1;
  std::vector<Matrix> s2;
  std::vector<int> study_sizes;
  int n_common = 0;  // K, for the block partitions

  Matrix s1_f(int s) const { return s1[static_cast<std::size_t>(s)].leftCols(n_common); }
  Matrix s1_l(int s) const {
    const auto& m = s1[static_cast<std::size_t>(s)];
    return m.rightCols(m.cols() - n_common);
  }
  Matrix s2_ff(int s) const {
    return s2[static_cast<std::size_t>(s)].topLeftCorner(n_common, n_common);
  }
  Matrix s2_fl(int s) const {
    const auto& m = s2[static_cast<std::size_t>(s)];
    return m.topRightCorner(n_common, m.cols() - n_common);
  }
  Matrix s2_ll(int s) const {
    const auto& m = s2[static_cast<std::size_t>(s)];
    return m.bottomRightCorner(m.rows() - n_common, m.cols() - n_common);
  }
};

EStepStats compute_estep_stats(const MsfaParams& params, const StudyDataset& data);
EStepStats compute_estep_stats(const MsfaParams& params,
                               const std::vector<Matrix>& sample_cov,
                               const std::vector<int>& study_sizes);

// Expected complete-data log-likelihood given fixed E-step statistics
// (latent prior terms and 2pi constants dropped); each CM step must not
// decrease this.
double expected_complete_loglik(const MsfaParams& params, const EStepStats& stats,
                                const std::vector<Matrix>& sample_cov);

// Row-wise conditional-maximization steps. Free entries are solved over the
// reduced system restricted to the mask; masked entries stay exactly zero.
// n_regularized counts ridge fallbacks for near-singular reduced systems.
Matrix cm_update_phi(const EStepStats& stats, const MsfaParams& params,
                     const ConstraintMasks& masks, int* n_regularized = nullptr);
Matrix cm_update_lambda(const EStepStats& stats, const MsfaParams& params,
                        const ConstraintMasks& masks, int s,
                        int* n_regularized = nullptr);
Vector cm_update_psi(const EStepStats& stats, const MsfaParams& params,
                     const std::vector<Matrix>& sample_cov, int s, double psi_floor);

// Stacked-PCA start for Phi, loose per-study FA start for Lambda_s / Psi_s,
// then projection onto the triangular masks. Deterministic given seed.
MsfaParams init_params(const StudyDataset& data, const FactorDims& dims,
                       std::uint64_t seed);

// ECM fit from an explicit starting point.
FitResult fit_from(MsfaParams start, const StudyDataset& data, const FactorDims& dims,
                   const FitConfig& config);

// Full ECM maximum-likelihood fit: init_params followed by fit_from.
FitResult fit_msfa(const StudyDataset& data, const FactorDims& dims,
                   const FitConfig& config);

// Single-study FA with lower-triangular loadings: the S=1, K=0 special case
// of fit_msfa run through the identical machinery.
FitResult fit_fa(const Matrix& study, int t, const FitConfig& config);

}  // namespace msfa
