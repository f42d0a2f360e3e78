#pragma once

#include <string>
#include <utility>
#include <vector>

#include "msfa/types.hpp"

namespace msfa {

// Posterior factor-score means (f_hat, l_hat) = Omega_s^T Sigma_s^-1 x split
// into common/specific blocks. x must be centered with study s training means.
std::pair<Vector, Vector> posterior_scores(const MsfaParams& params, const Vector& x,
                                           int s);

// x_hat = Phi f_hat + Lambda_s l_hat.
Vector reconstruct(const MsfaParams& params, const Vector& f_scores,
                   const Vector& l_scores, int s);

// RV = tr(A A^T B B^T) / sqrt(tr((A A^T)^2) tr((B B^T)^2)), in [0, 1].
double rv_coefficient(const Matrix& a, const Matrix& b);

struct LoadingEdge {
  int col_a = 0;  // 1-based
  int col_b = 0;
  double correlation = 0.0;
};

struct LoadingCorrelations {
  Matrix correlations;            // a x b Pearson correlations
  std::vector<LoadingEdge> edges; // |corr| >= threshold
};

LoadingCorrelations loading_correlations(const Matrix& la, const Matrix& lb,
                                         double threshold);

struct Alignment {
  std::vector<int> permutation;  // permutation[j] = source column matched to ref col j
  std::vector<int> signs;        // +1 / -1 per ref column
  Matrix aligned;                // signs[j] * est.col(permutation[j]) in slot j
  std::vector<double> correlations;  // matched |correlation| per ref column
};

// Greedy matching on absolute column correlations, largest first, then signs
// chosen so each matched correlation is positive.
Alignment align_loadings(const Matrix& est, const Matrix& ref);

struct MethodMse {
  double mse = 0.0;
  std::vector<double> per_study;       // SSE_s / n_test_s
  std::vector<double> sse_per_study;
  std::vector<int> test_counts;
};

struct CvReport {
  MethodMse msfa;
  MethodMse fa_merged;
  MethodMse fa_separate;
  double split_fraction = 0.0;  // training fraction
  int n_folds = 0;
  std::uint64_t seed = 0;
  int merged_t = 0;             // latent dimension used by the merged-FA baseline
  double rel_diff_merged = 0.0;    // (MSE_merged - MSE_msfa) / MSE_merged
  double rel_diff_separate = 0.0;
};

// Monte Carlo cross-validation: per fold, a per-study random train/test split
// (split_fraction = training share); MSFA, merged FA (stacked studies,
// T = K + max_s J_s unless merged_t >= 0), and separate per-study FA are fit
// on the training part; test rows are centered with training means only.
CvReport cv_mse(const StudyDataset& data, const FactorDims& dims, double split_fraction,
                int n_folds, const FitConfig& config, int merged_t = -1);

}  // namespace msfa
