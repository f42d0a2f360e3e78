#pragma once

#include <string>
#include <vector>

#include "msfa/types.hpp"

namespace msfa {

// Number of sample-correlation eigenvalues exceeding, order statistic by
// order statistic, the given quantile over n_random same-shape standard
// normal datasets; counted consecutively from the largest eigenvalue down.
int horn_parallel_analysis(const Matrix& study, int n_random, double quantile,
                           std::uint64_t seed);

// aic = -2 l + 2 q, bic = -2 l + q log(sum_s n_s).
std::pair<double, double> information_criteria(double loglik, int n_free_params,
                                               int total_obs);

struct LrtResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};

// Likelihood-ratio test between two fits sharing data and T_s. With T_s
// fixed, the larger-K model has fewer free parameters and is the null; the
// statistic is 2(l_moreparams - l_other) with df = |q difference|.
LrtResult lrt(const FitResult& fit_a, const FitResult& fit_b);

struct CandidateSummary {
  int k = 0;
  double loglik = 0.0;
  int n_free_params = 0;
  double aic = 0.0;
  double bic = 0.0;
  bool converged = false;
  // test against the previous (K-1) candidate; df = 0 for the first
  LrtResult lrt_vs_prev;
};

struct SelectionReport {
  std::vector<int> candidate_k;
  std::vector<CandidateSummary> candidates;
  int chosen_k_aic = 0;
  int chosen_k_bic = 0;
  int chosen_k_lrt = 0;
  std::string note;
};

// Fits every feasible K in [k_range.lo, k_range.hi] with J_s = T_s - K.
// AIC/BIC choose the minimizer (ties within 1e-9 resolve to smallest K);
// the LRT scan moves up from the smallest K while the test of K against
// K+1 fails to reject at level 0.05, and stops at the first rejection.
SelectionReport select_k(const StudyDataset& data, const std::vector<int>& totals,
                         int k_lo, int k_hi, const FitConfig& config,
                         std::vector<FitResult>* fits_out = nullptr);

}  // namespace msfa
