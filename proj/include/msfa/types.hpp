#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace msfa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Multi-study data: one centered observation matrix per study, all sharing
// the same variable list (rows = subjects, columns = variables).
struct StudyDataset {
  std::vector<Matrix> studies;
  std::vector<std::string> variable_names;
  bool centered = false;
  std::vector<Vector> column_means;  // recorded at centering time, one per study

  int n_studies() const { return static_cast<int>(studies.size()); }
  int n_vars() const { return studies.empty() ? 0 : static_cast<int>(studies[0].cols()); }
  int n_obs(int s) const { return static_cast<int>(studies[static_cast<std::size_t>(s)].rows()); }
  int total_obs() const {
    int n = 0;
    for (const auto& x : studies) n += static_cast<int>(x.rows());
    return n;
  }

  /// Center each study in place, recording the column means.
  void center();

  /// Throws DataError if the structural invariants fail.
  void validate() const;
};

// Latent dimensions: K common factors plus J_s study-specific factors.
struct FactorDims {
  int common = 0;               // K
  std::vector<int> specific;    // J_s

  int n_studies() const { return static_cast<int>(specific.size()); }
  int total(int s) const { return common + specific[static_cast<std::size_t>(s)]; }
  int max_total() const;
};

// Boolean free-entry masks implementing the block lower-triangular constraint
// on Omega_s = [Phi, Lambda_s]. Entry true = free, false = structurally zero.
// Counting, projection and the row-wise CM solves all read these.
struct ConstraintMasks {
  BoolMatrix phi;                    // P x K
  std::vector<BoolMatrix> lambda;    // P x J_s each

  static ConstraintMasks build(int p, const FactorDims& dims);
};

// Model parameters theta = (Phi, Lambda_1..S, Psi_1..S).
struct MsfaParams {
  Matrix phi;                    // P x K
  std::vector<Matrix> lambda;    // P x J_s
  std::vector<Vector> psi;       // P, strictly positive (diag of Psi_s)

  int n_vars() const { return static_cast<int>(phi.rows()); }
  int n_studies() const { return static_cast<int>(lambda.size()); }
  FactorDims dims() const;

  /// [Phi, Lambda_s], the P x (K + J_s) joint loading matrix.
  Matrix omega(int s) const;

  /// Zero out all masked entries.
  void project(const ConstraintMasks& masks);

  /// Throws DimsError/DataError if shapes, masks, or psi positivity fail.
  void validate(double psi_floor) const;
};

struct FitConfig {
  double tol = 1e-8;          // relative log-likelihood convergence threshold
  int max_iter = 5000;
  double psi_floor = 1e-4;
  std::uint64_t seed = 0;
  bool trace = true;
};

struct FitResult {
  MsfaParams params;
  FitConfig config;  // echo of the settings the fit ran with
  FactorDims dims;
  std::vector<int> study_sizes;
  std::vector<double> loglik_trace;
  int iterations = 0;
  bool converged = false;
  double final_loglik = 0.0;
  int n_free_params = 0;
  double aic = 0.0;
  double bic = 0.0;
  int n_regularized_solves = 0;  // ridge fallbacks taken during CM solves

  int total_obs() const {
    int n = 0;
    for (int v : study_sizes) n += v;
    return n;
  }
};

}  // namespace msfa
