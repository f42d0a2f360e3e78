#include "msfa/evaluation.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "msfa/error.hpp"
#include "msfa/estimator.hpp"
#include "msfa/model.hpp"
#include "msfa/rng.hpp"

namespace msfa {

std::pair<Vector, Vector> posterior_scores(const MsfaParams& params, const Vector& x,
                                           int s) {
  if (x.size() != params.n_vars()) throw DimsError("score vector length mismatch");
  const Matrix omega = params.omega(s);
  const int k = static_cast<int>(params.phi.cols());
  const Matrix sigma = assemble_sigma(params, s);
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw NumericError("Sigma not positive definite in study " + std::to_string(s + 1));
  const Vector scores = omega.transpose() * llt.solve(x);
  return {scores.head(k), scores.tail(scores.size() - k)};
}

Vector reconstruct(const MsfaParams& params, const Vector& f_scores,
                   const Vector& l_scores, int s) {
  const auto& lam = params.lambda[static_cast<std::size_t>(s)];
  if (f_scores.size() != params.phi.cols() || l_scores.size() != lam.cols())
    throw DimsError("score dimensions do not match the loading matrices");
  Vector x_hat = Vector::Zero(params.n_vars());
  if (f_scores.size() > 0) x_hat += params.phi * f_scores;
  if (l_scores.size() > 0) x_hat += lam * l_scores;
  return x_hat;
}

double rv_coefficient(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimsError("RV requires equal row counts");
  const double na = (a.transpose() * a).squaredNorm();  // tr((A A^T)^2)
  const double nb = (b.transpose() * b).squaredNorm();
  if (!(na > 0) || !(nb > 0)) throw DataError("RV undefined for a zero matrix");
  const double cross = (a.transpose() * b).squaredNorm();  // tr(A A^T B B^T)
  return cross / std::sqrt(na * nb);
}

namespace {

double pearson(const Vector& x, const Vector& y, const std::string& label_x,
               const std::string& label_y) {
  const double n = static_cast<double>(x.size());
  const Vector xc = x.array() - x.mean();
  const Vector yc = y.array() - y.mean();
  const double sx = xc.norm();
  const double sy = yc.norm();
  if (!(sx > 0)) throw DataError("constant column: " + label_x);
  if (!(sy > 0)) throw DataError("constant column: " + label_y);
  (void)n;
  return xc.dot(yc) / (sx * sy);
}

}  // namespace

LoadingCorrelations loading_correlations(const Matrix& la, const Matrix& lb,
                                         double threshold) {
  if (la.rows() != lb.rows()) throw DimsError("loading matrices need equal row counts");
  LoadingCorrelations out;
  out.correlations = Matrix(la.cols(), lb.cols());
  for (int i = 0; i < la.cols(); ++i)
    for (int j = 0; j < lb.cols(); ++j) {
      const double c = pearson(la.col(i), lb.col(j), "A:" + std::to_string(i + 1),
                               "B:" + std::to_string(j + 1));
      out.correlations(i, j) = c;
      if (std::abs(c) >= threshold)
        out.edges.push_back({i + 1, j + 1, c});
    }
  return out;
}

Alignment align_loadings(const Matrix& est, const Matrix& ref) {
  if (est.cols() != ref.cols() || est.rows() != ref.rows())
    throw DimsError("align_loadings requires equal shapes");
  const int m = static_cast<int>(est.cols());
  Matrix corr(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      corr(i, j) = pearson(est.col(i), ref.col(j), "est:" + std::to_string(i + 1),
                           "ref:" + std::to_string(j + 1));

  Alignment out;
  out.permutation.assign(static_cast<std::size_t>(m), -1);
  out.signs.assign(static_cast<std::size_t>(m), 1);
  out.correlations.assign(static_cast<std::size_t>(m), 0.0);
  std::vector<bool> est_used(static_cast<std::size_t>(m), false);
  std::vector<bool> ref_used(static_cast<std::size_t>(m), false);
  for (int step = 0; step < m; ++step) {
    int best_i = -1, best_j = -1;
    double best = -1.0;
    for (int i = 0; i < m; ++i) {
      if (est_used[static_cast<std::size_t>(i)]) continue;
      for (int j = 0; j < m; ++j) {
        if (ref_used[static_cast<std::size_t>(j)]) continue;
        if (std::abs(corr(i, j)) > best) {
          best = std::abs(corr(i, j));
          best_i = i;
          best_j = j;
        }
      }
    }
    est_used[static_cast<std::size_t>(best_i)] = true;
    ref_used[static_cast<std::size_t>(best_j)] = true;
    out.permutation[static_cast<std::size_t>(best_j)] = best_i;
    out.signs[static_cast<std::size_t>(best_j)] = corr(best_i, best_j) >= 0 ? 1 : -1;
    out.correlations[static_cast<std::size_t>(best_j)] = best;
  }
  out.aligned = Matrix(est.rows(), m);
  for (int j = 0; j < m; ++j)
    out.aligned.col(j) = out.signs[static_cast<std::size_t>(j)] *
                         est.col(out.permutation[static_cast<std::size_t>(j)]);
  return out;
}

CvReport cv_mse(const StudyDataset& data, const FactorDims& dims, double split_fraction,
                int n_folds, const FitConfig& config, int merged_t) {
  data.validate();
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw ConfigError("split_fraction must lie in (0, 1)");
  if (n_folds < 1) throw ConfigError("n_folds must be >= 1");
  const int n_studies = data.n_studies();
  const int p = data.n_vars();
  if (dims.n_studies() != n_studies) throw DimsError("dims/study count mismatch");

  int max_j = 0;
  for (int s = 0; s < n_studies; ++s)
    max_j = std::max(max_j, dims.specific[static_cast<std::size_t>(s)]);
  const int t_merged = merged_t >= 0 ? merged_t : dims.common + max_j;

  CvReport report;
  report.split_fraction = split_fraction;
  report.n_folds = n_folds;
  report.seed = config.seed;
  report.merged_t = t_merged;
  for (MethodMse* m : {&report.msfa, &report.fa_merged, &report.fa_separate}) {
    m->sse_per_study.assign(static_cast<std::size_t>(n_studies), 0.0);
    m->test_counts.assign(static_cast<std::size_t>(n_studies), 0);
  }

  for (int fold = 0; fold < n_folds; ++fold) {
    Rng rng = make_rng(mix_seed(config.seed, 0xcf00 + static_cast<std::uint64_t>(fold)));

    std::vector<Matrix> train_raw(static_cast<std::size_t>(n_studies));
    std::vector<Matrix> test_raw(static_cast<std::size_t>(n_studies));
    for (int s = 0; s < n_studies; ++s) {
      const auto& x = data.studies[static_cast<std::size_t>(s)];
      const int n_s = static_cast<int>(x.rows());
      std::vector<int> idx(static_cast<std::size_t>(n_s));
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      int n_train = static_cast<int>(std::lround(split_fraction * n_s));
      n_train = std::clamp(n_train, 1, n_s - 1);
      if (n_s - n_train < 1)
        throw DataError("test split smaller than one observation in study " +
                        std::to_string(s + 1));
      Matrix tr(n_train, p), te(n_s - n_train, p);
      for (int i = 0; i < n_train; ++i) tr.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
      for (int i = n_train; i < n_s; ++i)
        te.row(i - n_train) = x.row(idx[static_cast<std::size_t>(i)]);
      train_raw[static_cast<std::size_t>(s)] = std::move(tr);
      test_raw[static_cast<std::size_t>(s)] = std::move(te);
    }

    StudyDataset train;
    train.studies = train_raw;
    train.center();

    FitConfig fold_config = config;
    fold_config.seed = mix_seed(config.seed, 0xf17 + static_cast<std::uint64_t>(fold));
    const FitResult msfa_fit = fit_msfa(train, dims, fold_config);

    // merged FA: stack the raw training rows and center globally
    int n_train_total = 0;
    for (const auto& tr : train_raw) n_train_total += static_cast<int>(tr.rows());
    Matrix stacked(n_train_total, p);
    int offset = 0;
    for (const auto& tr : train_raw) {
      stacked.middleRows(offset, static_cast<int>(tr.rows())) = tr;
      offset += static_cast<int>(tr.rows());
    }
    const Vector merged_mean = stacked.colwise().mean();
    const FitResult merged_fit = fit_fa(stacked, t_merged, fold_config);

    std::vector<FitResult> separate_fits;
    for (int s = 0; s < n_studies; ++s)
      separate_fits.push_back(fit_fa(train_raw[static_cast<std::size_t>(s)],
                                     dims.total(s), fold_config));

    for (int s = 0; s < n_studies; ++s) {
      const Matrix& te = test_raw[static_cast<std::size_t>(s)];
      const Vector& study_mean = train.column_means[static_cast<std::size_t>(s)];
      for (int i = 0; i < te.rows(); ++i) {
        const Vector x_study = te.row(i).transpose() - study_mean;
        const Vector x_merged = te.row(i).transpose() - merged_mean;

        auto [f_hat, l_hat] = posterior_scores(msfa_fit.params, x_study, s);
        const Vector msfa_hat = reconstruct(msfa_fit.params, f_hat, l_hat, s);
        report.msfa.sse_per_study[static_cast<std::size_t>(s)] +=
            (x_study - msfa_hat).squaredNorm();

        auto [fm, lm] = posterior_scores(merged_fit.params, x_merged, 0);
        const Vector merged_hat = reconstruct(merged_fit.params, fm, lm, 0);
        report.fa_merged.sse_per_study[static_cast<std::size_t>(s)] +=
            (x_merged - merged_hat).squaredNorm();

        const auto& sep = separate_fits[static_cast<std::size_t>(s)];
        auto [fs, ls] = posterior_scores(sep.params, x_study, 0);
        const Vector sep_hat = reconstruct(sep.params, fs, ls, 0);
        report.fa_separate.sse_per_study[static_cast<std::size_t>(s)] +=
            (x_study - sep_hat).squaredNorm();
      }
      for (MethodMse* m : {&report.msfa, &report.fa_merged, &report.fa_separate})
        m->test_counts[static_cast<std::size_t>(s)] += static_cast<int>(te.rows());
    }
  }

  for (MethodMse* m : {&report.msfa, &report.fa_merged, &report.fa_separate}) {
    double sse = 0.0;
    int n_test = 0;
    m->per_study.assign(static_cast<std::size_t>(n_studies), 0.0);
    for (int s = 0; s < n_studies; ++s) {
      sse += m->sse_per_study[static_cast<std::size_t>(s)];
      n_test += m->test_counts[static_cast<std::size_t>(s)];
      m->per_study[static_cast<std::size_t>(s)] =
          m->sse_per_study[static_cast<std::size_t>(s)] /
          std::max(1, m->test_counts[static_cast<std::size_t>(s)]);
    }
    m->mse = sse / std::max(1, n_test);
  }
  report.rel_diff_merged = (report.fa_merged.mse - report.msfa.mse) / report.fa_merged.mse;
  report.rel_diff_separate =
      (report.fa_separate.mse - report.msfa.mse) / report.fa_separate.mse;
  return report;
}

}  // namespace msfa
