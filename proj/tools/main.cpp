#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <vector>

#include "msfa/dataio.hpp"
#include "msfa/error.hpp"
#include "msfa/estimator.hpp"
#include "msfa/evaluation.hpp"
#include "msfa/model.hpp"
#include "msfa/rng.hpp"
#include "msfa/selection.hpp"
#include "msfa/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw msfa::ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw msfa::ConfigError("invalid JSON config " + path + ": " + e.what());
  }
  return j;
}

// flags take precedence over config-file values, which beat built-in defaults
template <class T>
T pick(const CLI::Option* opt, const T& flag_value, const json& cfg, const char* key,
       const T& fallback) {
  if (opt && opt->count() > 0) return flag_value;
  if (cfg.contains(key)) return cfg.at(key).get<T>();
  return fallback;
}

std::string default_out_dir() {
  if (const char* env = std::getenv("MSFA_OUT")) return env;
  return "msfa_out";
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
  std::vector<int> values;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      values.push_back(std::stoi(tok));
    } catch (...) {
      throw msfa::ConfigError(std::string("invalid ") + what + " list: " + text);
    }
  }
  if (values.empty()) throw msfa::ConfigError(std::string("empty ") + what + " list");
  return values;
}

std::pair<int, int> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      const int k = std::stoi(text);
      return {k, k};
    }
    return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
  } catch (...) {
    throw msfa::ConfigError("invalid range: " + text + " (expected lo:hi)");
  }
}

std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value,
                           const json& cfg) {
  if (opt && opt->count() > 0) return flag_value;
  if (cfg.contains("seed")) return cfg.at("seed").get<std::uint64_t>();
  std::random_device rd;
  const std::uint64_t seed =
      (static_cast<std::uint64_t>(rd()) << 32) ^ static_cast<std::uint64_t>(rd());
  std::cout << "seed: " << seed << "\n";
  return seed;
}

struct DataFlags {
  std::vector<std::string> paths;
  std::string policy = "intersect";
  bool assume_centered = false;
  bool standardize = false;
};

void add_data_flags(CLI::App* cmd, DataFlags& flags) {
  cmd->add_option("--data", flags.paths, "per-study CSV files (rows=samples, header row)");
  cmd->add_option("--policy", flags.policy,
                  "variable-name policy: intersect | require-equal");
  cmd->add_flag("--assume-centered", flags.assume_centered,
                "treat the input as already column-centered per study");
  cmd->add_flag("--standardize", flags.standardize,
                "divide columns by their standard deviation");
}

msfa::StudyDataset load_data(const DataFlags& flags, const json& cfg) {
  msfa::ProjectConfig pc;
  pc.study_paths = flags.paths;
  if (pc.study_paths.empty() && cfg.contains("data"))
    pc.study_paths = cfg.at("data").get<std::vector<std::string>>();
  if (pc.study_paths.empty()) throw msfa::ConfigError("--data is required");
  std::string policy = flags.policy;
  if (policy == "intersect")
    pc.variable_policy = msfa::VariablePolicy::Intersect;
  else if (policy == "require-equal")
    pc.variable_policy = msfa::VariablePolicy::RequireEqual;
  else
    throw msfa::ConfigError("unknown policy: " + policy);
  pc.centering = flags.assume_centered ? msfa::CenteringPolicy::AssumeCentered
                                       : msfa::CenteringPolicy::Center;
  pc.standardize = flags.standardize;
  return msfa::load_studies(pc).data;
}

struct FitFlags {
  double tol = 1e-8;
  int max_iter = 5000;
  double psi_floor = 1e-4;
  std::uint64_t seed = 0;
  int threads = 0;
  CLI::Option* tol_opt = nullptr;
  CLI::Option* max_iter_opt = nullptr;
  CLI::Option* psi_floor_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

void add_fit_flags(CLI::App* cmd, FitFlags& flags) {
  flags.tol_opt = cmd->add_option("--tol", flags.tol, "relative log-likelihood tolerance");
  flags.max_iter_opt = cmd->add_option("--max-iter", flags.max_iter, "ECM iteration cap");
  flags.psi_floor_opt =
      cmd->add_option("--psi-floor", flags.psi_floor, "lower bound on uniquenesses");
  flags.seed_opt = cmd->add_option("--seed", flags.seed, "RNG seed (drawn if omitted)");
  cmd->add_option("--threads", flags.threads, "worker cap (0 = all available)");
}

msfa::FitConfig make_fit_config(const FitFlags& flags, const json& cfg) {
  msfa::FitConfig config;
  config.tol = pick(flags.tol_opt, flags.tol, cfg, "tol", config.tol);
  config.max_iter = pick(flags.max_iter_opt, flags.max_iter, cfg, "max_iter", config.max_iter);
  config.psi_floor =
      pick(flags.psi_floor_opt, flags.psi_floor, cfg, "psi_floor", config.psi_floor);
  config.seed = resolve_seed(flags.seed_opt, flags.seed, cfg);
  return config;
}

msfa::FactorDims resolve_dims(int k, const std::string& j_list,
                              const std::string& dims_file, const json& cfg) {
  msfa::FactorDims dims;
  if (!dims_file.empty()) {
    const json j = load_config_json(dims_file);
    dims.common = j.at("k").get<int>();
    dims.specific = j.at("j").get<std::vector<int>>();
    return dims;
  }
  if (k < 0 && cfg.contains("k")) k = cfg.at("k").get<int>();
  std::string jl = j_list;
  if (jl.empty() && cfg.contains("j")) jl = cfg.at("j").get<std::string>();
  if (k < 0 || jl.empty())
    throw msfa::ConfigError("--k and --j (or --dims FILE) are required");
  dims.common = k;
  dims.specific = parse_int_list(jl, "j");
  return dims;
}

const msfa::Matrix& pick_matrix(const msfa::FitResult& fit, const std::string& which) {
  if (which == "phi") {
    if (fit.params.phi.cols() == 0 && !fit.params.lambda.empty())
      return fit.params.lambda[0];  // K=0 fit: fall back to the first Lambda
    return fit.params.phi;
  }
  if (which.rfind("lambda", 0) == 0) {
    const int s = which.size() > 6 ? std::stoi(which.substr(6)) : 1;
    if (s < 1 || s > static_cast<int>(fit.params.lambda.size()))
      throw msfa::ConfigError("no study " + std::to_string(s) + " in fit");
    return fit.params.lambda[static_cast<std::size_t>(s - 1)];
  }
  throw msfa::ConfigError("unknown matrix selector: " + which + " (phi | lambda<s>)");
}

int cmd_simulate(const json& cfg, int scenario, CLI::Option* p_opt, int p,
                 CLI::Option* scale_opt, double scale, int replicates,
                 const std::string& k_range, const FitFlags& fit_flags,
                 const std::string& out_dir) {
  msfa::ScenarioSpec spec =
      msfa::scenario_preset(scenario, pick(p_opt, p, cfg, "p", 100));
  spec.loading_scale = pick(scale_opt, scale, cfg, "scale", 1.0);
  spec.seed = resolve_seed(fit_flags.seed_opt, fit_flags.seed, cfg);
  spec.validate();

  fs::create_directories(out_dir);
  msfa::save_scenario_spec(spec, out_dir + "/scenario.json");

  const msfa::MsfaParams truth = msfa::generate_true_params(spec);
  msfa::FitResult truth_box;
  truth_box.params = truth;
  truth_box.dims = spec.dims();
  truth_box.study_sizes = spec.sizes;
  truth_box.n_free_params = msfa::free_param_count(truth_box.dims, spec.n_vars);
  msfa::save_fit(truth_box, out_dir + "/true_params.json");

  const msfa::StudyDataset data =
      msfa::simulate_dataset(truth, spec.sizes, msfa::mix_seed(spec.seed, 0xda7a));
  std::vector<std::string> paths;
  for (int s = 1; s <= spec.n_studies; ++s)
    paths.push_back(out_dir + "/study" + std::to_string(s) + ".csv");
  msfa::save_dataset(data, paths);
  std::cout << "scenario " << scenario << ": K=" << spec.true_common << ", P="
            << spec.n_vars << ", studies";
  for (int n : spec.sizes) std::cout << " " << n;
  std::cout << "\nwrote " << paths.size() << " study files to " << out_dir << "\n";

  if (replicates > 0) {
    const auto [lo, hi] = parse_range(k_range);
    msfa::FitConfig config;
    config.tol = fit_flags.tol_opt->count() ? fit_flags.tol : 1e-8;
    config.max_iter = fit_flags.max_iter_opt->count() ? fit_flags.max_iter : 5000;
    config.seed = spec.seed;
    const msfa::ScenarioTable table =
        msfa::run_scenario_study(spec, replicates, {lo, hi}, config);
    msfa::save_scenario_table(table, out_dir + "/scenario_table.csv");
    std::cout << "selection frequencies over " << replicates << " replicates ("
              << table.n_failures << " failures):\n";
    for (const auto& [criterion, counts] : table.counts) {
      std::cout << "  " << criterion << ":";
      for (std::size_t i = 0; i < counts.size(); ++i)
        std::cout << " K=" << table.candidate_k[i] << ":" << counts[i];
      std::cout << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-study factor analysis: ECM fitting, dimension selection, "
               "simulation and cross-study evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags take precedence)")
      ->expected(1);

  std::string out_dir_flag;
  CLI::Option* out_opt =
      app.add_option("--out", out_dir_flag, "output directory (or MSFA_OUT)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate data from a scenario preset");
  int scenario = 0;
  sim->add_option("--scenario", scenario, "preset 1|2|3 (K = 0|1|3)")->required();
  int p_val = 100;
  CLI::Option* p_opt = sim->add_option("--p", p_val, "number of variables");
  double scale = 1.0;
  CLI::Option* scale_opt = sim->add_option("--scale", scale, "loading scale");
  int replicates = 0;
  sim->add_option("--replicates", replicates,
                  "also run the selection frequency study with this many replicates");
  std::string sim_k_range = "0:5";
  sim->add_option("--k-range", sim_k_range, "candidate K range lo:hi for --replicates");
  FitFlags sim_fit;
  add_fit_flags(sim, sim_fit);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "ECM maximum-likelihood fit");
  DataFlags fit_data;
  add_data_flags(fit_cmd, fit_data);
  int fit_k = -1;
  fit_cmd->add_option("--k", fit_k, "number of common factors");
  std::string fit_j;
  fit_cmd->add_option("--j", fit_j, "comma-separated study-specific dimensions");
  std::string fit_dims_file;
  fit_cmd->add_option("--dims", fit_dims_file, "JSON dims file {\"k\":..,\"j\":[..]}");
  FitFlags fit_flags;
  add_fit_flags(fit_cmd, fit_flags);

  // select
  auto* sel = app.add_subcommand("select", "two-step latent-dimension selection");
  DataFlags sel_data;
  add_data_flags(sel, sel_data);
  std::string sel_t;
  sel->add_option("--t", sel_t, "comma-separated per-study totals T_s");
  bool auto_t = false;
  sel->add_flag("--auto-t", auto_t, "choose T_s by Horn's parallel analysis");
  std::string sel_k_range = "0:5";
  sel->add_option("--k-range", sel_k_range, "candidate K range lo:hi");
  int n_random = 100;
  sel->add_option("--n-random", n_random, "parallel-analysis random datasets");
  double quantile = 0.95;
  sel->add_option("--quantile", quantile, "parallel-analysis quantile");
  FitFlags sel_flags;
  add_fit_flags(sel, sel_flags);

  // cv
  auto* cv = app.add_subcommand("cv", "Monte Carlo cross-validated prediction error");
  DataFlags cv_data;
  add_data_flags(cv, cv_data);
  int cv_k = -1;
  cv->add_option("--k", cv_k, "number of common factors");
  std::string cv_j;
  cv->add_option("--j", cv_j, "comma-separated study-specific dimensions");
  std::string cv_dims_file;
  cv->add_option("--dims", cv_dims_file, "JSON dims file");
  double split = 0.8;
  cv->add_option("--split", split, "training fraction");
  int folds = 1;
  cv->add_option("--folds", folds, "number of random splits");
  int merged_t = -1;
  cv->add_option("--merged-t", merged_t,
                 "latent dimension for the merged-FA baseline (default K + max J_s)");
  FitFlags cv_flags;
  add_fit_flags(cv, cv_flags);

  // compare
  auto* cmp = app.add_subcommand("compare", "RV coefficient and loading correlations");
  std::vector<std::string> cmp_fits;
  cmp->add_option("fits", cmp_fits, "two fit JSON files")->expected(2);
  double threshold = 0.2;
  cmp->add_option("--threshold", threshold, "edge threshold on |correlation|");
  std::string matrix_a = "phi", matrix_b = "phi";
  cmp->add_option("--matrix-a", matrix_a, "loading matrix from the first fit");
  cmp->add_option("--matrix-b", matrix_b, "loading matrix from the second fit");

  CLI11_PARSE(app, argc, argv);

  try {
    const json cfg = load_config_json(config_path);
    std::string out_dir = pick(out_opt, out_dir_flag, cfg, "out", default_out_dir());

    if (sim->parsed())
      return cmd_simulate(cfg, scenario, p_opt, p_val, scale_opt, scale, replicates,
                          sim_k_range, sim_fit, out_dir);

    if (fit_cmd->parsed()) {
      const msfa::StudyDataset data = load_data(fit_data, cfg);
      const msfa::FactorDims dims = resolve_dims(fit_k, fit_j, fit_dims_file, cfg);
      const msfa::FitConfig config = make_fit_config(fit_flags, cfg);
      const msfa::FeasibilityReport feas = msfa::validate_dims(dims, data);
      if (!feas.ok) {
        for (const auto& f : feas.studies)
          if (!f.reason.empty())
            throw msfa::DimsError("study " + std::to_string(f.study) + ": " + f.reason);
      }
      const msfa::FitResult fit = msfa::fit_msfa(data, dims, config);
      fs::create_directories(out_dir);
      msfa::save_fit(fit, out_dir + "/fit.json");
      std::cout << "log-likelihood: " << fit.final_loglik << "\n"
                << "iterations: " << fit.iterations
                << (fit.converged ? " (converged)" : " (max_iter reached)") << "\n"
                << "free parameters: " << fit.n_free_params << "\n"
                << "AIC: " << fit.aic << "\nBIC: " << fit.bic << "\n"
                << "wrote " << out_dir << "/fit.json\n";
      return 0;
    }

    if (sel->parsed()) {
      const msfa::StudyDataset data = load_data(sel_data, cfg);
      const msfa::FitConfig config = make_fit_config(sel_flags, cfg);
      std::vector<int> totals;
      if (auto_t) {
        for (int s = 0; s < data.n_studies(); ++s)
          totals.push_back(msfa::horn_parallel_analysis(
              data.studies[static_cast<std::size_t>(s)], n_random, quantile,
              msfa::mix_seed(config.seed, 0x4a + static_cast<std::uint64_t>(s))));
        std::cout << "parallel analysis T_s:";
        for (int t : totals) std::cout << " " << t;
        std::cout << "\n";
      } else if (!sel_t.empty() || cfg.contains("t")) {
        totals = sel_t.empty() ? parse_int_list(cfg.at("t").get<std::string>(), "t")
                               : parse_int_list(sel_t, "t");
      } else {
        throw msfa::ConfigError("--t or --auto-t is required");
      }
      const auto [lo, hi] = parse_range(sel_k_range);
      const msfa::SelectionReport report = msfa::select_k(data, totals, lo, hi, config);
      fs::create_directories(out_dir);
      msfa::save_selection(report, out_dir + "/selection.json");
      for (const auto& c : report.candidates)
        std::cout << "K=" << c.k << "  loglik=" << c.loglik << "  q=" << c.n_free_params
                  << "  AIC=" << c.aic << "  BIC=" << c.bic << "\n";
      std::cout << "AIC recommends K=" << report.chosen_k_aic << "\n"
                << "BIC recommends K=" << report.chosen_k_bic << "\n"
                << "LRT recommends K=" << report.chosen_k_lrt << "\n"
                << "wrote " << out_dir << "/selection.json\n";
      return 0;
    }

    if (cv->parsed()) {
      const msfa::StudyDataset data = load_data(cv_data, cfg);
      const msfa::FactorDims dims = resolve_dims(cv_k, cv_j, cv_dims_file, cfg);
      const msfa::FitConfig config = make_fit_config(cv_flags, cfg);
      const msfa::CvReport report =
          msfa::cv_mse(data, dims, split, folds, config, merged_t);
      fs::create_directories(out_dir);
      msfa::save_cv_report(report, out_dir + "/cv_report.json");
      std::cout << "MSE msfa:        " << report.msfa.mse << "\n"
                << "MSE fa-merged:   " << report.fa_merged.mse << " (rel diff "
                << report.rel_diff_merged << ")\n"
                << "MSE fa-separate: " << report.fa_separate.mse << " (rel diff "
                << report.rel_diff_separate << ")\n"
                << "wrote " << out_dir << "/cv_report.json\n";
      return 0;
    }

    if (cmp->parsed()) {
      const msfa::FitResult fit_a = msfa::load_fit(cmp_fits[0]);
      const msfa::FitResult fit_b = msfa::load_fit(cmp_fits[1]);
      const msfa::Matrix& a = pick_matrix(fit_a, matrix_a);
      const msfa::Matrix& b = pick_matrix(fit_b, matrix_b);
      const double rv = msfa::rv_coefficient(a, b);
      const msfa::LoadingCorrelations corr = msfa::loading_correlations(a, b, threshold);
      fs::create_directories(out_dir);
      msfa::save_loading_edges(corr.edges, out_dir + "/loading_edges.csv");
      std::cout << "RV = " << rv << "\n"
                << corr.edges.size() << " edges with |correlation| >= " << threshold
                << "\nwrote " << out_dir << "/loading_edges.csv\n";
      return 0;
    }
  } catch (const msfa::Error& e) {
    std::cerr << "error:" << e.category() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error:internal: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
