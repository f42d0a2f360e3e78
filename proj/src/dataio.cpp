#include "msfa/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>

#include "msfa/error.hpp"

namespace msfa {

namespace {

using nlohmann::json;

constexpr const char* kFitFormat = "msfa-fit-1";
constexpr const char* kSelectionFormat = "msfa-selection-1";
constexpr const char* kCvFormat = "msfa-cv-1";
constexpr const char* kScenarioFormat = "msfa-scenario-1";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    cells.push_back(cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty file: " + path);
  CsvTable table;
  table.header = split_csv_line(line);
  if (table.header.empty()) throw IoError("missing header row in " + path);
  {
    std::set<std::string> seen;
    for (const auto& name : table.header)
      if (!seen.insert(name).second)
        throw DataError("duplicate variable name '" + name + "' in " + path);
  }
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != table.header.size())
      throw DataError(path + ":" + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(table.header.size()));
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto& cell = cells[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size())
        throw DataError("non-numeric cell at " + path + " row " +
                        std::to_string(line_no) + ", column " + std::to_string(c + 1));
      row[c] = v;
    }
    rows.push_back(std::move(row));
  }
  table.values = Matrix(static_cast<int>(rows.size()), static_cast<int>(table.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      table.values(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
  return table;
}

json matrix_to_json(const Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  j["data"] = flat;  // row-major, masked zeros included
  return j;
}

Matrix matrix_from_json(const json& j) {
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<int>(flat.size()) != rows * cols)
    throw IoError("matrix payload size mismatch");
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  return m;
}

json vector_to_json(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  Vector v(static_cast<int>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<int>(i)) = vals[i];
  return v;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

void check_format(const json& j, const char* expected, const std::string& path) {
  if (!j.contains("format") || j.at("format").get<std::string>() != expected)
    throw IoError(path + ": format version mismatch, expected " + expected);
}

json config_to_json(const FitConfig& c) {
  return json{{"tol", c.tol},
              {"max_iter", c.max_iter},
              {"psi_floor", c.psi_floor},
              {"seed", c.seed},
              {"trace", c.trace}};
}

FitConfig config_from_json(const json& j) {
  FitConfig c;
  c.tol = j.value("tol", c.tol);
  c.max_iter = j.value("max_iter", c.max_iter);
  c.psi_floor = j.value("psi_floor", c.psi_floor);
  c.seed = j.value("seed", c.seed);
  c.trace = j.value("trace", c.trace);
  return c;
}

}  // namespace

LoadedStudies load_studies(const ProjectConfig& config) {
  if (config.study_paths.empty()) throw ConfigError("at least one study path is required");
  std::vector<CsvTable> tables;
  for (const auto& path : config.study_paths) tables.push_back(read_csv(path));

  std::vector<std::string> variables;
  if (config.variable_policy == VariablePolicy::RequireEqual) {
    variables = tables[0].header;
    for (std::size_t s = 1; s < tables.size(); ++s)
      if (tables[s].header != variables)
        throw DataError("variable names differ between studies under require-equal policy");
  } else {
    // intersection kept in the first study's order
    for (const auto& name : tables[0].header) {
      bool everywhere = true;
      for (std::size_t s = 1; s < tables.size() && everywhere; ++s) {
        const auto& h = tables[s].header;
        everywhere = std::find(h.begin(), h.end(), name) != h.end();
      }
      if (everywhere) variables.push_back(name);
    }
    if (variables.empty()) throw DataError("empty variable intersection across studies");
  }

  LoadedStudies out;
  out.data.variable_names = variables;
  for (std::size_t s = 0; s < tables.size(); ++s) {
    const auto& table = tables[s];
    std::unordered_map<std::string, int> pos;
    for (std::size_t c = 0; c < table.header.size(); ++c)
      pos[table.header[c]] = static_cast<int>(c);
    Matrix x(table.values.rows(), static_cast<int>(variables.size()));
    for (std::size_t c = 0; c < variables.size(); ++c)
      x.col(static_cast<int>(c)) = table.values.col(pos.at(variables[c]));
    out.data.studies.push_back(std::move(x));
  }

  switch (config.centering) {
    case CenteringPolicy::Center:
      out.data.center();
      break;
    case CenteringPolicy::AssumeCentered:
      out.data.centered = true;
      for (const auto& x : out.data.studies)
        out.data.column_means.push_back(Vector::Zero(x.cols()));
      break;
    case CenteringPolicy::None:
      break;
  }
  for (auto& x : out.data.studies) {
    Vector scale = Vector::Ones(x.cols());
    if (config.standardize) {
      const double n = static_cast<double>(x.rows());
      Matrix centered = x.rowwise() - (x.colwise().mean());
      scale = (centered.colwise().squaredNorm() / n).cwiseSqrt().transpose();
      for (int c = 0; c < scale.size(); ++c) {
        if (!(scale(c) > 0))
          throw DataError("column " + std::to_string(c + 1) +
                          " has zero variance, cannot standardize");
        x.col(c) /= scale(c);
      }
    }
    out.column_scales.push_back(std::move(scale));
  }
  out.data.validate();
  return out;
}

void save_dataset(const StudyDataset& data, const std::vector<std::string>& paths) {
  if (paths.size() != data.studies.size())
    throw ConfigError("one output path per study is required");
  for (std::size_t s = 0; s < paths.size(); ++s) {
    std::ofstream out(paths[s]);
    if (!out) throw IoError("cannot write " + paths[s]);
    const auto& x = data.studies[s];
    for (int c = 0; c < x.cols(); ++c) {
      if (c) out << ",";
      out << (data.variable_names.empty() ? "v" + std::to_string(c + 1)
                                          : data.variable_names[static_cast<std::size_t>(c)]);
    }
    out << "\n";
    char buf[40];
    for (int r = 0; r < x.rows(); ++r) {
      for (int c = 0; c < x.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", x(r, c));
        if (c) out << ",";
        out << buf;
      }
      out << "\n";
    }
  }
}

void save_fit(const FitResult& fit, const std::string& path) {
  json j;
  j["format"] = kFitFormat;
  j["p"] = fit.params.n_vars();
  j["k"] = fit.dims.common;
  j["j"] = fit.dims.specific;
  j["study_sizes"] = fit.study_sizes;
  j["phi"] = matrix_to_json(fit.params.phi);
  json lambdas = json::array();
  for (const auto& l : fit.params.lambda) lambdas.push_back(matrix_to_json(l));
  j["lambda"] = lambdas;
  json psis = json::array();
  for (const auto& p : fit.params.psi) psis.push_back(vector_to_json(p));
  j["psi"] = psis;
  j["loglik_trace"] = fit.loglik_trace;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["final_loglik"] = fit.final_loglik;
  j["n_free_params"] = fit.n_free_params;
  j["aic"] = fit.aic;
  j["bic"] = fit.bic;
  j["n_regularized_solves"] = fit.n_regularized_solves;
  j["config"] = config_to_json(fit.config);
  write_json(j, path);
}

FitResult load_fit(const std::string& path) {
  const json j = read_json(path);
  check_format(j, kFitFormat, path);
  FitResult fit;
  fit.dims.common = j.at("k").get<int>();
  fit.dims.specific = j.at("j").get<std::vector<int>>();
  fit.study_sizes = j.at("study_sizes").get<std::vector<int>>();
  fit.params.phi = matrix_from_json(j.at("phi"));
  for (const auto& l : j.at("lambda")) fit.params.lambda.push_back(matrix_from_json(l));
  for (const auto& p : j.at("psi")) fit.params.psi.push_back(vector_from_json(p));
  fit.loglik_trace = j.at("loglik_trace").get<std::vector<double>>();
  fit.iterations = j.at("iterations").get<int>();
  fit.converged = j.at("converged").get<bool>();
  fit.final_loglik = j.at("final_loglik").get<double>();
  fit.n_free_params = j.at("n_free_params").get<int>();
  fit.aic = j.at("aic").get<double>();
  fit.bic = j.at("bic").get<double>();
  fit.n_regularized_solves = j.value("n_regularized_solves", 0);
  fit.config = config_from_json(j.value("config", json::object()));
  try {
    fit.params.validate(0.0);
    for (const auto& p : fit.params.psi)
      if (p.size() > 0 && !(p.minCoeff() > 0))
        throw DimsError("psi entries must be strictly positive");
  } catch (const Error& e) {
    throw IoError(path + ": invariant violation on load: " + e.what());
  }
  return fit;
}

void save_selection(const SelectionReport& report, const std::string& path) {
  json j;
  j["format"] = kSelectionFormat;
  j["candidate_k"] = report.candidate_k;
  json cands = json::array();
  for (const auto& c : report.candidates) {
    cands.push_back(json{{"k", c.k},
                         {"loglik", c.loglik},
                         {"n_free_params", c.n_free_params},
                         {"aic", c.aic},
                         {"bic", c.bic},
                         {"converged", c.converged},
                         {"lrt_statistic", c.lrt_vs_prev.statistic},
                         {"lrt_df", c.lrt_vs_prev.df},
                         {"lrt_p_value", c.lrt_vs_prev.p_value}});
  }
  j["candidates"] = cands;
  j["chosen_k_aic"] = report.chosen_k_aic;
  j["chosen_k_bic"] = report.chosen_k_bic;
  j["chosen_k_lrt"] = report.chosen_k_lrt;
  j["note"] = report.note;
  write_json(j, path);
}

SelectionReport load_selection(const std::string& path) {
  const json j = read_json(path);
  check_format(j, kSelectionFormat, path);
  SelectionReport report;
  report.candidate_k = j.at("candidate_k").get<std::vector<int>>();
  for (const auto& c : j.at("candidates")) {
    CandidateSummary s;
    s.k = c.at("k").get<int>();
    s.loglik = c.at("loglik").get<double>();
    s.n_free_params = c.at("n_free_params").get<int>();
    s.aic = c.at("aic").get<double>();
    s.bic = c.at("bic").get<double>();
    s.converged = c.at("converged").get<bool>();
    s.lrt_vs_prev.statistic = c.at("lrt_statistic").get<double>();
    s.lrt_vs_prev.df = c.at("lrt_df").get<int>();
    s.lrt_vs_prev.p_value = c.at("lrt_p_value").get<double>();
    report.candidates.push_back(s);
  }
  report.chosen_k_aic = j.at("chosen_k_aic").get<int>();
  report.chosen_k_bic = j.at("chosen_k_bic").get<int>();
  report.chosen_k_lrt = j.at("chosen_k_lrt").get<int>();
  report.note = j.value("note", "");
  return report;
}

namespace {

json method_to_json(const MethodMse& m) {
  return json{{"mse", m.mse},
              {"per_study", m.per_study},
              {"sse_per_study", m.sse_per_study},
              {"test_counts", m.test_counts}};
}

MethodMse method_from_json(const json& j) {
  MethodMse m;
  m.mse = j.at("mse").get<double>();
  m.per_study = j.at("per_study").get<std::vector<double>>();
  m.sse_per_study = j.at("sse_per_study").get<std::vector<double>>();
  m.test_counts = j.at("test_counts").get<std::vector<int>>();
  return m;
}

}  // namespace

void save_cv_report(const CvReport& report, const std::string& path) {
  json j;
  j["format"] = kCvFormat;
  j["msfa"] = method_to_json(report.msfa);
  j["fa_merged"] = method_to_json(report.fa_merged);
  j["fa_separate"] = method_to_json(report.fa_separate);
  j["split_fraction"] = report.split_fraction;
  j["n_folds"] = report.n_folds;
  j["seed"] = report.seed;
  j["merged_t"] = report.merged_t;
  j["rel_diff_merged"] = report.rel_diff_merged;
  j["rel_diff_separate"] = report.rel_diff_separate;
  write_json(j, path);
}

CvReport load_cv_report(const std::string& path) {
  const json j = read_json(path);
  check_format(j, kCvFormat, path);
  CvReport report;
  report.msfa = method_from_json(j.at("msfa"));
  report.fa_merged = method_from_json(j.at("fa_merged"));
  report.fa_separate = method_from_json(j.at("fa_separate"));
  report.split_fraction = j.at("split_fraction").get<double>();
  report.n_folds = j.at("n_folds").get<int>();
  report.seed = j.at("seed").get<std::uint64_t>();
  report.merged_t = j.at("merged_t").get<int>();
  report.rel_diff_merged = j.at("rel_diff_merged").get<double>();
  report.rel_diff_separate = j.at("rel_diff_separate").get<double>();
  return report;
}

void save_scenario_spec(const ScenarioSpec& spec, const std::string& path) {
  json j;
  j["format"] = kScenarioFormat;
  j["n_studies"] = spec.n_studies;
  j["n_vars"] = spec.n_vars;
  j["sizes"] = spec.sizes;
  j["totals"] = spec.totals;
  j["true_common"] = spec.true_common;
  j["loading_scale"] = spec.loading_scale;
  j["seed"] = spec.seed;
  write_json(j, path);
}

ScenarioSpec load_scenario_spec(const std::string& path) {
  const json j = read_json(path);
  check_format(j, kScenarioFormat, path);
  ScenarioSpec spec;
  spec.n_studies = j.at("n_studies").get<int>();
  spec.n_vars = j.at("n_vars").get<int>();
  spec.sizes = j.at("sizes").get<std::vector<int>>();
  spec.totals = j.at("totals").get<std::vector<int>>();
  spec.true_common = j.at("true_common").get<int>();
  spec.loading_scale = j.at("loading_scale").get<double>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.validate();
  return spec;
}

void save_scenario_table(const ScenarioTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "criterion";
  for (int k : table.candidate_k) out << ",K=" << k;
  out << ",failures\n";
  for (const auto& [criterion, counts] : table.counts) {
    out << criterion;
    for (int c : counts) out << "," << c;
    out << "," << table.n_failures << "\n";
  }
}

void save_loading_edges(const std::vector<LoadingEdge>& edges, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "col_a,col_b,correlation\n";
  char buf[40];
  for (const auto& e : edges) {
    std::snprintf(buf, sizeof buf, "%.17g", e.correlation);
    out << e.col_a << "," << e.col_b << "," << buf << "\n";
  }
}

}  // namespace msfa
