#pragma once

#include <string>
#include <vector>

#include "msfa/evaluation.hpp"
#include "msfa/selection.hpp"
#include "msfa/simulation.hpp"
#include "msfa/types.hpp"

namespace msfa {

enum class VariablePolicy { Intersect, RequireEqual };
enum class CenteringPolicy { Center, AssumeCentered, None };

struct ProjectConfig {
  std::vector<std::string> study_paths;
  VariablePolicy variable_policy = VariablePolicy::Intersect;
  CenteringPolicy centering = CenteringPolicy::Center;
  bool standardize = false;  // divide columns by the training standard deviation
  std::string output_dir = "msfa_out";
};

struct LoadedStudies {
  StudyDataset data;
  std::vector<Vector> column_scales;  // per study, all ones unless standardized
};

// Reads per-study CSV files (rows = samples, mandatory header row of variable
// names). Under the intersect policy the variable intersection is kept in the
// first study's column order.
LoadedStudies load_studies(const ProjectConfig& config);

// One CSV per study, 17 significant digits so reloading is value-exact.
void save_dataset(const StudyDataset& data, const std::vector<std::string>& paths);

void save_fit(const FitResult& fit, const std::string& path);
FitResult load_fit(const std::string& path);

void save_selection(const SelectionReport& report, const std::string& path);
SelectionReport load_selection(const std::string& path);

void save_cv_report(const CvReport& report, const std::string& path);
CvReport load_cv_report(const std::string& path);

void save_scenario_spec(const ScenarioSpec& spec, const std::string& path);
ScenarioSpec load_scenario_spec(const std::string& path);

// Table-1-shaped frequency table: one row per criterion, one column per K.
void save_scenario_table(const ScenarioTable& table, const std::string& path);

void save_loading_edges(const std::vector<LoadingEdge>& edges, const std::string& path);

}  // namespace msfa
