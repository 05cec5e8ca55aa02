#pragma once

// Config-driven orchestration behind the `sae` command.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sae/io.hpp"
#include "sae/simulation.hpp"
#include "sae/smoothing.hpp"

namespace sae {

enum class Subcommand { estimate, simulate, diagnose };

inline const std::vector<std::string>& all_methods() {
  static const std::vector<std::string> m{"hajek", "ma", "sh_iid", "sh_spatial", "sma_iid", "sma_spatial"};
  return m;
}

struct RunConfig {
  Subcommand subcommand = Subcommand::estimate;
  IngestPaths inputs;
  std::vector<std::string> methods = all_methods();
  bool clustered = true;
  PredictionScaling prediction_scaling = PredictionScaling::frame_total;
  SmoothingOptions smoothing;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir = "out";
  SimulationConfig simulation;
};

/// Parses a flat key = value file. Relative paths resolve against the
/// directory holding the file. Unknown keys are rejected.
RunConfig load_run_config(const std::filesystem::path& path, Subcommand subcommand);
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir, Subcommand subcommand);

struct EstimateReport {
  std::vector<EstimateRow> rows;
  std::string diagnostics_json;
};

/// Runs the requested methods on ingested data.
EstimateReport compute_estimates(const RunConfig& config, const IngestedData& data);

/// estimates.csv and diagnostics.json in the output directory.
void run_estimate(const RunConfig& config);

/// metrics.csv (Method, RMSE, MAE, 90% Cov., MIL; all x100) and replicates.csv.
void run_simulate(const RunConfig& config);
std::string format_metrics_table(const SimulationMetrics& metrics);
std::string format_replicate_log(const SimulationMetrics& metrics);

/// Input checks and model summaries without posterior draws: diagnostics.json
/// and area_summary.csv.
void run_diagnose(const RunConfig& config);

}  // namespace sae
