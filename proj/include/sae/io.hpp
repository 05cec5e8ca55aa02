#pragma once

// File ingestion and output writers.
//
// estimates.csv columns: area_id, method, estimate, se, lower90, upper90, n_a,
// flags. For direct and model-assisted methods `se` is the design standard
// error and the interval is estimate +/- 1.645 se clipped to [0,1]; for
// smoothed methods `se` is the posterior SD and the interval is the central
// 90% posterior interval. Missing values are written as NA.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sae/smoothing.hpp"
#include "sae/survey.hpp"
#include "sae/working_model.hpp"

namespace sae {

/// Headered comma-separated table. Blank lines and lines starting with '#'
/// are skipped; `line` keeps the 1-based source line of every row.
struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;

  /// Column index; throws ValidationError naming the file when absent.
  std::size_t column(const std::string& name) const;
  /// Columns named prefix1, prefix2, ... in order (stops at the first gap).
  std::vector<std::size_t> numbered_columns(const std::string& prefix) const;
};

CsvTable read_csv(const std::filesystem::path& path);

SurveyDataset read_units(const std::filesystem::path& path);
PopulationFrame read_frame(const std::filesystem::path& path);

struct AreaCovariates {
  std::vector<std::string> area_ids;
  std::vector<std::string> names;  // x1..xq
  Eigen::MatrixXd values;          // rows follow area_ids
};

AreaCovariates read_area_covariates(const std::filesystem::path& path);

struct AdjacencyInput {
  std::vector<std::string> areas;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // indices into areas
};

/// {"areas": [...], "edges": [[a, b], ...]}; endpoints are area ids or
/// 0-based indices.
AdjacencyInput read_adjacency(const std::filesystem::path& path);

struct IngestPaths {
  std::filesystem::path units;
  std::optional<std::filesystem::path> frame;
  std::optional<std::filesystem::path> adjacency;
  std::optional<std::filesystem::path> area_covariates;
};

struct IngestedData {
  SurveyDataset units;
  std::optional<PopulationFrame> frame;
  AreaPartition partition;  // adjacency order when given, else sorted ids
  std::shared_ptr<const SpatialStructure> structure;
  Eigen::MatrixXd area_design;  // intercept, then x1..xq
  std::vector<std::string> area_design_names;
};

/// Reads and cross-validates the inputs. Errors carry file names and line
/// numbers; area ids must agree across files.
IngestedData ingest(const IngestPaths& paths);

/// Builds the partition, spatial structure, and design matrix for data
/// already in memory.
IngestedData assemble(SurveyDataset units, std::optional<PopulationFrame> frame,
                      std::optional<AdjacencyInput> adjacency, std::optional<AreaCovariates> covariates);

struct EstimateRow {
  std::string area_id;
  std::string method;
  double estimate = AreaEstimate::kMissing;
  double se = AreaEstimate::kMissing;
  double lower90 = AreaEstimate::kMissing;
  double upper90 = AreaEstimate::kMissing;
  std::size_t n = 0;
  std::uint32_t flags = 0;
};

std::vector<EstimateRow> direct_rows(const AreaEstimateSet& estimates, const std::string& method);
std::vector<EstimateRow> smoothed_rows(const SmoothingResult& result, const AreaEstimateSet& input,
                                       const std::string& method);

/// Shortest round-trip decimal form; NA for non-finite values.
std::string format_number(double value);

void write_estimates(const std::filesystem::path& path, const std::vector<EstimateRow>& rows);

/// Writes `content` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace sae
