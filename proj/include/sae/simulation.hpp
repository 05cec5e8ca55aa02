#pragma once

// Desk-scale design-based simulation: a k x k lattice of areas with frozen
// cluster locations, sizes, and covariates; responses and random effects are
// regenerated per replicate; clusters are drawn by informative sequential
// weighted sampling without replacement within strata.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sae/model_assisted.hpp"
#include "sae/smoothing.hpp"
#include "sae/spatial.hpp"
#include "sae/survey.hpp"
#include "sae/working_model.hpp"

namespace sae {

inline constexpr std::size_t kSimCovariates = 8;

struct SimulationConfig {
  std::size_t lattice_size = 5;  // k, giving k*k areas with rook adjacency
  std::size_t strata_per_area = 2;        // urban / rural split of each area
  std::size_t clusters_per_stratum = 60;  // keeps the sampling fraction small
  std::size_t sampled_per_stratum = 10;
  double cluster_size_mean = 15.0;
  double intercept = 0.0;
  std::array<double, kSimCovariates> coefficients{1.0, -1.0, 0.5, 0.25, 0.25, 1.5, 0.1, 0.1};
  double area_sd = 0.1;
  double cluster_sd = 0.5;
  double oversampling_ratio = 3.0;
  double oversampling_quantile = 0.75;
  double icar_variance = 1.0;
  double matern_range = 1.5;  // in area widths
  double matern_smoothness = 1.0;
  double matern_variance = 1.0;
  double surrogate_range = 4.0;
  std::size_t replicates = 200;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::size_t exact_inclusion_max = 64;
  std::size_t inclusion_replays = 100000;
  bool smoothing = true;
  PredictionScaling prediction_scaling = PredictionScaling::frame_total;
  SmoothingOptions smoothing_options;

  std::size_t num_areas() const { return lattice_size * lattice_size; }
  void validate() const;
};

struct SimCluster {
  std::string cluster_id;
  std::size_t area = 0;
  std::size_t stratum = 0;
  double x = 0.0;
  double y = 0.0;
  std::size_t size = 0;
  std::array<double, kSimCovariates> covariates{};
  bool oversampled = false;          // x6 in the top quantile
  double inclusion_probability = 0;  // within its stratum
};

/// Everything held fixed across replicates.
struct PopulationLayout {
  SimulationConfig config;
  std::vector<std::string> area_ids;
  std::vector<std::string> stratum_ids;
  std::vector<std::size_t> stratum_area;
  std::vector<SimCluster> clusters;
  std::vector<std::vector<std::size_t>> strata;  // cluster indices per stratum
  std::shared_ptr<const SpatialStructure> area_structure;
  double oversampling_threshold = 0.0;
  bool inclusion_exact = true;

  AreaPartition partition() const;
  /// One frame cell per cluster, all eight covariates.
  PopulationFrame frame() const;
};

struct SimulatedPopulation {
  std::shared_ptr<const PopulationLayout> layout;
  std::vector<double> area_effect;
  std::vector<double> risk;                       // q_c
  std::vector<std::vector<std::uint8_t>> responses;  // per cluster
  std::vector<double> true_proportion;            // p_a, realized
};

std::shared_ptr<const PopulationLayout> build_population_layout(const SimulationConfig& config,
                                                               std::uint64_t seed);

/// Regenerates area effects, cluster effects, and unit responses.
SimulatedPopulation realize_population(std::shared_ptr<const PopulationLayout> layout, std::uint64_t seed);

/// build_population_layout followed by realize_population.
SimulatedPopulation generate_population(const SimulationConfig& config, std::uint64_t seed);

struct InclusionResult {
  std::vector<double> probability;
  std::vector<double> standard_error;  // zero when exact
  bool exact = true;
};

/// Inclusion probabilities of sequential draws without replacement with
/// selection probability proportional to `weights` among remaining units.
/// Exact (dynamic programming over counts drawn per distinct weight) when
/// weights.size() <= exact_max, otherwise estimated from `replays` replays.
InclusionResult sequential_inclusion_probabilities(const std::vector<double>& weights, std::size_t draws,
                                                   std::size_t exact_max, std::size_t replays,
                                                   std::uint64_t seed);

/// Draws `draws` distinct indices by sequential weighted selection.
std::vector<std::size_t> sequential_weighted_draw(const std::vector<double>& weights, std::size_t draws,
                                                  std::uint64_t seed);

/// Samples clusters within every stratum, observes all their units, and sets
/// w_i = 1 / pi_c. Covariates carry all eight x's.
SurveyDataset draw_informative_sample(const SimulatedPopulation& population, std::uint64_t seed);

/// Keeps covariate columns `columns` (0-based) of every unit / cell.
SurveyDataset select_covariates(const SurveyDataset& data, const std::vector<std::size_t>& columns);
PopulationFrame select_covariates(const PopulationFrame& frame, const std::vector<std::size_t>& columns);

/// Covariate columns of the working models: full drops x4; reduced drops x4, x6.
const std::vector<std::size_t>& full_covariate_columns();
const std::vector<std::size_t>& reduced_covariate_columns();

struct MethodRun {
  std::vector<double> estimate;
  std::vector<double> lower;  // empty when the method has no intervals
  std::vector<double> upper;
};

struct MethodSeries {
  std::string method;
  std::vector<MethodRun> runs;  // one per replicate, aligned with the truths
};

struct ReplicateMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> cov90;
  std::optional<double> mil;
};

struct MethodMetrics {
  std::string method;
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> cov90;
  std::optional<double> mil;
  std::vector<ReplicateMetrics> per_replicate;
};

struct SimulationMetrics {
  std::vector<MethodMetrics> methods;
  std::vector<std::string> warnings;
  std::size_t completed_replicates = 0;
  std::size_t failed_replicates = 0;

  const MethodMetrics& at(const std::string& method) const;
};

/// RMSE, MAE, closed-interval coverage, and mean interval length per
/// replicate, averaged over replicates.
ReplicateMetrics replicate_metrics(const std::vector<double>& truth, const MethodRun& run);
SimulationMetrics compute_metrics(const std::vector<std::vector<double>>& truths,
                                  const std::vector<MethodSeries>& methods);

/// Estimator roster per replicate, in report order.
const std::vector<std::string>& study_methods(bool smoothing);

/// Runs the full comparison; replicates run on config.threads workers and
/// the result is independent of the thread count.
SimulationMetrics run_study(const SimulationConfig& config);

}  // namespace sae
