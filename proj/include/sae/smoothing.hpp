#pragma once

// Logit-scale area-level smoothing model:
//   logit(p-hat_a) | eta_a ~ N(eta_a, V_a),  eta = X beta + u,
//   u ~ N(0, sigma^2 ((1 - phi) I + phi Q~))  (BYM2)  or  N(0, sigma^2 I)  (iid),
// with a flat prior on beta and PC priors on sigma and phi. Conditional on
// (sigma, phi) the model is jointly Gaussian, so the hyperparameter posterior
// is computed exactly on a grid and (beta, u) are drawn from their Gaussian
// conditionals.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/priors.hpp"
#include "sae/spatial.hpp"
#include "sae/survey.hpp"

namespace sae {

struct SmoothingPriors {
  double sigma_threshold = 5.0;
  double sigma_tail_prob = 0.01;
  double phi_threshold = 0.5;
  double phi_tail_prob = 2.0 / 3.0;
  PhiTail phi_tail = PhiTail::lower;
};

struct GridConfig {
  int sigma_points = 41;
  double log_sigma_min = -6.0;
  double log_sigma_max = 3.0;
  int phi_points = 41;  // logit-spaced
  double phi_min = 0.001;
  double phi_max = 0.999;
  double trim_log_units = 12.0;
};

struct SmoothingOptions {
  SmoothingPriors priors;
  GridConfig grid;
  int draws = 1000;
  std::uint64_t seed = 1;
};

/// Covariance family of the area effects.
class AreaEffect {
 public:
  static AreaEffect iid(std::size_t num_areas);
  static AreaEffect bym2(std::shared_ptr<const SpatialStructure> structure);

  bool spatial() const { return structure_ != nullptr; }
  std::size_t size() const { return size_; }
  const SpatialStructure& structure() const { return *structure_; }
  /// sigma^2 I for iid (phi ignored); the BYM2 covariance otherwise.
  Eigen::MatrixXd covariance(double sigma, double phi) const;

 private:
  std::size_t size_ = 0;
  std::shared_ptr<const SpatialStructure> structure_;
};

/// Areas entering the likelihood, with their logit estimates, variances, and
/// design rows.
struct ObservedAreas {
  std::vector<std::size_t> index;
  Eigen::VectorXd logit_estimate;
  Eigen::VectorXd logit_variance;
  Eigen::MatrixXd design;
};

ObservedAreas select_observed(const AreaEstimateSet& estimates, const Eigen::MatrixXd& covariates);

/// -1/2 [log|C| + log|X' C^-1 X| + r' C^-1 r], C = effect_cov + diag(V),
/// r = y - X beta-hat(C). `effect_cov` is restricted to the observed areas.
double restricted_log_likelihood(const ObservedAreas& obs, const Eigen::MatrixXd& effect_cov);

/// restricted_log_likelihood at (sigma, phi) for the given effect family.
double log_evidence(const ObservedAreas& obs, const AreaEffect& effect, double sigma, double phi);

struct GridNode {
  double log_sigma = 0.0;
  std::optional<double> phi;  // absent for the iid model
  double log_posterior = 0.0; // unnormalized: evidence + log prior + log Jacobian
  double weight = 0.0;        // normalized
};

struct HyperparameterGrid {
  std::vector<GridNode> nodes;
  bool normalized = false;
  std::size_t trimmed = 0;  // nodes dropped by the evidence trim
};

struct PosteriorSummary {
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  double lower90 = 0.0;
  double upper90 = 0.0;
  double lower50 = 0.0;
  double upper50 = 0.0;
};

struct AreaPosterior {
  std::string area_id;
  PosteriorSummary p;  // probability scale
  bool observed = false;
  std::uint32_t flags = 0;
};

struct SmoothingResult {
  std::string method_tag;
  std::vector<AreaPosterior> areas;
  Eigen::MatrixXd draws;        // draws x areas, probability scale
  Eigen::MatrixXd effect_draws; // draws x areas, u on the logit scale
  std::vector<PosteriorSummary> coefficients;
  HyperparameterGrid grid;
  double posterior_mean_sigma = 0.0;
  std::optional<double> posterior_mean_phi;
  std::vector<std::string> warnings;
};

/// `covariates` is A x k (intercept column included by the caller) and is
/// aligned with `estimates`. Throws ValidationError when no area is usable or
/// the observed design is rank deficient.
SmoothingResult fit_smoothing_model(const AreaEstimateSet& estimates, const Eigen::MatrixXd& covariates,
                                    const AreaEffect& effect, const SmoothingOptions& options);

/// Smoothed Hajek (SH): method tag sh_iid / sh_spatial.
SmoothingResult smooth_direct(const AreaEstimateSet& hajek, const Eigen::MatrixXd& covariates,
                              const AreaEffect& effect, const SmoothingOptions& options);

/// Smoothed model-assisted (SMA): method tag sma_iid / sma_spatial.
SmoothingResult smooth_ma(const AreaEstimateSet& ma, const Eigen::MatrixXd& covariates,
                          const AreaEffect& effect, const SmoothingOptions& options);

/// Summary of a sample (sorted internally).
PosteriorSummary summarize(std::vector<double> values);

}  // namespace sae
