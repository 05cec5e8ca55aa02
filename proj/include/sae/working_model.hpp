#pragma once

// Survey-weighted logistic working model fitted by safeguarded IRLS, and
// prediction over a population frame of individuals or pixel aggregates.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/survey.hpp"

namespace sae {

struct IrlsOptions {
  double relative_deviance_tolerance = 1e-8;
  /// Score max-norm tolerance, per unit of mean weight.
  double score_tolerance = 1e-8;
  int max_iterations = 50;
  int max_step_halvings = 10;
  /// |coefficient| beyond which a non-shrinking Newton step signals separation.
  double separation_bound = 15.0;
};

struct WorkingModelFit {
  Eigen::VectorXd coefficients;  // intercept first, then z1..zp
  bool converged = false;
  int iterations = 0;
  double final_weighted_deviance = 0.0;
  double weighted_score_norm = 0.0;  // max-norm of sum_i w_i z_i (y_i - q_i)
  double score_tolerance = 0.0;      // absolute tolerance the fit was held to
  std::vector<double> deviance_trace;

  std::size_t num_covariates() const {
    return coefficients.size() == 0 ? 0 : static_cast<std::size_t>(coefficients.size()) - 1;
  }
  /// z' gamma, intercept included.
  double linear_predictor(std::span<const double> covariates) const;
};

struct FrameCell {
  std::string cell_id;
  std::string area_id;
  double count = 1.0;  // population units represented (1 = an individual)
  std::vector<double> covariates;
};

struct PopulationFrame {
  std::vector<FrameCell> cells;

  std::size_t num_covariates() const {
    return cells.empty() ? 0 : cells.front().covariates.size();
  }
};

/// Throws ValidationError on nonpositive counts, ragged covariates, or cells
/// in areas outside the partition.
void validate_frame(const PopulationFrame& frame, const AreaPartition& partition);

/// Maximizes sum_i w_i [y_i eta_i - log(1 + exp(eta_i))] over gamma.
WorkingModelFit fit_weighted_logistic(const SurveyDataset& data, const IrlsOptions& options = {});

/// expit(z' gamma) per frame cell.
std::vector<double> predict_frame(const WorkingModelFit& fit, const PopulationFrame& frame);

/// Fitted values for the sampled units.
std::vector<double> predict_units(const WorkingModelFit& fit, const SurveyDataset& data);

/// Weighted Bernoulli-logit log-likelihood; exposed for optimizer cross-checks.
double weighted_log_likelihood(const SurveyDataset& data, const Eigen::VectorXd& coefficients);

}  // namespace sae
