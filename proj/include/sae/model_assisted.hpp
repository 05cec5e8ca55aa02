#pragma once

// Logistic-GREG model-assisted area estimator (Hajek-like form), its
// with-replacement design variance, and the logit / delta-method transfer
// that feeds the smoothing stage.

#include <string>
#include <vector>

#include "sae/survey.hpp"
#include "sae/working_model.hpp"

namespace sae {

struct Residual {
  double residual = 0.0;  // e_i = yhat_i - y_i
  double weight = 1.0;
  std::string area_id;
  std::string cluster_id;
};

struct ResidualSet {
  std::vector<Residual> units;
};

ResidualSet make_residuals(const SurveyDataset& data, const WorkingModelFit& fit);

/// Half-width of the boundary clamp: min(0.005, 1 / (2 N-hat)).
double clamp_epsilon(double effective_weight_total);

/// How the frame prediction total is turned into a mean.
enum class PredictionScaling {
  frame_total,   // population-weighted mean of the frame predictions
  weight_total,  // prediction total divided by N-hat = sum_S w
};

/// frame_total:  p_MA = sum_cells count * yhat / sum_cells count + sum_S w (y - yhat) / N-hat
/// weight_total: p_MA = (sum_cells count * yhat + sum_S w (y - yhat)) / N-hat
/// with N-hat = sum_S w. The two agree whenever the frame count equals N-hat;
/// otherwise weight_total carries an extra error of about mean(yhat) (N / N-hat - 1)
/// that the variance estimator does not see.
/// Areas with frame cells but no sample get the synthetic frame mean and are
/// flagged no_direct_correction. Estimates outside [0,1] are clipped and flagged.
AreaEstimateSet ma_estimate(const SurveyDataset& data, const PopulationFrame& frame,
                            const WorkingModelFit& fit, const AreaPartition& partition,
                            PredictionScaling scaling = PredictionScaling::frame_total);

/// Design variance of MA estimates from weighted residual totals; per-cluster
/// totals when `clustered`.
AreaEstimateSet ma_variance(const ResidualSet& residuals, const AreaEstimateSet& estimates,
                            bool clustered);

/// logit_estimate = logit(p~), logit_variance = V / (p~(1-p~))^2 where p~ is
/// the estimate clamped to [eps, 1-eps].
AreaEstimateSet logit_with_delta(const AreaEstimateSet& estimates);

}  // namespace sae
