#include "sae/model_assisted.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "sae/error.hpp"
#include "sae/numeric.hpp"

namespace sae {

ResidualSet make_residuals(const SurveyDataset& data, const WorkingModelFit& fit) {
  const auto fitted = predict_units(fit, data);
  ResidualSet out;
  out.units.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& u = data.units[i];
    out.units.push_back({fitted[i] - u.response, u.weight, u.area_id, u.cluster_id});
  }
  return out;
}

double clamp_epsilon(double effective_weight_total) {
  return std::min(0.005, 1.0 / (2.0 * effective_weight_total));
}

AreaEstimateSet ma_estimate(const SurveyDataset& data, const PopulationFrame& frame,
                            const WorkingModelFit& fit, const AreaPartition& partition,
                            PredictionScaling scaling) {
  validate_dataset(data, partition);
  validate_frame(frame, partition);
  if (frame.num_covariates() != fit.num_covariates() && !frame.cells.empty()) {
    throw ValidationError("frame has " + std::to_string(frame.num_covariates()) +
                          " covariates but the working model has " +
                          std::to_string(fit.num_covariates()));
  }

  const std::size_t A = partition.size();
  std::vector<CompensatedSum> prediction_total(A), frame_count(A), weight_total(A), correction(A);
  std::vector<std::size_t> n(A, 0);
  std::vector<std::unordered_map<std::string, int>> clusters(A);

  const auto cell_pred = predict_frame(fit, frame);
  for (std::size_t c = 0; c < frame.cells.size(); ++c) {
    const std::size_t a = *partition.index_of(frame.cells[c].area_id);
    prediction_total[a].add(frame.cells[c].count * cell_pred[c]);
    frame_count[a].add(frame.cells[c].count);
  }
  const auto unit_pred = predict_units(fit, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& u = data.units[i];
    const std::size_t a = *partition.index_of(u.area_id);
    weight_total[a].add(u.weight);
    correction[a].add(u.weight * (u.response - unit_pred[i]));
    ++n[a];
    clusters[a][u.cluster_id] = 1;
  }

  AreaEstimateSet out;
  out.method_tag = "ma";
  out.areas.resize(A);
  for (std::size_t a = 0; a < A; ++a) {
    auto& est = out.areas[a];
    est.area_id = partition[a].area_id;
    est.sample_size = n[a];
    est.cluster_count = clusters[a].size();
    const bool has_frame = frame_count[a].value() > 0.0;
    if (n[a] == 0) {
      est.flags = est.flags | EstimateFlag::no_direct_estimate;
      if (has_frame) {
        est.flags = est.flags | EstimateFlag::no_direct_correction;
        est.estimate = prediction_total[a].value() / frame_count[a].value();
      }
      continue;
    }
    if (!has_frame) {
      throw ValidationError("population frame has no cells for sampled area '" + est.area_id + "'");
    }
    est.effective_weight_total = weight_total[a].value();
    double p = scaling == PredictionScaling::weight_total
                   ? (prediction_total[a].value() + correction[a].value()) / est.effective_weight_total
                   : prediction_total[a].value() / frame_count[a].value() +
                         correction[a].value() / est.effective_weight_total;
    if (p < 0.0 || p > 1.0) {
      p = std::clamp(p, 0.0, 1.0);
      est.flags = est.flags | EstimateFlag::clamped;
    }
    est.estimate = p;
  }
  return out;
}

AreaEstimateSet ma_variance(const ResidualSet& residuals, const AreaEstimateSet& estimates,
                            bool clustered) {
  AreaEstimateSet out = estimates;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t a = 0; a < out.areas.size(); ++a) index.emplace(out.areas[a].area_id, a);

  std::vector<std::vector<VarianceTerm>> terms(out.areas.size());
  for (const auto& r : residuals.units) {
    if (std::abs(r.residual) > 1.0) throw ValidationError("residual outside [-1, 1]");
    const auto it = index.find(r.area_id);
    if (it == index.end()) throw ValidationError("residual references unknown area '" + r.area_id + "'");
    terms[it->second].push_back({r.weight * r.residual, r.cluster_id});
  }
  for (std::size_t a = 0; a < out.areas.size(); ++a) {
    auto& est = out.areas[a];
    if (est.sample_size == 0) continue;
    const auto v = with_replacement_variance(terms[a], est.effective_weight_total, clustered);
    if (!v) {
      est.variance = AreaEstimate::kMissing;
      est.flags = est.flags | EstimateFlag::degenerate_variance;
      continue;
    }
    est.variance = *v;
    if (*v == 0.0) est.flags = est.flags | EstimateFlag::degenerate_variance;
  }
  return out;
}

AreaEstimateSet logit_with_delta(const AreaEstimateSet& estimates) {
  AreaEstimateSet out = estimates;
  for (auto& est : out.areas) {
    if (!est.has_estimate() || est.sample_size == 0) continue;
    const double eps = clamp_epsilon(est.effective_weight_total);
    const double p = std::clamp(est.estimate, eps, 1.0 - eps);
    if (p != est.estimate) est.flags = est.flags | EstimateFlag::clamped;
    est.logit_estimate = logit(p);
    if (std::isfinite(est.variance)) {
      const double d = p * (1.0 - p);
      est.logit_variance = est.variance / (d * d);
    }
  }
  return out;
}

}  // namespace sae
