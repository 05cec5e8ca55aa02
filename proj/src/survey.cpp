#include "sae/survey.hpp"

#include <cmath>
#include <map>

#include "sae/error.hpp"
#include "sae/numeric.hpp"

namespace sae {

std::size_t SurveyDataset::num_covariates() const {
  return units.empty() ? 0 : units.front().covariates.size();
}

AreaPartition::AreaPartition(std::vector<AreaInfo> areas) : areas_(std::move(areas)) {
  if (areas_.empty()) throw ValidationError("area partition must contain at least one area");
  for (std::size_t i = 0; i < areas_.size(); ++i) {
    const auto& a = areas_[i];
    if (a.area_id.empty()) throw ValidationError("empty area id in partition");
    if (a.population_size && !(*a.population_size >= 0.0 && std::isfinite(*a.population_size))) {
      throw ValidationError("area '" + a.area_id + "' has an invalid population size");
    }
    if (!index_.emplace(a.area_id, i).second) {
      throw ValidationError("duplicate area id '" + a.area_id + "' in partition");
    }
  }
}

AreaPartition AreaPartition::from_ids(const std::vector<std::string>& ids) {
  std::vector<AreaInfo> areas;
  areas.reserve(ids.size());
  for (const auto& id : ids) areas.push_back({id, std::nullopt});
  return AreaPartition(std::move(areas));
}

std::optional<std::size_t> AreaPartition::index_of(const std::string& area_id) const {
  const auto it = index_.find(area_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> AreaPartition::ids() const {
  std::vector<std::string> out;
  out.reserve(areas_.size());
  for (const auto& a : areas_) out.push_back(a.area_id);
  return out;
}

std::optional<double> AreaPartition::total_population() const {
  double total = 0.0;
  for (const auto& a : areas_) {
    if (!a.population_size) return std::nullopt;
    total += *a.population_size;
  }
  return total;
}

void validate_dataset(const SurveyDataset& data, const AreaPartition& partition) {
  if (data.empty()) throw ValidationError("survey dataset is empty");
  const std::size_t p = data.num_covariates();
  for (std::size_t i = 0; i < data.units.size(); ++i) {
    const auto& u = data.units[i];
    const std::string where = "unit '" + u.unit_id + "'";
    if (!(u.weight > 0.0) || !std::isfinite(u.weight)) {
      throw ValidationError(where + " has a nonpositive or non-finite weight");
    }
    if (u.response != 0 && u.response != 1) throw ValidationError(where + " has a non-binary response");
    if (u.covariates.size() != p) {
      throw ValidationError(where + " has " + std::to_string(u.covariates.size()) +
                            " covariates, expected " + std::to_string(p));
    }
    for (double z : u.covariates) {
      if (!std::isfinite(z)) throw ValidationError(where + " has a non-finite covariate");
    }
    if (!partition.index_of(u.area_id)) {
      throw ValidationError(where + " references unknown area '" + u.area_id + "'");
    }
  }
}

std::string flags_to_string(std::uint32_t flags) {
  static constexpr std::pair<EstimateFlag, const char*> kNames[] = {
      {EstimateFlag::no_direct_estimate, "no_direct_estimate"},
      {EstimateFlag::degenerate_variance, "degenerate_variance"},
      {EstimateFlag::clamped, "clamped"},
      {EstimateFlag::no_direct_correction, "no_direct_correction"},
      {EstimateFlag::not_in_likelihood, "not_design_consistent"},
  };
  std::string out;
  for (const auto& [flag, name] : kNames) {
    if (!has_flag(flags, flag)) continue;
    if (!out.empty()) out += ';';
    out += name;
  }
  return out;
}

bool AreaEstimate::has_estimate() const { return std::isfinite(estimate); }

bool AreaEstimate::usable_for_smoothing() const {
  if (has_flag(flags, EstimateFlag::no_direct_estimate) ||
      has_flag(flags, EstimateFlag::degenerate_variance) ||
      has_flag(flags, EstimateFlag::no_direct_correction)) {
    return false;
  }
  return std::isfinite(logit_estimate) && std::isfinite(logit_variance) && logit_variance > 0.0;
}

namespace {

std::vector<std::vector<std::size_t>> units_by_area(const SurveyDataset& data,
                                                    const std::vector<AreaEstimate>& areas) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t a = 0; a < areas.size(); ++a) index.emplace(areas[a].area_id, a);
  std::vector<std::vector<std::size_t>> groups(areas.size());
  for (std::size_t i = 0; i < data.units.size(); ++i) {
    const auto it = index.find(data.units[i].area_id);
    if (it == index.end()) {
      throw ValidationError("unit '" + data.units[i].unit_id + "' references unknown area '" +
                            data.units[i].area_id + "'");
    }
    groups[it->second].push_back(i);
  }
  return groups;
}

}  // namespace

AreaEstimateSet hajek_estimate(const SurveyDataset& data, const AreaPartition& partition) {
  validate_dataset(data, partition);
  AreaEstimateSet out;
  out.method_tag = "hajek";
  out.areas.resize(partition.size());
  for (std::size_t a = 0; a < partition.size(); ++a) out.areas[a].area_id = partition[a].area_id;

  const auto groups = units_by_area(data, out.areas);
  for (std::size_t a = 0; a < groups.size(); ++a) {
    auto& est = out.areas[a];
    est.sample_size = groups[a].size();
    if (groups[a].empty()) {
      est.flags = est.flags | EstimateFlag::no_direct_estimate;
      continue;
    }
    CompensatedSum wy;
    CompensatedSum w;
    std::map<std::string_view, int> clusters;
    for (std::size_t i : groups[a]) {
      const auto& u = data.units[i];
      w.add(u.weight);
      wy.add(u.weight * u.response);
      clusters[u.cluster_id] = 1;
    }
    est.effective_weight_total = w.value();
    est.cluster_count = clusters.size();
    est.estimate = wy.value() / w.value();
  }
  return out;
}

std::optional<double> with_replacement_variance(std::span<const VarianceTerm> terms,
                                                double weight_total, bool clustered) {
  std::vector<double> totals;
  if (clustered) {
    std::map<std::string_view, double> by_cluster;
    for (const auto& t : terms) by_cluster[t.cluster_id] += t.value;
    totals.reserve(by_cluster.size());
    for (const auto& [id, v] : by_cluster) totals.push_back(v);
  } else {
    totals.reserve(terms.size());
    for (const auto& t : terms) totals.push_back(t.value);
  }
  const std::size_t k = totals.size();
  if (k < 2) return std::nullopt;
  const double mean = compensated_mean(totals);
  CompensatedSum ss;
  for (double v : totals) ss.add((v - mean) * (v - mean));
  const double kd = static_cast<double>(k);
  return ss.value() * kd / (kd - 1.0) / (weight_total * weight_total);
}

AreaEstimateSet hajek_variance(const SurveyDataset& data, const AreaEstimateSet& estimates,
                               bool clustered) {
  AreaEstimateSet out = estimates;
  const auto groups = units_by_area(data, out.areas);
  std::vector<VarianceTerm> terms;
  for (std::size_t a = 0; a < groups.size(); ++a) {
    auto& est = out.areas[a];
    if (!est.has_estimate()) continue;
    terms.clear();
    for (std::size_t i : groups[a]) {
      const auto& u = data.units[i];
      terms.push_back({u.weight * (u.response - est.estimate), u.cluster_id});
    }
    const auto v = with_replacement_variance(terms, est.effective_weight_total, clustered);
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

}  // namespace sae
