#pragma once

// Finite-population survey data: sampled units, the area partition, and the
// direct (Hajek) estimator with a with-replacement linearization variance.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sae {

struct SampledUnit {
  std::string unit_id;
  std::string area_id;
  std::string cluster_id;
  std::string stratum_id;
  double weight = 1.0;  // inverse inclusion probability
  int response = 0;     // binary outcome
  std::vector<double> covariates;
};

struct SurveyDataset {
  std::vector<SampledUnit> units;

  std::size_t size() const { return units.size(); }
  bool empty() const { return units.empty(); }
  /// Covariate vector length p (0 for an empty dataset).
  std::size_t num_covariates() const;
};

struct AreaInfo {
  std::string area_id;
  std::optional<double> population_size;  // N_a; nullopt when unknown
};

/// Ordered set of disjoint areas. The order fixes the row order of every
/// per-area result and of the spatial structure.
class AreaPartition {
 public:
  AreaPartition() = default;
  explicit AreaPartition(std::vector<AreaInfo> areas);
  static AreaPartition from_ids(const std::vector<std::string>& ids);

  std::size_t size() const { return areas_.size(); }
  const AreaInfo& operator[](std::size_t i) const { return areas_[i]; }
  const std::vector<AreaInfo>& areas() const { return areas_; }
  std::optional<std::size_t> index_of(const std::string& area_id) const;
  std::vector<std::string> ids() const;
  /// Sum of N_a when every area's size is known.
  std::optional<double> total_population() const;

 private:
  std::vector<AreaInfo> areas_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Throws ValidationError when weights are nonpositive or non-finite,
/// responses are non-binary, covariate lengths differ, or an area id is
/// missing from the partition.
void validate_dataset(const SurveyDataset& data, const AreaPartition& partition);

enum class EstimateFlag : std::uint32_t {
  none = 0,
  no_direct_estimate = 1u << 0,   // n_a = 0
  degenerate_variance = 1u << 1,  // n_a = 1, m_a = 1, or zero variance
  clamped = 1u << 2,              // estimate moved to keep the logit finite
  no_direct_correction = 1u << 3, // frame predictions only (MA with n_a = 0)
  not_in_likelihood = 1u << 4,    // predicted by the smoothing model only
};

constexpr std::uint32_t operator|(std::uint32_t lhs, EstimateFlag rhs) {
  return lhs | static_cast<std::uint32_t>(rhs);
}
constexpr bool has_flag(std::uint32_t flags, EstimateFlag f) {
  return (flags & static_cast<std::uint32_t>(f)) != 0;
}
std::string flags_to_string(std::uint32_t flags);

struct AreaEstimate {
  std::string area_id;
  double estimate = kMissing;
  double variance = kMissing;
  double logit_estimate = kMissing;
  double logit_variance = kMissing;
  double effective_weight_total = 0.0;  // N-hat_a = sum of weights
  std::size_t sample_size = 0;
  std::size_t cluster_count = 0;
  std::uint32_t flags = 0;

  static constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

  bool has_estimate() const;
  /// True when the area can enter the smoothing likelihood.
  bool usable_for_smoothing() const;
};

struct AreaEstimateSet {
  std::string method_tag;
  std::vector<AreaEstimate> areas;  // aligned with the AreaPartition order
};

/// Per-area Hajek ratio estimator sum(w y) / sum(w).
AreaEstimateSet hajek_estimate(const SurveyDataset& data, const AreaPartition& partition);

/// Populates the design variance of Hajek estimates.
AreaEstimateSet hajek_variance(const SurveyDataset& data, const AreaEstimateSet& estimates,
                               bool clustered);

/// One linearized contribution t_i (e.g. w_i (y_i - p) or w_i e_i) and the
/// cluster it belongs to.
struct VarianceTerm {
  double value = 0.0;
  std::string_view cluster_id;
};

/// With-replacement variance of a Hajek-type mean,
///   (1/N^2) * k/(k-1) * sum_j (T_j - mean T)^2,
/// where T_j are the terms themselves (k = n) or their per-cluster totals
/// (k = number of clusters). Returns nullopt when k < 2.
std::optional<double> with_replacement_variance(std::span<const VarianceTerm> terms,
                                                double weight_total, bool clustered);

}  // namespace sae
