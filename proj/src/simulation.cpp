#include "sae/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "sae/error.hpp"
#include "sae/model_assisted.hpp"
#include "sae/numeric.hpp"

namespace sae {

void SimulationConfig::validate() const {
  if (lattice_size < 2) throw ValidationError("simulation lattice must be at least 2 x 2");
  if (strata_per_area < 1) throw ValidationError("strata_per_area must be at least 1");
  if (clusters_per_stratum < 1) throw ValidationError("clusters_per_stratum must be at least 1");
  if (sampled_per_stratum < 1 || sampled_per_stratum > clusters_per_stratum) {
    throw ValidationError("sampled_per_stratum must lie in [1, clusters_per_stratum]");
  }
  if (!(cluster_size_mean > 0.0)) throw ValidationError("cluster size mean must be positive");
  if (!(area_sd >= 0.0) || !(cluster_sd >= 0.0) || !(icar_variance >= 0.0) || !(matern_variance >= 0.0)) {
    throw ValidationError("standard deviations and variances must be nonnegative");
  }
  if (!(oversampling_ratio >= 1.0)) throw ValidationError("oversampling ratio must be at least 1");
  if (!(oversampling_quantile > 0.0 && oversampling_quantile < 1.0)) {
    throw ValidationError("oversampling quantile must lie in (0,1)");
  }
  if (!(matern_range > 0.0) || !(surrogate_range > 0.0) || !(matern_smoothness > 0.0)) {
    throw ValidationError("Matern range and smoothness must be positive");
  }
  if (replicates < 1) throw ValidationError("replicate count must be positive");
  if (threads < 1) throw ValidationError("thread count must be positive");
  if (inclusion_replays < 1) throw ValidationError("inclusion replays must be positive");
}

AreaPartition PopulationLayout::partition() const {
  std::vector<AreaInfo> areas;
  std::vector<double> totals(area_ids.size(), 0.0);
  for (const auto& c : clusters) totals[c.area] += static_cast<double>(c.size);
  for (std::size_t a = 0; a < area_ids.size(); ++a) areas.push_back({area_ids[a], totals[a]});
  return AreaPartition(std::move(areas));
}

PopulationFrame PopulationLayout::frame() const {
  PopulationFrame f;
  f.cells.reserve(clusters.size());
  for (const auto& c : clusters) {
    f.cells.push_back({c.cluster_id, area_ids[c.area], static_cast<double>(c.size),
                       std::vector<double>(c.covariates.begin(), c.covariates.end())});
  }
  return f;
}

namespace {

std::string padded(const char* prefix, std::size_t i, std::size_t width) {
  std::string digits = std::to_string(i);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

Eigen::VectorXd standard_normals(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

double matern(double h, double range, double smoothness, double variance) {
  if (h <= 0.0) return variance;
  const double kappa = std::sqrt(8.0 * smoothness) / range;
  const double t = kappa * h;
  return variance * std::pow(2.0, 1.0 - smoothness) / std::tgamma(smoothness) * std::pow(t, smoothness) *
         std::cyl_bessel_k(smoothness, t);
}

// Gaussian field with Matern covariance at the cluster locations.
Eigen::VectorXd matern_field(const std::vector<SimCluster>& clusters, double range, double smoothness,
                             double variance, std::mt19937_64& rng) {
  const auto n = static_cast<Eigen::Index>(clusters.size());
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const auto& a = clusters[static_cast<std::size_t>(i)];
      const auto& b = clusters[static_cast<std::size_t>(j)];
      cov(i, j) = cov(j, i) = matern(std::hypot(a.x - b.x, a.y - b.y), range, smoothness, variance);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    cov.diagonal().array() += 1e-10;
    llt.compute(cov);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("Matern covariance is not positive definite even with 1e-10 jitter");
    }
  }
  return llt.matrixL() * standard_normals(rng, n);
}

// Zero-mean ICAR field with scaled (geometric-mean one) marginal variances.
Eigen::VectorXd icar_field(const SpatialStructure& s, double variance, std::mt19937_64& rng) {
  return std::sqrt(variance) * (s.covariance_root() * standard_normals(rng, static_cast<Eigen::Index>(s.size())));
}

std::size_t draw_one(const std::vector<double>& weights, const std::vector<char>& taken, double remaining,
                     std::mt19937_64& rng) {
  const double target = std::uniform_real_distribution<double>(0.0, remaining)(rng);
  double acc = 0.0;
  std::size_t last = weights.size();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (taken[i]) continue;
    last = i;
    acc += weights[i];
    if (target < acc) return i;
  }
  return last;
}

std::vector<std::size_t> weighted_draw(const std::vector<double>& weights, std::size_t draws,
                                       std::mt19937_64& rng) {
  std::vector<char> taken(weights.size(), 0);
  double remaining = 0.0;
  for (double w : weights) remaining += w;
  std::vector<std::size_t> out;
  out.reserve(draws);
  for (std::size_t k = 0; k < draws; ++k) {
    const std::size_t i = draw_one(weights, taken, remaining, rng);
    taken[i] = 1;
    remaining -= weights[i];
    out.push_back(i);
  }
  return out;
}

// Exact inclusion probabilities by dynamic programming over how many units of
// each distinct weight have been drawn. Returns nullopt if the state space is
// too large.
std::optional<std::vector<double>> exact_inclusion(const std::vector<double>& weights, std::size_t draws) {
  std::map<double, std::size_t> class_of;
  for (double w : weights) class_of.emplace(w, 0);
  std::vector<double> class_weight;
  for (auto& [w, k] : class_of) {
    k = class_weight.size();
    class_weight.push_back(w);
  }
  const std::size_t K = class_weight.size();
  std::vector<std::size_t> class_size(K, 0);
  for (double w : weights) ++class_size[class_of.at(w)];

  constexpr std::size_t kMaxStates = 2'000'000;
  using State = std::vector<std::size_t>;
  std::map<State, double> current{{State(K, 0), 1.0}};
  for (std::size_t step = 0; step < draws; ++step) {
    std::map<State, double> next;
    for (const auto& [state, prob] : current) {
      double remaining = 0.0;
      for (std::size_t k = 0; k < K; ++k) remaining += class_weight[k] * static_cast<double>(class_size[k] - state[k]);
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t left = class_size[k] - state[k];
        if (left == 0) continue;
        State s = state;
        ++s[k];
        next[s] += prob * class_weight[k] * static_cast<double>(left) / remaining;
      }
      if (next.size() > kMaxStates) return std::nullopt;
    }
    current = std::move(next);
  }
  std::vector<double> expected(K, 0.0);
  for (const auto& [state, prob] : current) {
    for (std::size_t k = 0; k < K; ++k) expected[k] += prob * static_cast<double>(state[k]);
  }
  std::vector<double> out(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const std::size_t k = class_of.at(weights[i]);
    out[i] = expected[k] / static_cast<double>(class_size[k]);
  }
  return out;
}

}  // namespace

std::vector<std::size_t> sequential_weighted_draw(const std::vector<double>& weights, std::size_t draws,
                                                  std::uint64_t seed) {
  if (draws > weights.size()) throw ValidationError("cannot draw more units than the stratum holds");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("selection weights must be positive");
  }
  std::mt19937_64 rng(seed);
  return weighted_draw(weights, draws, rng);
}

InclusionResult sequential_inclusion_probabilities(const std::vector<double>& weights, std::size_t draws,
                                                   std::size_t exact_max, std::size_t replays,
                                                   std::uint64_t seed) {
  if (draws > weights.size()) {
    throw ValidationError("stratum has " + std::to_string(weights.size()) + " clusters, fewer than the " +
                          std::to_string(draws) + " requested");
  }
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("selection weights must be positive");
  }
  InclusionResult res;
  const std::size_t n = weights.size();
  res.standard_error.assign(n, 0.0);
  if (draws == n) {
    res.probability.assign(n, 1.0);
    return res;
  }
  if (n <= exact_max) {
    if (auto exact = exact_inclusion(weights, draws)) {
      res.probability = std::move(*exact);
      return res;
    }
  }
  res.exact = false;
  std::vector<double> hits(n, 0.0);
  std::mt19937_64 rng(seed);
  for (std::size_t r = 0; r < replays; ++r) {
    for (std::size_t i : weighted_draw(weights, draws, rng)) hits[i] += 1.0;
  }
  res.probability.resize(n);
  const double R = static_cast<double>(replays);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = hits[i] / R;
    res.probability[i] = p;
    res.standard_error[i] = std::sqrt(p * (1.0 - p) / R);
    if (p == 0.0) {
      throw NumericalError("Monte Carlo inclusion probability is zero; increase inclusion_replays");
    }
  }
  return res;
}

std::shared_ptr<const PopulationLayout> build_population_layout(const SimulationConfig& config,
                                                               std::uint64_t seed) {
  config.validate();
  auto layout = std::make_shared<PopulationLayout>();
  layout->config = config;
  const std::size_t k = config.lattice_size;
  const std::size_t A = k * k;
  for (std::size_t a = 0; a < A; ++a) layout->area_ids.push_back(padded("A", a + 1, 2));
  layout->area_structure =
      std::make_shared<const SpatialStructure>(build_spatial_structure(layout->area_ids, lattice_edges(k, k)));

  // Each area splits into 2 x 2 subareas for the finer ICAR covariate.
  std::vector<std::string> sub_ids;
  for (std::size_t s = 0; s < 4 * A; ++s) sub_ids.push_back(padded("S", s + 1, 3));
  const SpatialStructure sub_structure = build_spatial_structure(sub_ids, lattice_edges(2 * k, 2 * k));

  std::mt19937_64 geo_rng(derive_seed(seed, 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::poisson_distribution<int> poisson(config.cluster_size_mean);
  for (std::size_t a = 0; a < A; ++a) {
    const double row = static_cast<double>(a / k);
    const double col = static_cast<double>(a % k);
    for (std::size_t s = 0; s < config.strata_per_area; ++s) {
      const std::size_t stratum = layout->stratum_ids.size();
      layout->stratum_ids.push_back(layout->area_ids[a] + "-" + std::to_string(s + 1));
      layout->stratum_area.push_back(a);
      layout->strata.emplace_back();
      for (std::size_t c = 0; c < config.clusters_per_stratum; ++c) {
        SimCluster cl;
        cl.cluster_id = padded("C", layout->clusters.size() + 1, 5);
        cl.area = a;
        cl.stratum = stratum;
        cl.x = col + unit(geo_rng);
        cl.y = row + unit(geo_rng);
        int size = 0;
        while (size == 0) size = poisson(geo_rng);  // clusters are nonempty
        cl.size = static_cast<std::size_t>(size);
        layout->strata.back().push_back(layout->clusters.size());
        layout->clusters.push_back(cl);
      }
    }
  }

  auto& clusters = layout->clusters;
  std::mt19937_64 bern_rng(derive_seed(seed, 2));
  for (auto& cl : clusters) {
    cl.covariates[0] = unit(bern_rng) < 0.5 ? 1.0 : 0.0;
    const double p2 = 0.3 + 0.5 * static_cast<double>(cl.area + 1) / static_cast<double>(A);
    cl.covariates[1] = unit(bern_rng) < p2 ? 1.0 : 0.0;
  }
  std::mt19937_64 icar_rng(derive_seed(seed, 3));
  const Eigen::VectorXd x3 = icar_field(*layout->area_structure, config.icar_variance, icar_rng);
  std::mt19937_64 sub_rng(derive_seed(seed, 4));
  const Eigen::VectorXd x4 = icar_field(sub_structure, config.icar_variance, sub_rng);
  for (auto& cl : clusters) {
    cl.covariates[2] = x3(static_cast<Eigen::Index>(cl.area));
    const auto sub_row = static_cast<std::size_t>(std::floor(2.0 * cl.y));
    const auto sub_col = static_cast<std::size_t>(std::floor(2.0 * cl.x));
    const std::size_t sub = std::min(sub_row, 2 * k - 1) * 2 * k + std::min(sub_col, 2 * k - 1);
    cl.covariates[3] = x4(static_cast<Eigen::Index>(sub));
  }
  const std::array<std::pair<std::size_t, double>, 4> fields{
      {{4, config.matern_range}, {5, config.matern_range}, {6, config.surrogate_range}, {7, config.surrogate_range}}};
  for (const auto& [col, range] : fields) {
    std::mt19937_64 rng(derive_seed(seed, 5 + col));
    const Eigen::VectorXd f = matern_field(clusters, range, config.matern_smoothness, config.matern_variance, rng);
    for (std::size_t i = 0; i < clusters.size(); ++i) clusters[i].covariates[col] = f(static_cast<Eigen::Index>(i));
  }

  std::vector<double> x6;
  x6.reserve(clusters.size());
  for (const auto& cl : clusters) x6.push_back(cl.covariates[5]);
  std::sort(x6.begin(), x6.end());
  layout->oversampling_threshold = quantile_sorted(x6, config.oversampling_quantile);
  for (auto& cl : clusters) cl.oversampled = cl.covariates[5] > layout->oversampling_threshold;

  for (std::size_t s = 0; s < layout->strata.size(); ++s) {
    std::vector<double> w;
    for (std::size_t i : layout->strata[s]) w.push_back(clusters[i].oversampled ? config.oversampling_ratio : 1.0);
    const auto inc = sequential_inclusion_probabilities(w, config.sampled_per_stratum, config.exact_inclusion_max,
                                                        config.inclusion_replays, derive_seed(seed, 100 + s));
    layout->inclusion_exact = layout->inclusion_exact && inc.exact;
    for (std::size_t j = 0; j < layout->strata[s].size(); ++j) {
      clusters[layout->strata[s][j]].inclusion_probability = inc.probability[j];
    }
  }
  return layout;
}

SimulatedPopulation realize_population(std::shared_ptr<const PopulationLayout> layout, std::uint64_t seed) {
  const auto& cfg = layout->config;
  SimulatedPopulation pop;
  pop.layout = layout;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t A = layout->area_ids.size();
  pop.area_effect.resize(A);
  for (auto& u : pop.area_effect) u = cfg.area_sd * normal(rng);

  std::vector<double> ones(A, 0.0), total(A, 0.0);
  pop.risk.resize(layout->clusters.size());
  pop.responses.resize(layout->clusters.size());
  for (std::size_t i = 0; i < layout->clusters.size(); ++i) {
    const auto& cl = layout->clusters[i];
    double eta = cfg.intercept + pop.area_effect[cl.area] + cfg.cluster_sd * normal(rng);
    for (std::size_t j = 0; j < kSimCovariates; ++j) eta += cfg.coefficients[j] * cl.covariates[j];
    pop.risk[i] = expit(eta);
    auto& y = pop.responses[i];
    y.resize(cl.size);
    for (auto& v : y) {
      v = unit(rng) < pop.risk[i] ? 1 : 0;
      ones[cl.area] += v;
    }
    total[cl.area] += static_cast<double>(cl.size);
  }
  pop.true_proportion.resize(A);
  for (std::size_t a = 0; a < A; ++a) pop.true_proportion[a] = ones[a] / total[a];
  return pop;
}

SimulatedPopulation generate_population(const SimulationConfig& config, std::uint64_t seed) {
  return realize_population(build_population_layout(config, seed), derive_seed(seed, 99));
}

SurveyDataset draw_informative_sample(const SimulatedPopulation& population, std::uint64_t seed) {
  const auto& layout = *population.layout;
  const auto& cfg = layout.config;
  SurveyDataset data;
  for (std::size_t s = 0; s < layout.strata.size(); ++s) {
    const auto& members = layout.strata[s];
    if (members.size() < cfg.sampled_per_stratum) {
      throw ValidationError("stratum '" + layout.stratum_ids[s] + "' has fewer clusters than requested");
    }
    std::vector<double> w;
    for (std::size_t i : members) w.push_back(layout.clusters[i].oversampled ? cfg.oversampling_ratio : 1.0);
    for (std::size_t j : sequential_weighted_draw(w, cfg.sampled_per_stratum, derive_seed(seed, s))) {
      const std::size_t ci = members[j];
      const auto& cl = layout.clusters[ci];
      const double weight = 1.0 / cl.inclusion_probability;
      for (std::size_t u = 0; u < cl.size; ++u) {
        data.units.push_back({cl.cluster_id + "-" + std::to_string(u + 1), layout.area_ids[cl.area], cl.cluster_id,
                              layout.stratum_ids[s], weight, population.responses[ci][u],
                              std::vector<double>(cl.covariates.begin(), cl.covariates.end())});
      }
    }
  }
  return data;
}

SurveyDataset select_covariates(const SurveyDataset& data, const std::vector<std::size_t>& columns) {
  SurveyDataset out = data;
  for (auto& u : out.units) {
    std::vector<double> z;
    z.reserve(columns.size());
    for (std::size_t c : columns) z.push_back(u.covariates.at(c));
    u.covariates = std::move(z);
  }
  return out;
}

PopulationFrame select_covariates(const PopulationFrame& frame, const std::vector<std::size_t>& columns) {
  PopulationFrame out = frame;
  for (auto& cell : out.cells) {
    std::vector<double> z;
    z.reserve(columns.size());
    for (std::size_t c : columns) z.push_back(cell.covariates.at(c));
    cell.covariates = std::move(z);
  }
  return out;
}

const std::vector<std::size_t>& full_covariate_columns() {
  static const std::vector<std::size_t> cols{0, 1, 2, 4, 5, 6, 7};
  return cols;
}

const std::vector<std::size_t>& reduced_covariate_columns() {
  static const std::vector<std::size_t> cols{0, 1, 2, 4, 6, 7};
  return cols;
}

const MethodMetrics& SimulationMetrics::at(const std::string& method) const {
  for (const auto& m : methods) {
    if (m.method == method) return m;
  }
  throw ValidationError("no metrics for method '" + method + "'");
}

ReplicateMetrics replicate_metrics(const std::vector<double>& truth, const MethodRun& run) {
  if (run.estimate.size() != truth.size()) throw ValidationError("estimate and truth vectors are not aligned");
  const bool intervals = !run.lower.empty();
  if (intervals && (run.lower.size() != truth.size() || run.upper.size() != truth.size())) {
    throw ValidationError("interval vectors are not aligned with the truth");
  }
  const double A = static_cast<double>(truth.size());
  CompensatedSum sq, ab, cover, len;
  for (std::size_t a = 0; a < truth.size(); ++a) {
    const double err = run.estimate[a] - truth[a];
    sq.add(err * err);
    ab.add(std::abs(err));
    if (intervals) {
      // Closed intervals: an endpoint equal to the truth counts as covering.
      cover.add(run.lower[a] <= truth[a] && truth[a] <= run.upper[a] ? 1.0 : 0.0);
      len.add(run.upper[a] - run.lower[a]);
    }
  }
  ReplicateMetrics m;
  m.rmse = std::sqrt(sq.value() / A);
  m.mae = ab.value() / A;
  if (intervals) {
    m.cov90 = cover.value() / A;
    m.mil = len.value() / A;
  }
  return m;
}

SimulationMetrics compute_metrics(const std::vector<std::vector<double>>& truths,
                                  const std::vector<MethodSeries>& methods) {
  SimulationMetrics out;
  out.completed_replicates = truths.size();
  for (const auto& series : methods) {
    if (series.runs.size() != truths.size()) {
      throw ValidationError("method '" + series.method + "' has " + std::to_string(series.runs.size()) +
                            " replicates, expected " + std::to_string(truths.size()));
    }
    MethodMetrics mm;
    mm.method = series.method;
    bool all_intervals = !series.runs.empty();
    std::vector<double> rmse, mae, cov, mil;
    for (std::size_t r = 0; r < truths.size(); ++r) {
      auto rep = replicate_metrics(truths[r], series.runs[r]);
      rmse.push_back(rep.rmse);
      mae.push_back(rep.mae);
      if (rep.cov90) {
        cov.push_back(*rep.cov90);
        mil.push_back(*rep.mil);
      } else {
        all_intervals = false;
      }
      mm.per_replicate.push_back(rep);
    }
    mm.rmse = compensated_mean(rmse);
    mm.mae = compensated_mean(mae);
    if (all_intervals) {
      mm.cov90 = compensated_mean(cov);
      mm.mil = compensated_mean(mil);
    } else {
      out.warnings.push_back("method '" + series.method + "' lacks intervals; excluded from Cov90 and MIL");
    }
    out.methods.push_back(std::move(mm));
  }
  return out;
}

const std::vector<std::string>& study_methods(bool smoothing) {
  static const std::vector<std::string> with_smoothing{
      "Hajek",  "MA reduced",          "SH iid",  "SMA iid reduced", "SH spatial",
      "SMA spatial reduced", "MA full", "SMA iid full", "SMA spatial full"};
  static const std::vector<std::string> direct_only{"Hajek", "MA reduced", "MA full"};
  return smoothing ? with_smoothing : direct_only;
}

namespace {

struct ReplicateOutcome {
  std::vector<double> truth;
  std::vector<MethodRun> runs;  // aligned with study_methods()
};

MethodRun direct_run(const AreaEstimateSet& est) {
  MethodRun run;
  for (const auto& a : est.areas) {
    const double se = std::sqrt(a.variance);
    run.estimate.push_back(a.estimate);
    run.lower.push_back(std::max(0.0, a.estimate - kZ90 * se));
    run.upper.push_back(std::min(1.0, a.estimate + kZ90 * se));
  }
  return run;
}

MethodRun smoothed_run(const SmoothingResult& res) {
  MethodRun run;
  for (const auto& a : res.areas) {
    run.estimate.push_back(a.p.median);
    run.lower.push_back(a.p.lower90);
    run.upper.push_back(a.p.upper90);
  }
  return run;
}

struct StudyContext {
  const SimulationConfig& config;
  std::shared_ptr<const PopulationLayout> layout;
  AreaPartition partition;
  PopulationFrame frame_reduced;
  PopulationFrame frame_full;
  Eigen::MatrixXd area_design;
  AreaEffect iid;
  AreaEffect spatial;
};

ReplicateOutcome run_replicate(const StudyContext& ctx, std::size_t r) {
  const auto& cfg = ctx.config;
  const std::uint64_t seed = derive_seed(cfg.seed, 1000 + r);
  const auto pop = realize_population(ctx.layout, derive_seed(seed, 1));
  const auto sample = draw_informative_sample(pop, derive_seed(seed, 2));

  ReplicateOutcome out;
  out.truth = pop.true_proportion;
  const auto hajek =
      logit_with_delta(hajek_variance(sample, hajek_estimate(sample, ctx.partition), /*clustered=*/true));

  auto smoothing_options = [&](std::uint64_t stream) {
    SmoothingOptions o = cfg.smoothing_options;
    o.seed = derive_seed(seed, stream);
    return o;
  };
  auto model_assisted = [&](const std::vector<std::size_t>& cols, const PopulationFrame& frame) {
    const auto data = select_covariates(sample, cols);
    const auto fit = fit_weighted_logistic(data);
    if (!fit.converged) throw NumericalError("working model did not converge");
    const auto est = ma_estimate(data, frame, fit, ctx.partition, cfg.prediction_scaling);
    return logit_with_delta(ma_variance(make_residuals(data, fit), est, /*clustered=*/true));
  };
  const auto ma_reduced = model_assisted(reduced_covariate_columns(), ctx.frame_reduced);
  const auto ma_full = model_assisted(full_covariate_columns(), ctx.frame_full);

  out.runs.push_back(direct_run(hajek));
  out.runs.push_back(direct_run(ma_reduced));
  if (cfg.smoothing) {
    out.runs.push_back(smoothed_run(smooth_direct(hajek, ctx.area_design, ctx.iid, smoothing_options(10))));
    out.runs.push_back(smoothed_run(smooth_ma(ma_reduced, ctx.area_design, ctx.iid, smoothing_options(11))));
    out.runs.push_back(smoothed_run(smooth_direct(hajek, ctx.area_design, ctx.spatial, smoothing_options(12))));
    out.runs.push_back(smoothed_run(smooth_ma(ma_reduced, ctx.area_design, ctx.spatial, smoothing_options(13))));
  }
  out.runs.push_back(direct_run(ma_full));
  if (cfg.smoothing) {
    out.runs.push_back(smoothed_run(smooth_ma(ma_full, ctx.area_design, ctx.iid, smoothing_options(14))));
    out.runs.push_back(smoothed_run(smooth_ma(ma_full, ctx.area_design, ctx.spatial, smoothing_options(15))));
  }
  return out;
}

}  // namespace

SimulationMetrics run_study(const SimulationConfig& config) {
  config.validate();
  const auto layout = build_population_layout(config, config.seed);
  const auto frame = layout->frame();
  StudyContext ctx{config,
                   layout,
                   layout->partition(),
                   select_covariates(frame, reduced_covariate_columns()),
                   select_covariates(frame, full_covariate_columns()),
                   Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(layout->area_ids.size()), 1),
                   AreaEffect::iid(layout->area_ids.size()),
                   AreaEffect::bym2(layout->area_structure)};

  const std::size_t R = config.replicates;
  std::vector<std::optional<ReplicateOutcome>> outcomes(R);
  std::vector<std::string> errors(R);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < R; r = next++) {
      try {
        outcomes[r] = run_replicate(ctx, r);
      } catch (const std::exception& e) {
        errors[r] = e.what();
      }
    }
  };
  const std::size_t n_threads = std::min(config.threads, R);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const auto& names = study_methods(config.smoothing);
  std::vector<std::vector<double>> truths;
  std::vector<MethodSeries> series(names.size());
  for (std::size_t m = 0; m < names.size(); ++m) series[m].method = names[m];
  std::size_t failed = 0;
  std::vector<std::string> warnings;
  for (std::size_t r = 0; r < R; ++r) {
    if (!outcomes[r]) {
      ++failed;
      spdlog::warn("replicate {} skipped: {}", r, errors[r]);
      warnings.push_back("replicate " + std::to_string(r) + " skipped: " + errors[r]);
      continue;
    }
    truths.push_back(std::move(outcomes[r]->truth));
    for (std::size_t m = 0; m < names.size(); ++m) series[m].runs.push_back(std::move(outcomes[r]->runs[m]));
  }
  if (truths.empty()) throw NumericalError("every simulation replicate failed");
  auto metrics = compute_metrics(truths, series);
  metrics.failed_replicates = failed;
  metrics.warnings.insert(metrics.warnings.begin(), warnings.begin(), warnings.end());
  if (!layout->inclusion_exact) {
    metrics.warnings.push_back("inclusion probabilities estimated by Monte Carlo for strata above the exact limit");
  }
  return metrics;
}

}  // namespace sae
