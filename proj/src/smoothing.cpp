#include "sae/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "sae/error.hpp"
#include "sae/numeric.hpp"

namespace sae {

AreaEffect AreaEffect::iid(std::size_t num_areas) {
  AreaEffect e;
  e.size_ = num_areas;
  return e;
}

AreaEffect AreaEffect::bym2(std::shared_ptr<const SpatialStructure> structure) {
  if (!structure) throw ValidationError("BYM2 area effect needs a spatial structure");
  AreaEffect e;
  e.size_ = structure->size();
  e.structure_ = std::move(structure);
  return e;
}

Eigen::MatrixXd AreaEffect::covariance(double sigma, double phi) const {
  if (structure_) return bym2_covariance(*structure_, sigma, phi);
  const auto n = static_cast<Eigen::Index>(size_);
  return sigma * sigma * Eigen::MatrixXd::Identity(n, n);
}

ObservedAreas select_observed(const AreaEstimateSet& estimates, const Eigen::MatrixXd& covariates) {
  if (static_cast<std::size_t>(covariates.rows()) != estimates.areas.size()) {
    throw ValidationError("area covariate matrix has " + std::to_string(covariates.rows()) +
                          " rows for " + std::to_string(estimates.areas.size()) + " areas");
  }
  ObservedAreas obs;
  for (std::size_t a = 0; a < estimates.areas.size(); ++a) {
    if (estimates.areas[a].usable_for_smoothing()) obs.index.push_back(a);
  }
  const auto n = static_cast<Eigen::Index>(obs.index.size());
  obs.logit_estimate.resize(n);
  obs.logit_variance.resize(n);
  obs.design.resize(n, covariates.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& est = estimates.areas[obs.index[static_cast<std::size_t>(i)]];
    obs.logit_estimate(i) = est.logit_estimate;
    obs.logit_variance(i) = est.logit_variance;
    obs.design.row(i) = covariates.row(static_cast<Eigen::Index>(obs.index[static_cast<std::size_t>(i)]));
  }
  return obs;
}

double restricted_log_likelihood(const ObservedAreas& obs, const Eigen::MatrixXd& effect_cov) {
  Eigen::MatrixXd c = effect_cov;
  c.diagonal() += obs.logit_variance;
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const double logdet_c = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();

  const Eigen::MatrixXd ci_x = llt.solve(obs.design);
  const Eigen::VectorXd ci_y = llt.solve(obs.logit_estimate);
  const Eigen::MatrixXd info = obs.design.transpose() * ci_x;
  Eigen::LLT<Eigen::MatrixXd> info_llt(info);
  if (info_llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const double logdet_info = 2.0 * info_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Eigen::VectorXd beta = info_llt.solve(obs.design.transpose() * ci_y);
  const Eigen::VectorXd r = obs.logit_estimate - obs.design * beta;
  const double quad = r.dot(llt.solve(r));
  return -0.5 * (logdet_c + logdet_info + quad);
}

namespace {

Eigen::MatrixXd observed_block(const Eigen::MatrixXd& full, const std::vector<std::size_t>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      out(i, j) = full(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]),
                       static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]));
    }
  }
  return out;
}

// Symmetric PSD square root via eigendecomposition; tiny negative eigenvalues
// from round-off are clipped.
Eigen::MatrixXd psd_root(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of posterior covariance failed");
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

// Gaussian conditional of (beta, u) given one hyperparameter node.
struct NodePosterior {
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd beta_root;
  Eigen::MatrixXd gain;         // Cov(u, y_O) C^-1, A x |O|
  Eigen::MatrixXd effect_root;  // root of Cov(u | beta, y)
};

NodePosterior node_posterior(const ObservedAreas& obs, const AreaEffect& effect, double sigma, double phi) {
  const Eigen::MatrixXd sigma_u = effect.covariance(sigma, phi);
  const auto A = sigma_u.rows();
  const auto n = static_cast<Eigen::Index>(obs.index.size());
  Eigen::MatrixXd cross(A, n);  // Cov(u, y_O)
  for (Eigen::Index j = 0; j < n; ++j) {
    cross.col(j) = sigma_u.col(static_cast<Eigen::Index>(obs.index[static_cast<std::size_t>(j)]));
  }
  Eigen::MatrixXd c = observed_block(sigma_u, obs.index);
  c.diagonal() += obs.logit_variance;
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) throw NumericalError("marginal covariance is not positive definite");

  NodePosterior post;
  const Eigen::MatrixXd ci_x = llt.solve(obs.design);
  const Eigen::MatrixXd info = obs.design.transpose() * ci_x;
  Eigen::LLT<Eigen::MatrixXd> info_llt(info);
  if (info_llt.info() != Eigen::Success) throw NumericalError("GLS information matrix is singular");
  post.beta_hat = info_llt.solve(ci_x.transpose() * obs.logit_estimate);
  const Eigen::MatrixXd beta_cov = info_llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
  post.beta_root = psd_root(beta_cov);

  post.gain = llt.solve(cross.transpose()).transpose();
  const Eigen::MatrixXd cond_cov = sigma_u - post.gain * cross.transpose();
  post.effect_root = psd_root(cond_cov);
  return post;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return out;
}

void validate_grid(const GridConfig& g, bool spatial) {
  if (g.sigma_points < 1 || !(g.log_sigma_max >= g.log_sigma_min)) {
    throw ValidationError("invalid sigma grid configuration");
  }
  if (spatial && (g.phi_points < 1 || !(g.phi_min > 0.0 && g.phi_max < 1.0 && g.phi_min <= g.phi_max))) {
    throw ValidationError("invalid phi grid configuration");
  }
  if (!(g.trim_log_units > 0.0)) throw ValidationError("grid trim must be positive");
}

}  // namespace

double log_evidence(const ObservedAreas& obs, const AreaEffect& effect, double sigma, double phi) {
  return restricted_log_likelihood(obs, observed_block(effect.covariance(sigma, phi), obs.index));
}

PosteriorSummary summarize(std::vector<double> values) {
  PosteriorSummary s;
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.mean = compensated_mean(values);
  CompensatedSum ss;
  for (double v : values) ss.add((v - s.mean) * (v - s.mean));
  s.sd = values.size() > 1 ? std::sqrt(ss.value() / static_cast<double>(values.size() - 1)) : 0.0;
  s.median = quantile_sorted(values, 0.5);
  s.lower90 = quantile_sorted(values, 0.05);
  s.upper90 = quantile_sorted(values, 0.95);
  s.lower50 = quantile_sorted(values, 0.25);
  s.upper50 = quantile_sorted(values, 0.75);
  return s;
}

SmoothingResult fit_smoothing_model(const AreaEstimateSet& estimates, const Eigen::MatrixXd& covariates,
                                    const AreaEffect& effect, const SmoothingOptions& options) {
  const std::size_t A = estimates.areas.size();
  if (effect.size() != A) {
    throw ValidationError("area effect has " + std::to_string(effect.size()) + " areas, estimates have " +
                          std::to_string(A));
  }
  if (options.draws < 1) throw ValidationError("draw count must be positive");
  validate_grid(options.grid, effect.spatial());

  const ObservedAreas obs = select_observed(estimates, covariates);
  if (obs.index.empty()) throw ValidationError("no area has a usable direct estimate for smoothing");
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(obs.design);
    qr.setThreshold(1e-10);
    if (qr.rank() < obs.design.cols() || obs.design.rows() <= obs.design.cols()) {
      throw ValidationError("area covariates are rank deficient on the " + std::to_string(obs.index.size()) +
                            " areas entering the smoothing likelihood");
    }
  }

  SmoothingResult result;
  result.method_tag = effect.spatial() ? "smoothed_spatial" : "smoothed_iid";
  if (options.draws < 1000) {
    result.warnings.push_back("draw count " + std::to_string(options.draws) +
                              " < 1000; interval endpoints carry noticeable Monte Carlo error");
  }

  const PcPriorSigma sigma_prior(options.priors.sigma_threshold, options.priors.sigma_tail_prob);
  std::optional<PcPriorPhi> phi_prior;
  if (effect.spatial()) {
    phi_prior.emplace(effect.structure(), options.priors.phi_threshold, options.priors.phi_tail_prob,
                      options.priors.phi_tail);
  }

  const auto& g = options.grid;
  const auto log_sigmas = linspace(g.log_sigma_min, g.log_sigma_max, g.sigma_points);
  std::vector<std::optional<double>> phis{std::nullopt};
  if (effect.spatial()) {
    phis.clear();
    for (double t : linspace(logit(g.phi_min), logit(g.phi_max), g.phi_points)) phis.emplace_back(expit(t));
  }

  // Uniform spacing in log sigma and logit phi: the quadrature weight of a
  // node is the prior density times the Jacobian of the transform.
  std::vector<GridNode> nodes;
  nodes.reserve(log_sigmas.size() * phis.size());
  const Eigen::MatrixXd structured_obs =
      effect.spatial() ? observed_block(effect.structure().scaled_covariance, obs.index) : Eigen::MatrixXd();
  const auto n_obs = static_cast<Eigen::Index>(obs.index.size());
  const Eigen::MatrixXd identity_obs = Eigen::MatrixXd::Identity(n_obs, n_obs);
  for (double ls : log_sigmas) {
    const double sigma = std::exp(ls);
    const double log_prior_sigma = sigma_prior.log_density(sigma) + ls;
    for (const auto& phi : phis) {
      GridNode node;
      node.log_sigma = ls;
      node.phi = phi;
      Eigen::MatrixXd cov = phi ? ((1.0 - *phi) * identity_obs + *phi * structured_obs) : identity_obs;
      cov *= sigma * sigma;
      double lp = restricted_log_likelihood(obs, cov) + log_prior_sigma;
      if (phi) lp += phi_prior->log_density(*phi) + std::log(*phi) + std::log1p(-*phi);
      node.log_posterior = lp;
      nodes.push_back(node);
    }
  }

  double max_lp = -std::numeric_limits<double>::infinity();
  for (const auto& n : nodes) max_lp = std::max(max_lp, n.log_posterior);
  if (!std::isfinite(max_lp)) throw NumericalError("smoothing model evidence is not finite on any grid node");
  HyperparameterGrid& grid = result.grid;
  for (const auto& n : nodes) {
    if (n.log_posterior >= max_lp - g.trim_log_units) {
      grid.nodes.push_back(n);
    } else {
      ++grid.trimmed;
    }
  }
  CompensatedSum total;
  for (auto& n : grid.nodes) {
    n.weight = std::exp(n.log_posterior - max_lp);
    total.add(n.weight);
  }
  for (auto& n : grid.nodes) n.weight /= total.value();
  grid.normalized = true;

  CompensatedSum mean_sigma;
  CompensatedSum mean_phi;
  for (const auto& n : grid.nodes) {
    mean_sigma.add(n.weight * std::exp(n.log_sigma));
    if (n.phi) mean_phi.add(n.weight * *n.phi);
  }
  result.posterior_mean_sigma = mean_sigma.value();
  if (effect.spatial()) result.posterior_mean_phi = mean_phi.value();

  // Draws: each draw owns a seeded stream, so the output does not depend on
  // the order in which node posteriors are prepared.
  std::vector<double> cumulative(grid.nodes.size());
  {
    double c = 0.0;
    for (std::size_t i = 0; i < grid.nodes.size(); ++i) cumulative[i] = (c += grid.nodes[i].weight);
    cumulative.back() = 1.0;
  }
  const auto M = static_cast<std::size_t>(options.draws);
  std::vector<std::size_t> node_of_draw(M);
  for (std::size_t m = 0; m < M; ++m) {
    std::mt19937_64 rng(derive_seed(options.seed, m));
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    node_of_draw[m] = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    node_of_draw[m] = std::min(node_of_draw[m], grid.nodes.size() - 1);
  }
  std::map<std::size_t, NodePosterior> posteriors;
  for (std::size_t k : node_of_draw) {
    if (posteriors.count(k)) continue;
    const auto& n = grid.nodes[k];
    posteriors.emplace(k, node_posterior(obs, effect, std::exp(n.log_sigma), n.phi.value_or(0.0)));
  }

  const auto Ai = static_cast<Eigen::Index>(A);
  const auto k = covariates.cols();
  result.draws.resize(static_cast<Eigen::Index>(M), Ai);
  result.effect_draws.resize(static_cast<Eigen::Index>(M), Ai);
  Eigen::MatrixXd beta_draws(static_cast<Eigen::Index>(M), k);
  Eigen::VectorXd z_beta(k);
  Eigen::VectorXd z_u(Ai);
  for (std::size_t m = 0; m < M; ++m) {
    std::mt19937_64 rng(derive_seed(options.seed, m));
    std::uniform_real_distribution<double>(0.0, 1.0)(rng);  // node selection
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index j = 0; j < k; ++j) z_beta(j) = normal(rng);
    for (Eigen::Index j = 0; j < Ai; ++j) z_u(j) = normal(rng);
    const auto& post = posteriors.at(node_of_draw[m]);
    const Eigen::VectorXd beta = post.beta_hat + post.beta_root * z_beta;
    const Eigen::VectorXd resid = obs.logit_estimate - obs.design * beta;
    const Eigen::VectorXd u = post.gain * resid + post.effect_root * z_u;
    const Eigen::VectorXd eta = covariates * beta + u;
    const auto row = static_cast<Eigen::Index>(m);
    beta_draws.row(row) = beta.transpose();
    result.effect_draws.row(row) = u.transpose();
    for (Eigen::Index a = 0; a < Ai; ++a) result.draws(row, a) = expit_guarded(eta(a));
  }

  std::vector<char> observed(A, 0);
  for (std::size_t a : obs.index) observed[a] = 1;
  result.areas.resize(A);
  std::vector<double> column(M);
  for (std::size_t a = 0; a < A; ++a) {
    auto& ap = result.areas[a];
    ap.area_id = estimates.areas[a].area_id;
    ap.observed = observed[a] != 0;
    ap.flags = estimates.areas[a].flags;
    if (!ap.observed) ap.flags = ap.flags | EstimateFlag::not_in_likelihood;
    for (std::size_t m = 0; m < M; ++m) {
      column[m] = result.draws(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(a));
    }
    ap.p = summarize(column);
  }
  result.coefficients.reserve(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    std::vector<double> col(beta_draws.col(j).data(), beta_draws.col(j).data() + beta_draws.rows());
    result.coefficients.push_back(summarize(std::move(col)));
  }
  return result;
}

SmoothingResult smooth_direct(const AreaEstimateSet& hajek, const Eigen::MatrixXd& covariates,
                              const AreaEffect& effect, const SmoothingOptions& options) {
  auto result = fit_smoothing_model(hajek, covariates, effect, options);
  result.method_tag = effect.spatial() ? "sh_spatial" : "sh_iid";
  return result;
}

SmoothingResult smooth_ma(const AreaEstimateSet& ma, const Eigen::MatrixXd& covariates,
                          const AreaEffect& effect, const SmoothingOptions& options) {
  auto result = fit_smoothing_model(ma, covariates, effect, options);
  result.method_tag = effect.spatial() ? "sma_spatial" : "sma_iid";
  return result;
}

}  // namespace sae
