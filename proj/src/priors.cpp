#include "sae/priors.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "sae/error.hpp"

namespace sae {

PcPriorSigma::PcPriorSigma(double threshold, double tail_prob) {
  if (!(threshold > 0.0) || !std::isfinite(threshold)) {
    throw DomainError("PC prior for sigma needs a positive threshold");
  }
  if (!(tail_prob > 0.0 && tail_prob < 1.0)) {
    throw DomainError("PC prior for sigma needs a tail probability in (0,1)");
  }
  rate_ = -std::log(tail_prob) / threshold;
}

double PcPriorSigma::density(double sigma) const {
  return sigma < 0.0 ? 0.0 : rate_ * std::exp(-rate_ * sigma);
}

double PcPriorSigma::log_density(double sigma) const {
  return sigma < 0.0 ? -std::numeric_limits<double>::infinity() : std::log(rate_) - rate_ * sigma;
}

double PcPriorSigma::tail_probability(double sigma) const {
  return sigma <= 0.0 ? 1.0 : std::exp(-rate_ * sigma);
}

namespace {

// t - log(1 + t), accurate for small |t|.
double kl_term(double t) {
  if (std::abs(t) < 1e-3) {
    const double t2 = t * t;
    return t2 * (0.5 - t / 3.0 + t2 / 4.0 - t2 * t / 5.0);
  }
  return t - std::log1p(t);
}

}  // namespace

PcPriorPhi::PcPriorPhi(const SpatialStructure& structure, double threshold, double tail_prob,
                       PhiTail tail)
    : PcPriorPhi(structure.nonnull_eigenvalues(), threshold, tail_prob, tail) {}

PcPriorPhi::PcPriorPhi(Eigen::VectorXd nonnull_eigenvalues, double threshold, double tail_prob,
                       PhiTail tail)
    : gamma_(std::move(nonnull_eigenvalues)), threshold_(threshold), tail_prob_(tail_prob), tail_(tail) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw DomainError("PC prior for phi needs a threshold in (0,1)");
  if (!(tail_prob > 0.0 && tail_prob < 1.0)) {
    throw DomainError("PC prior for phi needs a tail probability in (0,1)");
  }
  if (gamma_.size() == 0 || (gamma_.array() - 1.0).abs().maxCoeff() < 1e-12) {
    throw DomainError("PC prior for phi is degenerate: the structured and iid models coincide");
  }

  grid_.resize(kGridPoints);
  dprime_.resize(kGridPoints);
  dist_.resize(kGridPoints);
  for (int k = 0; k < kGridPoints; ++k) {
    const double phi = static_cast<double>(k) / (kGridPoints - 1);
    grid_[k] = phi;
    dist_[k] = distance(phi);
    dprime_[k] = distance_derivative(phi);
  }

  const auto [lo, hi] = attainable_range();
  if (!(tail_prob > lo && tail_prob < hi)) {
    std::ostringstream msg;
    msg << "PC prior for phi cannot be calibrated to P(phi " << (tail_ == PhiTail::upper ? ">" : "<")
        << " " << threshold << ") = " << tail_prob << " with a positive rate; attainable range is ("
        << lo << ", " << hi << ")";
    throw DomainError(msg.str());
  }

  // Upper-tail mass falls as the rate grows; lower-tail mass rises.
  auto excess = [&](double rate) {
    const double m = calibration_mass(rate);
    return tail_ == PhiTail::upper ? m - tail_prob : tail_prob - m;
  };
  double lo_rate = 0.0;
  double hi_rate = 1.0;
  while (excess(hi_rate) > 0.0) {
    lo_rate = hi_rate;
    hi_rate *= 2.0;
    if (hi_rate > 1e8) throw NumericalError("PC prior for phi: rate bracket search failed");
  }
  while (hi_rate - lo_rate > 1e-8 * std::max(1.0, hi_rate)) {
    const double mid = 0.5 * (lo_rate + hi_rate);
    (excess(mid) > 0.0 ? lo_rate : hi_rate) = mid;
  }
  rate_ = 0.5 * (lo_rate + hi_rate);

  double z = 0.0;
  for (int k = 1; k < kGridPoints; ++k) {
    z += 0.5 * (grid_[k] - grid_[k - 1]) * (unnormalized(rate_, grid_[k]) + unnormalized(rate_, grid_[k - 1]));
  }
  normalizer_ = z;
}

double PcPriorPhi::kld(double phi) const {
  double s = 0.0;
  for (Eigen::Index j = 0; j < gamma_.size(); ++j) s += kl_term(phi * (gamma_(j) - 1.0));
  return 0.5 * s;
}

double PcPriorPhi::kld_derivative(double phi) const {
  double s = 0.0;
  for (Eigen::Index j = 0; j < gamma_.size(); ++j) {
    const double g = gamma_(j) - 1.0;
    s += g - g / (1.0 + phi * g);
  }
  return 0.5 * s;
}

double PcPriorPhi::distance(double phi) const { return std::sqrt(2.0 * kld(phi)); }

double PcPriorPhi::distance_derivative(double phi) const {
  // d ~ phi * sqrt(sum (gamma-1)^2 / 2) near the base model.
  if (phi < 1e-6) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < gamma_.size(); ++j) s += (gamma_(j) - 1.0) * (gamma_(j) - 1.0);
    return std::sqrt(0.5 * s);
  }
  return kld_derivative(phi) / distance(phi);
}

double PcPriorPhi::unnormalized(double rate, double phi) const {
  return rate * std::exp(-rate * distance(phi)) * std::abs(distance_derivative(phi));
}

double PcPriorPhi::calibration_mass(double rate) const {
  // Trapezoid over the fixed grid, with a partial panel at the threshold.
  double upper = 0.0;
  double total = 0.0;
  for (int k = 1; k < kGridPoints; ++k) {
    const double a = grid_[k - 1];
    const double b = grid_[k];
    const double fa = rate * std::exp(-rate * dist_[k - 1]) * std::abs(dprime_[k - 1]);
    const double fb = rate * std::exp(-rate * dist_[k]) * std::abs(dprime_[k]);
    const double panel = 0.5 * (b - a) * (fa + fb);
    total += panel;
    if (a >= threshold_) {
      upper += panel;
    } else if (b > threshold_) {
      const double ft = fa + (fb - fa) * (threshold_ - a) / (b - a);
      upper += 0.5 * (b - threshold_) * (ft + fb);
    }
  }
  const double p_upper = upper / total;
  return tail_ == PhiTail::upper ? p_upper : 1.0 - p_upper;
}

std::pair<double, double> PcPriorPhi::attainable_range() const {
  // Rate -> 0: density proportional to |d'|, mass = share of distance beyond U.
  const double share_below = distance(threshold_) / distance(1.0);
  if (tail_ == PhiTail::upper) return {0.0, 1.0 - share_below};
  return {share_below, 1.0};
}

double PcPriorPhi::density(double phi) const {
  if (phi < 0.0 || phi > 1.0) return 0.0;
  return unnormalized(rate_, phi) / normalizer_;
}

double PcPriorPhi::log_density(double phi) const {
  if (phi < 0.0 || phi > 1.0) return -std::numeric_limits<double>::infinity();
  return std::log(rate_) - rate_ * distance(phi) + std::log(std::abs(distance_derivative(phi))) -
         std::log(normalizer_);
}

double PcPriorPhi::probability(double lo, double hi) const {
  lo = std::max(lo, 0.0);
  hi = std::min(hi, 1.0);
  if (hi <= lo) return 0.0;
  constexpr int kPanels = 4000;
  const double h = (hi - lo) / kPanels;
  double s = 0.5 * (density(lo) + density(hi));
  for (int k = 1; k < kPanels; ++k) s += density(lo + k * h);
  return s * h;
}

}  // namespace sae
