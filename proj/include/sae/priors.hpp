#pragma once

// Penalized-complexity priors for the BYM2 hyperparameters: an exponential
// prior on the standard deviation sigma, and an exponential prior on the
// Kullback-Leibler distance d(phi) of the mixing parameter from phi = 0.

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sae/spatial.hpp"

namespace sae {

/// lambda exp(-lambda sigma), lambda = -ln(alpha) / U, so P(sigma > U) = alpha.
class PcPriorSigma {
 public:
  PcPriorSigma(double threshold, double tail_prob);

  double rate() const { return rate_; }
  double density(double sigma) const;
  double log_density(double sigma) const;
  double tail_probability(double sigma) const;

 private:
  double rate_;
};

/// Which side of the threshold the calibration mass refers to:
/// upper means P(phi > U) = alpha, lower means P(phi < U) = alpha.
enum class PhiTail { upper, lower };

class PcPriorPhi {
 public:
  static constexpr int kGridPoints = 2001;

  /// Solves for the rate by bisection. Throws DomainError for thresholds or
  /// tail probabilities outside (0,1), and when alpha is outside the range
  /// attainable by any positive rate (the message reports that range).
  PcPriorPhi(const SpatialStructure& structure, double threshold, double tail_prob,
             PhiTail tail = PhiTail::upper);

  /// Same prior from the non-null eigenvalues of the scaled ICAR covariance.
  PcPriorPhi(Eigen::VectorXd nonnull_eigenvalues, double threshold, double tail_prob,
             PhiTail tail = PhiTail::upper);

  double rate() const { return rate_; }
  /// d(phi) = sqrt(2 KLD(phi)).
  double distance(double phi) const;
  double distance_derivative(double phi) const;
  double density(double phi) const;
  double log_density(double phi) const;
  /// Trapezoid mass of the normalized density on [lo, hi].
  double probability(double lo, double hi) const;

  /// Tail probabilities reachable as the rate sweeps (0, infinity), as an
  /// open interval (lo, hi).
  std::pair<double, double> attainable_range() const;

 private:
  double kld(double phi) const;
  double kld_derivative(double phi) const;
  double unnormalized(double rate, double phi) const;
  double calibration_mass(double rate) const;

  Eigen::VectorXd gamma_;
  double threshold_;
  double tail_prob_;
  PhiTail tail_;
  double rate_ = 0.0;
  double normalizer_ = 1.0;
  std::vector<double> grid_;
  std::vector<double> dprime_;
  std::vector<double> dist_;
};

}  // namespace sae
