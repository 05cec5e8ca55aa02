#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace sae {

/// Two-sided 90% standard normal quantile, Phi^{-1}(0.95).
inline constexpr double kZ90 = 1.6448536269514722;

/// Linear predictors are clamped to this magnitude before expit.
inline constexpr double kEtaClamp = 30.0;

double logit(double p);
double expit(double eta);

/// expit with the linear predictor clamped to [-kEtaClamp, kEtaClamp], so the
/// result is strictly inside (0, 1).
double expit_guarded(double eta);

/// log(1 + exp(x)) without overflow.
double log1p_exp(double x);

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and nonempty.
double quantile_sorted(std::span<const double> sorted, double prob);

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

double compensated_mean(std::span<const double> values);

/// Mixes a base seed with a stream index into an independent 64-bit seed
/// (SplitMix64 finalizer over both words).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace sae
