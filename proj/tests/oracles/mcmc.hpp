#pragma once

// Metropolis-within-Gibbs sampler for the logit-scale area model
//   y_a ~ N(eta_a, V_a), eta = X beta + u, u ~ N(0, sigma^2 ((1-phi) I + phi Q~)),
// flat prior on beta, exponential prior on sigma, and a caller-supplied prior
// on phi. Gibbs updates for beta and u; random-walk updates for log sigma
// and logit phi, plus a joint move that rescales sigma and u together.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include <Eigen/Dense>

namespace oracle {

struct McmcInput {
  Eigen::VectorXd y;
  Eigen::VectorXd v;
  Eigen::MatrixXd x;
  Eigen::MatrixXd scaled_covariance;  // Q~; ignored when !spatial
  bool spatial = true;
  double sigma_rate = 0.0;
  std::function<double(double)> log_phi_prior;
};

struct McmcSummary {
  Eigen::VectorXd mean;  // posterior mean of expit(eta)
  Eigen::VectorXd sd;
  double sigma_mean = 0.0;
  double accept_sigma = 0.0;
  double accept_scale = 0.0;
  double accept_phi = 0.0;
};

inline McmcSummary run_mcmc(const McmcInput& in, long iterations, long burn_in, std::uint64_t seed) {
  const auto A = in.y.size();
  const auto k = in.x.cols();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto normals = [&](Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
    return z;
  };

  Eigen::MatrixXd evec = Eigen::MatrixXd::Identity(A, A);
  Eigen::VectorXd gamma = Eigen::VectorXd::Ones(A);
  if (in.spatial) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(in.scaled_covariance);
    evec = es.eigenvectors();
    gamma = es.eigenvalues().cwiseMax(0.0);
  }
  const Eigen::VectorXd w = in.v.cwiseInverse();
  const Eigen::MatrixXd xtwx = in.x.transpose() * w.asDiagonal() * in.x;
  const Eigen::LLT<Eigen::MatrixXd> xtwx_llt(xtwx);

  auto scales = [&](double sigma, double phi) {
    return Eigen::VectorXd((sigma * sigma) * ((1.0 - phi) + phi * gamma.array()).matrix());
  };
  auto log_u_prior = [&](const Eigen::VectorXd& u, double sigma, double phi) {
    const Eigen::VectorXd c = scales(sigma, phi);
    const Eigen::VectorXd proj = evec.transpose() * u;
    return -0.5 * (c.array().log().sum() + (proj.array().square() / c.array()).sum());
  };
  auto log_lik = [&](const Eigen::VectorXd& beta, const Eigen::VectorXd& u) {
    const Eigen::VectorXd r = in.y - in.x * beta - u;
    return -0.5 * (r.array().square() * w.array()).sum();
  };
  auto log_hyper = [&](double log_sigma, double logit_phi) {
    const double sigma = std::exp(log_sigma);
    double lp = std::log(in.sigma_rate) - in.sigma_rate * sigma + log_sigma;
    if (in.spatial) {
      const double phi = 1.0 / (1.0 + std::exp(-logit_phi));
      lp += in.log_phi_prior(phi) + std::log(phi) + std::log1p(-phi);
    }
    return lp;
  };
  auto phi_of = [&](double logit_phi) { return in.spatial ? 1.0 / (1.0 + std::exp(-logit_phi)) : 0.0; };

  Eigen::VectorXd beta = xtwx_llt.solve(in.x.transpose() * w.asDiagonal() * in.y);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(A);
  double log_sigma = std::log(0.5);
  double logit_phi = 0.0;

  McmcSummary out;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(A), sum_sq = Eigen::VectorXd::Zero(A);
  long kept = 0, acc_sigma = 0, acc_scale = 0, acc_phi = 0;
  double sigma_sum = 0.0;

  for (long it = 0; it < iterations + burn_in; ++it) {
    // beta | u
    const Eigen::VectorXd beta_mean = xtwx_llt.solve(in.x.transpose() * w.asDiagonal() * (in.y - u));
    beta = beta_mean + xtwx_llt.matrixU().solve(normals(k));

    // u | beta, sigma, phi
    const double sigma = std::exp(log_sigma), phi = phi_of(logit_phi);
    const Eigen::MatrixXd prior_prec = evec * scales(sigma, phi).cwiseInverse().asDiagonal() * evec.transpose();
    Eigen::MatrixXd prec = prior_prec;
    prec.diagonal() += w;
    const Eigen::LLT<Eigen::MatrixXd> llt(prec);
    const Eigen::VectorXd u_mean = llt.solve(w.cwiseProduct(in.y - in.x * beta));
    u = u_mean + llt.matrixU().solve(normals(A));

    // log sigma with u held fixed
    {
      const double prop = log_sigma + 0.6 * normal(rng);
      const double cur = log_u_prior(u, std::exp(log_sigma), phi) + log_hyper(log_sigma, logit_phi);
      const double nxt = log_u_prior(u, std::exp(prop), phi) + log_hyper(prop, logit_phi);
      if (std::log(unif(rng)) < nxt - cur) {
        log_sigma = prop;
        ++acc_sigma;
      }
    }
    // joint rescaling of sigma and u
    {
      const double eps = 0.4 * normal(rng);
      const Eigen::VectorXd u_prop = u * std::exp(eps);
      const double s = std::exp(log_sigma), s_prop = std::exp(log_sigma + eps);
      const double cur = log_lik(beta, u) + log_u_prior(u, s, phi) + log_hyper(log_sigma, logit_phi);
      const double nxt = log_lik(beta, u_prop) + log_u_prior(u_prop, s_prop, phi) +
                         log_hyper(log_sigma + eps, logit_phi) + static_cast<double>(A) * eps;
      if (std::log(unif(rng)) < nxt - cur) {
        log_sigma += eps;
        u = u_prop;
        ++acc_scale;
      }
    }
    // logit phi
    if (in.spatial) {
      const double prop = logit_phi + 1.2 * normal(rng);
      const double s = std::exp(log_sigma);
      const double cur = log_u_prior(u, s, phi_of(logit_phi)) + log_hyper(log_sigma, logit_phi);
      const double nxt = log_u_prior(u, s, phi_of(prop)) + log_hyper(log_sigma, prop);
      if (std::log(unif(rng)) < nxt - cur) {
        logit_phi = prop;
        ++acc_phi;
      }
    }

    if (it >= burn_in) {
      const Eigen::VectorXd eta = in.x * beta + u;
      const Eigen::VectorXd p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
      sum += p;
      sum_sq += p.cwiseProduct(p);
      sigma_sum += std::exp(log_sigma);
      ++kept;
    }
  }
  const double n = static_cast<double>(kept);
  out.mean = sum / n;
  out.sd = ((sum_sq / n - out.mean.cwiseProduct(out.mean)).cwiseMax(0.0) * (n / (n - 1.0))).cwiseSqrt();
  out.sigma_mean = sigma_sum / n;
  const double total = static_cast<double>(iterations + burn_in);
  out.accept_sigma = acc_sigma / total;
  out.accept_scale = acc_scale / total;
  out.accept_phi = acc_phi / total;
  return out;
}

}  // namespace oracle
