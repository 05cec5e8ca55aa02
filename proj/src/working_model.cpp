#include "sae/working_model.hpp"

#include <algorithm>
#include <cmath>

#include "sae/error.hpp"
#include "sae/numeric.hpp"

namespace sae {

double WorkingModelFit::linear_predictor(std::span<const double> covariates) const {
  if (covariates.size() != num_covariates()) {
    throw ValidationError("covariate length " + std::to_string(covariates.size()) +
                          " does not match working model with " +
                          std::to_string(num_covariates()) + " covariates");
  }
  double eta = coefficients[0];
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    eta += coefficients[static_cast<Eigen::Index>(j) + 1] * covariates[j];
  }
  return eta;
}

void validate_frame(const PopulationFrame& frame, const AreaPartition& partition) {
  const std::size_t p = frame.num_covariates();
  for (const auto& c : frame.cells) {
    const std::string where = "frame cell '" + c.cell_id + "'";
    if (!(c.count > 0.0) || !std::isfinite(c.count)) {
      throw ValidationError(where + " has a nonpositive count");
    }
    if (c.covariates.size() != p) throw ValidationError(where + " has a ragged covariate vector");
    if (!partition.index_of(c.area_id)) {
      throw ValidationError(where + " references unknown area '" + c.area_id + "'");
    }
  }
}

namespace {

std::string column_name(Eigen::Index j) {
  return j == 0 ? std::string("intercept") : "z" + std::to_string(j);
}

Eigen::MatrixXd design_matrix(const SurveyDataset& data) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto p = static_cast<Eigen::Index>(data.num_covariates());
  Eigen::MatrixXd z(n, p + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& u = data.units[static_cast<std::size_t>(i)];
    z(i, 0) = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) z(i, j + 1) = u.covariates[static_cast<std::size_t>(j)];
  }
  return z;
}

void check_rank(const Eigen::MatrixXd& z) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  if (rank == z.cols()) return;
  std::string names;
  for (Eigen::Index k = rank; k < z.cols(); ++k) {
    if (!names.empty()) names += ", ";
    names += column_name(qr.colsPermutation().indices()(k));
  }
  throw ValidationError("working-model design matrix is rank deficient (rank " +
                        std::to_string(rank) + " of " + std::to_string(z.cols()) +
                        "); linearly dependent columns: " + names);
}

struct Evaluation {
  double deviance = 0.0;
  Eigen::VectorXd score;
  Eigen::VectorXd fitted;
};

Evaluation evaluate(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                    const Eigen::VectorXd& gamma) {
  Evaluation ev;
  const Eigen::VectorXd eta = z * gamma;
  ev.fitted.resize(eta.size());
  CompensatedSum loglik;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    ev.fitted(i) = expit_guarded(eta(i));
    loglik.add(w(i) * (y(i) * eta(i) - log1p_exp(eta(i))));
  }
  ev.deviance = -2.0 * loglik.value();
  ev.score = z.transpose() * (w.array() * (y - ev.fitted).array()).matrix();
  return ev;
}

}  // namespace

double weighted_log_likelihood(const SurveyDataset& data, const Eigen::VectorXd& coefficients) {
  const Eigen::MatrixXd z = design_matrix(data);
  if (coefficients.size() != z.cols()) throw ValidationError("coefficient length mismatch");
  const Eigen::VectorXd eta = z * coefficients;
  CompensatedSum ll;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const auto& u = data.units[static_cast<std::size_t>(i)];
    ll.add(u.weight * (u.response * eta(i) - log1p_exp(eta(i))));
  }
  return ll.value();
}

WorkingModelFit fit_weighted_logistic(const SurveyDataset& data, const IrlsOptions& options) {
  if (data.empty()) throw ValidationError("cannot fit working model to an empty dataset");
  const std::size_t p = data.num_covariates();
  if (data.size() < p + 2) {
    throw ValidationError("working model needs at least " + std::to_string(p + 2) +
                          " sampled units, got " + std::to_string(data.size()));
  }
  const Eigen::MatrixXd z = design_matrix(data);
  check_rank(z);

  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::VectorXd y(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& u = data.units[static_cast<std::size_t>(i)];
    if (!(u.weight > 0.0) || !std::isfinite(u.weight)) {
      throw ValidationError("unit '" + u.unit_id + "' has a nonpositive weight");
    }
    y(i) = u.response;
    w(i) = u.weight;
  }

  WorkingModelFit fit;
  fit.score_tolerance = options.score_tolerance * std::max(1.0, w.mean());
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(z.cols());
  Evaluation current = evaluate(z, y, w, gamma);
  fit.deviance_trace.push_back(current.deviance);
  double previous_step = std::numeric_limits<double>::infinity();

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    fit.iterations = iter;
    const Eigen::VectorXd working_weights =
        (w.array() * current.fitted.array() * (1.0 - current.fitted.array())).matrix();
    const Eigen::MatrixXd information = z.transpose() * working_weights.asDiagonal() * z;
    Eigen::LDLT<Eigen::MatrixXd> solver(information);
    if (solver.info() != Eigen::Success) throw NumericalError("IRLS information matrix is singular");
    Eigen::VectorXd step = solver.solve(current.score);

    Eigen::VectorXd candidate = gamma + step;
    Evaluation next = evaluate(z, y, w, candidate);
    // Near the optimum the deviance change falls below its own rounding
    // error; a full step that still shrinks the score is then accepted.
    const double roundoff = 1e-12 * (std::abs(current.deviance) + 1.0);
    if (next.deviance > current.deviance && next.deviance <= current.deviance + roundoff &&
        next.score.cwiseAbs().maxCoeff() < current.score.cwiseAbs().maxCoeff()) {
      next.deviance = current.deviance;
    }
    int halvings = 0;
    while (next.deviance > current.deviance && halvings < options.max_step_halvings) {
      step *= 0.5;
      candidate = gamma + step;
      next = evaluate(z, y, w, candidate);
      ++halvings;
    }
    if (next.deviance > current.deviance) {
      // Step halving exhausted: no descent left at working precision.
      fit.converged = current.score.cwiseAbs().maxCoeff() <= fit.score_tolerance;
      break;
    }

    const double step_norm = step.cwiseAbs().maxCoeff();
    if (candidate.cwiseAbs().maxCoeff() > options.separation_bound &&
        step_norm > 0.5 * previous_step) {
      throw NumericalError(
          "working model appears to be separated (coefficients diverging); remove or coarsen "
          "covariates that perfectly predict the response");
    }
    previous_step = step_norm;

    const double rel_change =
        std::abs(current.deviance - next.deviance) / (std::abs(next.deviance) + 1e-300);
    gamma = candidate;
    current = std::move(next);
    fit.deviance_trace.push_back(current.deviance);

    const double score_norm = current.score.cwiseAbs().maxCoeff();
    if (rel_change < options.relative_deviance_tolerance && score_norm <= fit.score_tolerance) {
      fit.converged = true;
      break;
    }
  }

  fit.coefficients = gamma;
  fit.final_weighted_deviance = current.deviance;
  fit.weighted_score_norm = current.score.cwiseAbs().maxCoeff();
  return fit;
}

std::vector<double> predict_frame(const WorkingModelFit& fit, const PopulationFrame& frame) {
  std::vector<double> out;
  out.reserve(frame.cells.size());
  for (const auto& c : frame.cells) out.push_back(expit_guarded(fit.linear_predictor(c.covariates)));
  return out;
}

std::vector<double> predict_units(const WorkingModelFit& fit, const SurveyDataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& u : data.units) out.push_back(expit_guarded(fit.linear_predictor(u.covariates)));
  return out;
}

}  // namespace sae
