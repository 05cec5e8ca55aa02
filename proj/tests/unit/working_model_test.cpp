#include <doctest.h>

#include <cmath>

#include "oracles/nelder_mead.hpp"
#include "sae/error.hpp"
#include "sae/numeric.hpp"
#include "sae/working_model.hpp"
#include "support.hpp"

using namespace sae;
using testing::unit;

TEST_SUITE("working_model") {
  TEST_CASE("intercept only, equal weights") {
    const auto d = testing::single_area({1, 0, 0, 0, 1, 0, 0, 0}, std::vector<double>(8, 2.0));
    const auto fit = fit_weighted_logistic(d);
    CHECK(fit.converged);
    CHECK(fit.coefficients(0) == doctest::Approx(std::log(0.25 / 0.75)).epsilon(1e-10));
  }

  TEST_CASE("intercept only, weighted, is the logit of the Hajek mean") {
    const auto d = testing::single_area({1, 0, 1, 0, 0}, {3, 1, 0.5, 2, 7});
    const auto fit = fit_weighted_logistic(d);
    CHECK(fit.coefficients(0) == doctest::Approx(logit(3.5 / 13.5)).epsilon(1e-10));
  }

  TEST_CASE("matches a derivative-free maximizer") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto d = testing::synthetic_logistic(50, 3, 1, seed);
      const auto fit = fit_weighted_logistic(d);
      REQUIRE(fit.converged);
      const auto nm = oracle::nelder_mead(
          [&](const std::vector<double>& g) {
            return -weighted_log_likelihood(d, Eigen::Map<const Eigen::VectorXd>(g.data(), 4));
          },
          {0, 0, 0, 0});
      for (int j = 0; j < 4; ++j) CHECK(std::abs(nm.x[j] - fit.coefficients(j)) < 1e-6);
    }
  }

  TEST_CASE("score identity at convergence") {
    const auto d = testing::synthetic_logistic(300, 2, 5, 4);
    const auto fit = fit_weighted_logistic(d);
    const auto q = predict_units(fit, d);
    double s = 0.0, w = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      s += d.units[i].weight * (d.units[i].response - q[i]);
      w += d.units[i].weight;
    }
    CHECK(std::abs(s) <= 1e-6 * w);
    CHECK(fit.weighted_score_norm <= fit.score_tolerance);
  }

  TEST_CASE("deviance never increases") {
    const auto fit = fit_weighted_logistic(testing::synthetic_logistic(200, 3, 1, 9));
    for (std::size_t i = 1; i < fit.deviance_trace.size(); ++i) {
      CHECK(fit.deviance_trace[i] <= fit.deviance_trace[i - 1]);
    }
  }

  TEST_CASE("coefficients are invariant to weight scale") {
    const auto d = testing::synthetic_logistic(120, 2, 1, 5);
    auto scaled = d;
    for (auto& u : scaled.units) u.weight *= 1000.0;
    const auto a = fit_weighted_logistic(d), b = fit_weighted_logistic(scaled);
    REQUIRE(b.converged);
    CHECK((a.coefficients - b.coefficients).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("predictions") {
    WorkingModelFit zero;
    zero.coefficients = Eigen::VectorXd::Zero(3);
    PopulationFrame frame;
    frame.cells = {testing::cell("c1", "a", 1, {2.0, -1.0}), testing::cell("c2", "a", 5, {0.0, 4.0})};
    for (double p : predict_frame(zero, frame)) CHECK(p == 0.5);

    const auto d = testing::synthetic_logistic(100, 2, 1, 3);
    const auto fit = fit_weighted_logistic(d);
    PopulationFrame same;
    same.cells = {testing::cell("c", "a0", 1, d.units[7].covariates)};
    CHECK(predict_frame(fit, same)[0] == predict_units(fit, d)[7]);

    const int j = fit.coefficients(1) > 0 ? 0 : 1;
    auto bumped = same;
    bumped.cells[0].covariates[0] += (j == 0 ? 0.1 : -0.1);
    CHECK(predict_frame(fit, bumped)[0] > predict_frame(fit, same)[0]);
  }

  TEST_CASE("rank deficiency names the dependent column") {
    auto d = testing::synthetic_logistic(60, 2, 1, 2);
    for (auto& u : d.units) u.covariates.push_back(2.0 * u.covariates[0]);
    try {
      fit_weighted_logistic(d);
      FAIL("expected a rank error");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("rank deficient") != std::string::npos);
      CHECK((msg.find("z1") != std::string::npos || msg.find("z3") != std::string::npos));
    }
  }

  TEST_CASE("separation is reported") {
    SurveyDataset d;
    for (int i = 0; i < 20; ++i) {
      const double x = i - 9.5;
      d.units.push_back(unit("u" + std::to_string(i), "a", x > 0 ? 1 : 0, 1.0, {x}));
    }
    CHECK_THROWS_AS(fit_weighted_logistic(d), NumericalError);
  }

  TEST_CASE("too few units") {
    CHECK_THROWS_AS(fit_weighted_logistic(testing::single_area({1}, {1})), ValidationError);
  }
}
