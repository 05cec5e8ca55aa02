#include <doctest.h>

#include <cmath>
#include <set>

#include "oracles/enumeration.hpp"
#include "sae/error.hpp"
#include "sae/model_assisted.hpp"
#include "sae/numeric.hpp"
#include "sae/simulation.hpp"

using namespace sae;

namespace {

SimulationConfig small_config() {
  SimulationConfig c;
  c.lattice_size = 3;
  c.strata_per_area = 1;
  c.clusters_per_stratum = 12;
  c.sampled_per_stratum = 4;
  c.replicates = 4;
  c.smoothing_options.draws = 200;
  return c;
}

}  // namespace

TEST_SUITE("simulation") {
  TEST_CASE("zero effects give risk one half") {
    auto c = small_config();
    c.coefficients.fill(0.0);
    c.area_sd = 0.0;
    c.cluster_sd = 0.0;
    const auto pop = generate_population(c, 3);
    for (double q : pop.risk) CHECK(q == 0.5);
  }

  TEST_CASE("true proportions are realized means") {
    const auto pop = generate_population(small_config(), 8);
    const auto& layout = *pop.layout;
    std::vector<double> ones(layout.area_ids.size(), 0.0), total(layout.area_ids.size(), 0.0);
    for (std::size_t i = 0; i < layout.clusters.size(); ++i) {
      for (auto y : pop.responses[i]) ones[layout.clusters[i].area] += y;
      total[layout.clusters[i].area] += static_cast<double>(pop.responses[i].size());
    }
    for (std::size_t a = 0; a < ones.size(); ++a) CHECK(pop.true_proportion[a] == ones[a] / total[a]);
  }

  TEST_CASE("layout is frozen and responses regenerate") {
    const auto layout = build_population_layout(small_config(), 4);
    const auto a = realize_population(layout, 1), b = realize_population(layout, 2);
    CHECK(a.layout == b.layout);
    CHECK(a.true_proportion != b.true_proportion);
    const auto again = build_population_layout(small_config(), 4);
    for (std::size_t i = 0; i < layout->clusters.size(); ++i) {
      CHECK(layout->clusters[i].covariates == again->clusters[i].covariates);
      CHECK(layout->clusters[i].size == again->clusters[i].size);
    }
  }

  TEST_CASE("ratio one gives equal inclusion probabilities") {
    auto c = small_config();
    c.oversampling_ratio = 1.0;
    const auto layout = build_population_layout(c, 5);
    for (const auto& cl : layout->clusters) CHECK(cl.inclusion_probability == doctest::Approx(4.0 / 12.0).epsilon(1e-12));
  }

  TEST_CASE("census gives unit weights") {
    auto c = small_config();
    c.sampled_per_stratum = c.clusters_per_stratum;
    const auto pop = generate_population(c, 6);
    const auto d = draw_informative_sample(pop, 1);
    std::size_t units = 0;
    for (const auto& cl : pop.layout->clusters) units += cl.size;
    CHECK(d.size() == units);
    for (const auto& u : d.units) CHECK(u.weight == 1.0);
  }

  TEST_CASE("four-cluster stratum matches brute-force enumeration") {
    const std::vector<double> w{3.0, 1.0, 1.0, 1.0};
    const auto exact = sequential_inclusion_probabilities(w, 2, 64, 1, 1);
    const auto brute = oracle::brute_force_inclusion(w, 2);
    REQUIRE(exact.exact);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(exact.probability[i] - brute[i]) < 1e-14);
    double total = 0.0;
    for (double p : exact.probability) total += p;
    CHECK(total == doctest::Approx(2.0).epsilon(1e-14));
  }

  TEST_CASE("dynamic programming matches enumeration on mixed weights") {
    const std::vector<double> w{3.0, 1.0, 2.0, 1.0, 3.0, 1.0, 1.0};
    for (std::size_t n : {1u, 3u, 5u}) {
      const auto exact = sequential_inclusion_probabilities(w, n, 64, 1, 1);
      const auto brute = oracle::brute_force_inclusion(w, n);
      for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(exact.probability[i] - brute[i]) < 1e-13);
    }
  }

  TEST_CASE("Monte Carlo agrees with the exact path within 3 SE") {
    std::vector<double> w(20, 1.0);
    for (std::size_t i = 0; i < 5; ++i) w[i] = 3.0;
    const auto exact = sequential_inclusion_probabilities(w, 6, 64, 1, 1);
    const auto mc = sequential_inclusion_probabilities(w, 6, 0, 100000, 77);
    CHECK_FALSE(mc.exact);
    for (std::size_t i = 0; i < w.size(); ++i) {
      CHECK(std::abs(mc.probability[i] - exact.probability[i]) < 3.0 * mc.standard_error[i]);
    }
  }

  TEST_CASE("sequential draws are distinct") {
    const auto idx = sequential_weighted_draw({1, 2, 3, 4, 5, 6}, 4, 9);
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 4);
  }

  TEST_CASE("more draws than clusters is an error") {
    CHECK_THROWS_AS(sequential_inclusion_probabilities({1, 1}, 3, 64, 10, 1), ValidationError);
    auto c = small_config();
    c.sampled_per_stratum = 13;
    CHECK_THROWS_AS(generate_population(c, 1), ValidationError);
  }

  TEST_CASE("metric examples") {
    MethodRun run;
    run.estimate = {0.4, 0.6};
    const auto m = replicate_metrics({0.5, 0.5}, run);
    CHECK(m.rmse == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(m.mae == doctest::Approx(0.1).epsilon(1e-14));
    CHECK_FALSE(m.cov90.has_value());

    MethodRun exact;
    exact.estimate = {0.3, 0.7};
    exact.lower = {0.3, 0.7};
    exact.upper = {0.3, 0.7};
    const auto e = replicate_metrics({0.3, 0.7}, exact);
    CHECK(e.rmse == 0.0);
    CHECK(*e.cov90 == 1.0);
    CHECK(*e.mil == 0.0);
  }

  TEST_CASE("missing intervals are excluded with a warning") {
    MethodSeries s{"point only", {MethodRun{{0.5}, {}, {}}}};
    const auto m = compute_metrics({{0.5}}, {s});
    CHECK_FALSE(m.methods[0].cov90.has_value());
    CHECK(m.warnings.size() == 1);
  }

  TEST_CASE("study is independent of the thread count") {
    auto c = small_config();
    c.replicates = 3;
    c.threads = 1;
    const auto a = run_study(c);
    c.threads = 3;
    const auto b = run_study(c);
    REQUIRE(a.methods.size() == b.methods.size());
    for (std::size_t i = 0; i < a.methods.size(); ++i) {
      CHECK(a.methods[i].rmse == b.methods[i].rmse);
      CHECK(a.methods[i].mae == b.methods[i].mae);
      CHECK(a.methods[i].cov90 == b.methods[i].cov90);
      CHECK(a.methods[i].mil == b.methods[i].mil);
    }
    CHECK(a.methods.size() == study_methods(true).size());
  }

  TEST_CASE("uninformative design: Hajek and full MA are unbiased") {
    auto c = small_config();
    c.oversampling_ratio = 1.0;
    const auto layout = build_population_layout(c, 21);
    const auto frame = select_covariates(layout->frame(), full_covariate_columns());
    const auto partition = layout->partition();
    std::vector<double> hajek_err, ma_err;
    for (std::uint64_t r = 0; r < 200; ++r) {
      const auto pop = realize_population(layout, derive_seed(21, 500 + r));
      const auto d = draw_informative_sample(pop, derive_seed(21, 900 + r));
      const auto full = select_covariates(d, full_covariate_columns());
      const auto h = hajek_estimate(d, partition);
      const auto fit = fit_weighted_logistic(full);
      const auto ma = ma_estimate(full, frame, fit, partition);
      double he = 0.0, me = 0.0;
      for (std::size_t a = 0; a < partition.size(); ++a) {
        he += h.areas[a].estimate - pop.true_proportion[a];
        me += ma.areas[a].estimate - pop.true_proportion[a];
      }
      hajek_err.push_back(he / static_cast<double>(partition.size()));
      ma_err.push_back(me / static_cast<double>(partition.size()));
    }
    for (const auto* errs : {&hajek_err, &ma_err}) {
      const double mean = compensated_mean(*errs);
      double ss = 0.0;
      for (double e : *errs) ss += (e - mean) * (e - mean);
      const double se = std::sqrt(ss / static_cast<double>(errs->size() - 1) / static_cast<double>(errs->size()));
      CHECK(std::abs(mean) < 2.0 * se);
    }
  }
}
