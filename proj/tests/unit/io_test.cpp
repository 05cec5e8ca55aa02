#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "sae/error.hpp"
#include "sae/io.hpp"
#include "sae/pipeline.hpp"
#include "support.hpp"

using namespace sae;
using testing::TempDir;

namespace {

const char* kHeader = "unit_id,cluster_id,stratum_id,area_id,weight,y\n";

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

std::map<std::string, EstimateRow> by_area(const std::vector<EstimateRow>& rows, const std::string& method) {
  std::map<std::string, EstimateRow> out;
  for (const auto& r : rows) {
    if (r.method == method) out[r.area_id] = r;
  }
  return out;
}

const std::filesystem::path kDemo = std::filesystem::path(SAE_SOURCE_DIR) / "data" / "demo";

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("two-row units file parses") {
    TempDir dir;
    const auto p = dir.write("units.csv", std::string(kHeader) + "u1,c1,s1,a,2.5,1\nu2,c2,s1,a,1,0\n");
    const auto d = read_units(p);
    CHECK(d.size() == 2);
    CHECK(d.units[0].weight == 2.5);
    CHECK(d.units[1].response == 0);
  }

  TEST_CASE("covariate columns are read in order") {
    TempDir dir;
    const auto p = dir.write("units.csv",
                             "unit_id,cluster_id,stratum_id,area_id,weight,y,z2,z1\n# comment\n\nu1,c1,s,a,1,1,5,7\n");
    const auto d = read_units(p);
    CHECK(d.units[0].covariates == std::vector<double>{7.0, 5.0});
  }

  TEST_CASE("zero weight is rejected with its line number") {
    TempDir dir;
    const auto p = dir.write("units.csv", std::string(kHeader) + "u1,c1,s1,a,1,1\nu2,c2,s1,a,0,0\n");
    const auto msg = message_of([&] { read_units(p); });
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("weight") != std::string::npos);
  }

  TEST_CASE("non-binary response and duplicates are rejected") {
    TempDir dir;
    CHECK_THROWS_AS(read_units(dir.write("a.csv", std::string(kHeader) + "u1,c1,s1,a,1,2\n")), ValidationError);
    const auto msg =
        message_of([&] { read_units(dir.write("b.csv", std::string(kHeader) + "u1,c1,s1,a,1,1\nu1,c1,s1,a,1,0\n")); });
    CHECK(msg.find("duplicate unit_id 'u1'") != std::string::npos);
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK_THROWS_AS(read_units(dir.write("c.csv", "unit_id,area_id,weight,y\nu1,a,1,1\n")), ValidationError);
  }

  TEST_CASE("adjacency naming an unknown area is rejected") {
    TempDir dir;
    IngestPaths paths;
    paths.units = dir.write("units.csv", std::string(kHeader) + "u1,c1,s,a,1,1\nu2,c2,s,b,1,0\n");
    paths.adjacency = dir.write("adj.json", R"({"areas": ["a", "b", "ghost"], "edges": [["a", "b"], [1, 2]]})");
    const auto msg = message_of([&] { ingest(paths); });
    CHECK(msg.find("'ghost'") != std::string::npos);
  }

  TEST_CASE("adjacency endpoints may be ids or indices") {
    TempDir dir;
    const auto adj = read_adjacency(dir.write("adj.json", R"({"areas": ["x", "y", "z"], "edges": [["x", "y"], [1, 2]]})"));
    REQUIRE(adj.edges.size() == 2);
    CHECK(adj.edges[0] == std::pair<std::size_t, std::size_t>{0, 1});
    CHECK(adj.edges[1] == std::pair<std::size_t, std::size_t>{1, 2});
    CHECK_THROWS_AS(read_adjacency(dir.write("bad.json", R"({"areas": ["x"], "edges": [["x", "q"]]})")),
                    ValidationError);
  }

  TEST_CASE("number formatting") {
    CHECK(format_number(0.25) == "0.25");
    CHECK(format_number(std::nan("")) == "NA");
    CHECK(std::stod(format_number(0.1 + 0.2)) == 0.1 + 0.2);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("hajek-only run on a three-area toy") {
    TempDir dir;
    dir.write("units.csv", std::string(kHeader) +
                               "u1,c1,s,a,1,1\nu2,c2,s,a,3,0\nu3,c3,s,b,2,1\nu4,c4,s,b,2,1\nu5,c5,s,c,1,0\n"
                               "u6,c6,s,c,1,1\nu7,c7,s,c,2,1\n");
    dir.write("run.ini", "units = units.csv\nmethods = hajek\n");
    const auto cfg = load_run_config(dir.path() / "run.ini", Subcommand::estimate);
    run_estimate(cfg);
    const auto table = read_csv(dir.path() / "out" / "estimates.csv");
    REQUIRE(table.rows.size() == 3);
    CHECK(table.header == std::vector<std::string>{"area_id", "method", "estimate", "se", "lower90", "upper90", "n_a",
                                                   "flags"});
    const std::map<std::string, double> expected{{"a", 0.25}, {"b", 1.0}, {"c", 0.75}};
    for (const auto& row : table.rows) {
      CHECK(row[1] == "hajek");
      CHECK(std::stod(row[2]) == doctest::Approx(expected.at(row[0])).epsilon(1e-15));
    }
    CHECK(std::filesystem::exists(dir.path() / "out" / "diagnostics.json"));
  }

  TEST_CASE("spatial methods need adjacency") {
    TempDir dir;
    dir.write("units.csv", std::string(kHeader) + "u1,c1,s,a,1,1\nu2,c2,s,a,1,0\nu3,c3,s,b,1,1\nu4,c4,s,b,1,0\n");
    dir.write("run.ini", "units = units.csv\nmethods = hajek,sh_spatial\n");
    const auto cfg = load_run_config(dir.path() / "run.ini", Subcommand::estimate);
    const auto msg = message_of([&] { run_estimate(cfg); });
    CHECK(msg.find("sh_spatial") != std::string::npos);
    CHECK(msg.find("adjacency") != std::string::npos);
  }

  TEST_CASE("config parsing") {
    TempDir dir;
    dir.write("units.csv", std::string(kHeader) + "u1,c1,s,a,1,1\n");
    const auto cfg = parse_run_config(
        "units = units.csv\nmethods = hajek, ma\nseed = 12\ndraws = 500\nprediction_scaling = weight_total\n"
        "phi_tail = upper\nphi_alpha = 0.3\n",
        dir.path(), Subcommand::estimate);
    CHECK(cfg.methods == std::vector<std::string>{"hajek", "ma"});
    CHECK(cfg.seed == std::optional<std::uint64_t>(12));
    CHECK(cfg.smoothing.draws == 500);
    CHECK(cfg.prediction_scaling == PredictionScaling::weight_total);
    CHECK(cfg.smoothing.priors.phi_tail == PhiTail::upper);
    CHECK(cfg.output_dir == dir.path() / "out");
    CHECK_THROWS_AS(parse_run_config("units = units.csv\nbogus = 1\n", dir.path(), Subcommand::estimate),
                    ValidationError);
    CHECK_THROWS_AS(parse_run_config("units = units.csv\nmethods = magic\n", dir.path(), Subcommand::estimate),
                    ValidationError);
    CHECK_THROWS_AS(parse_run_config("replicates = 3\n", dir.path(), Subcommand::simulate), ValidationError);
    CHECK_THROWS_AS(parse_run_config("units = missing.csv\n", dir.path(), Subcommand::estimate), ValidationError);
  }

  TEST_CASE("tiny uninformative simulation emits every metric") {
    TempDir dir;
    dir.write("sim.ini",
              "seed = 3\nreplicates = 2\nlattice_size = 2\nstrata_per_area = 1\nclusters_per_stratum = 8\n"
              "sampled_per_stratum = 4\noversampling_ratio = 1\ndraws = 200\n");
    run_simulate(load_run_config(dir.path() / "sim.ini", Subcommand::simulate));
    const auto table = read_csv(dir.path() / "out" / "metrics.csv");
    CHECK(table.header == std::vector<std::string>{"Method", "RMSE", "MAE", "90% Cov.", "MIL"});
    CHECK(table.rows.size() == study_methods(true).size());
    for (const auto& row : table.rows) {
      for (std::size_t j = 1; j < 5; ++j) CHECK(std::isfinite(std::stod(row[j])));
    }
  }

  TEST_CASE("demo: determinism, bounds, and interval lengths") {
    TempDir dir;
    auto cfg = load_run_config(kDemo / "estimate.ini", Subcommand::estimate);
    cfg.methods = {"hajek", "ma", "sma_spatial"};
    cfg.smoothing.draws = 1000;
    cfg.output_dir = dir.path() / "a";
    run_estimate(cfg);
    cfg.output_dir = dir.path() / "b";
    run_estimate(cfg);
    const auto first = testing::slurp(dir.path() / "a" / "estimates.csv");
    CHECK(first == testing::slurp(dir.path() / "b" / "estimates.csv"));

    const auto data = ingest(cfg.inputs);
    const auto rows = compute_estimates(cfg, data).rows;
    for (const auto& r : rows) {
      if (std::isnan(r.estimate)) continue;
      CHECK(r.estimate >= 0.0);
      CHECK(r.estimate <= 1.0);
      if (!std::isnan(r.lower90)) {
        CHECK(r.lower90 <= r.estimate);
        CHECK(r.estimate <= r.upper90);
      }
    }
    double hajek_len = 0.0, sma_len = 0.0;
    int count = 0;
    const auto h = by_area(rows, "hajek"), s = by_area(rows, "sma_spatial");
    for (const auto& [area, row] : h) {
      if (std::isnan(row.lower90)) continue;
      hajek_len += row.upper90 - row.lower90;
      sma_len += s.at(area).upper90 - s.at(area).lower90;
      ++count;
    }
    REQUIRE(count > 0);
    CHECK(sma_len / count <= hajek_len / count);
  }
}
