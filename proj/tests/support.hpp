#pragma once

// Small builders shared by the unit tests and the acceptance runner.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sae/survey.hpp"
#include "sae/working_model.hpp"

namespace testing {

inline sae::SampledUnit unit(const std::string& id, const std::string& area, int y, double w,
                             std::vector<double> z = {}, const std::string& cluster = "",
                             const std::string& stratum = "s") {
  sae::SampledUnit u;
  u.unit_id = id;
  u.area_id = area;
  u.cluster_id = cluster.empty() ? id : cluster;
  u.stratum_id = stratum;
  u.weight = w;
  u.response = y;
  u.covariates = std::move(z);
  return u;
}

/// One area "a" with the given responses and weights; unit ids u0, u1, ...
inline sae::SurveyDataset single_area(const std::vector<int>& y, const std::vector<double>& w) {
  sae::SurveyDataset d;
  for (std::size_t i = 0; i < y.size(); ++i) d.units.push_back(unit("u" + std::to_string(i), "a", y[i], w[i]));
  return d;
}

inline sae::FrameCell cell(const std::string& id, const std::string& area, double count, std::vector<double> z) {
  sae::FrameCell c;
  c.cell_id = id;
  c.area_id = area;
  c.count = count;
  c.covariates = std::move(z);
  return c;
}

/// Synthetic logistic data: n units across `areas` areas, p standard normal
/// covariates, true coefficients 0.3, 0.8, -0.5, 0.4, ... and lognormal weights.
inline sae::SurveyDataset synthetic_logistic(std::size_t n, std::size_t p, std::size_t areas, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  sae::SurveyDataset d;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(p);
    double eta = 0.3;
    for (std::size_t j = 0; j < p; ++j) {
      z[j] = normal(rng);
      eta += (j % 2 == 0 ? 0.8 : -0.5) / static_cast<double>(j / 2 + 1) * z[j];
    }
    const int y = unif(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0;
    const double w = std::exp(0.5 * normal(rng)) * 10.0;
    d.units.push_back(unit("u" + std::to_string(i), "a" + std::to_string(i % areas), y, w, z));
  }
  return d;
}

}  // namespace testing

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sae_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path write(const std::string& name, const std::string& content) const {
    const auto p = path_ / name;
    std::ofstream(p) << content;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testing
