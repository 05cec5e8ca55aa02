#pragma once

// Derivative-free minimizer used to cross-check the IRLS fit. Restarts from
// the best vertex with a fresh simplex until a restart no longer moves it.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int evaluations = 0;
};

inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> x0, double step = 0.5, double xtol = 1e-11,
                                    int max_evaluations = 400000) {
  const std::size_t n = x0.size();
  NelderMeadResult res;
  auto eval = [&](const std::vector<double>& x) {
    ++res.evaluations;
    return f(x);
  };

  std::vector<double> best = x0;
  double best_value = eval(best);
  for (int restart = 0; restart < 50; ++restart) {
    std::vector<std::vector<double>> simplex(n + 1, best);
    std::vector<double> values(n + 1);
    for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += step;
    for (std::size_t i = 0; i <= n; ++i) values[i] = eval(simplex[i]);

    while (res.evaluations < max_evaluations) {
      std::vector<std::size_t> order(n + 1);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
      const std::size_t lo = order.front(), hi = order.back(), second = order[n - 1];

      double spread = 0.0;
      for (std::size_t i = 0; i <= n; ++i) {
        for (std::size_t j = 0; j < n; ++j) spread = std::max(spread, std::abs(simplex[i][j] - simplex[lo][j]));
      }
      if (spread < xtol) break;

      std::vector<double> centroid(n, 0.0);
      for (std::size_t i = 0; i <= n; ++i) {
        if (i == hi) continue;
        for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / static_cast<double>(n);
      }
      auto along = [&](double t) {
        std::vector<double> x(n);
        for (std::size_t j = 0; j < n; ++j) x[j] = centroid[j] + t * (simplex[hi][j] - centroid[j]);
        return x;
      };
      auto reflected = along(-1.0);
      const double fr = eval(reflected);
      if (fr < values[lo]) {
        auto expanded = along(-2.0);
        const double fe = eval(expanded);
        if (fe < fr) {
          simplex[hi] = expanded;
          values[hi] = fe;
        } else {
          simplex[hi] = reflected;
          values[hi] = fr;
        }
      } else if (fr < values[second]) {
        simplex[hi] = reflected;
        values[hi] = fr;
      } else {
        auto contracted = fr < values[hi] ? along(-0.5) : along(0.5);
        const double fc = eval(contracted);
        if (fc < std::min(fr, values[hi])) {
          simplex[hi] = contracted;
          values[hi] = fc;
        } else {
          for (std::size_t i = 0; i <= n; ++i) {
            if (i == lo) continue;
            for (std::size_t j = 0; j < n; ++j) simplex[i][j] = simplex[lo][j] + 0.5 * (simplex[i][j] - simplex[lo][j]);
            values[i] = eval(simplex[i]);
          }
        }
      }
    }
    const auto lo = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
    double moved = 0.0;
    for (std::size_t j = 0; j < n; ++j) moved = std::max(moved, std::abs(simplex[lo][j] - best[j]));
    const bool improved = values[lo] <= best_value;
    if (improved) {
      best = simplex[lo];
      best_value = values[lo];
    }
    if (restart > 0 && moved < 10 * xtol) break;
    step = std::max(1e-4, step * 0.1);
  }
  res.x = best;
  res.value = best_value;
  return res;
}

}  // namespace oracle
