#include "sae/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sae/error.hpp"

namespace sae {

Eigen::VectorXd SpatialStructure::nonnull_eigenvalues() const {
  return eigenvalues.tail(eigenvalues.size() - 1);
}

Eigen::MatrixXd SpatialStructure::covariance_root() const {
  return eigenvectors * eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

namespace {

bool connected(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (const auto& [i, j] : edges) {
    nbrs[i].push_back(j);
    nbrs[j].push_back(i);
  }
  std::vector<char> seen(n, 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t w : nbrs[v]) {
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
    }
  }
  return count == n;
}

}  // namespace

SpatialStructure build_spatial_structure(std::vector<std::string> area_ids,
                                         const std::vector<Edge>& edges) {
  const std::size_t n = area_ids.size();
  if (n < 2) throw ValidationError("spatial structure needs at least two areas");

  std::set<Edge> unique;
  for (auto [i, j] : edges) {
    if (i >= n || j >= n) throw ValidationError("adjacency edge references an area index out of range");
    if (i == j) throw ValidationError("adjacency contains a self-loop at area '" + area_ids[i] + "'");
    if (i > j) std::swap(i, j);
    unique.insert({i, j});
  }
  SpatialStructure s;
  s.area_ids = std::move(area_ids);
  s.edges.assign(unique.begin(), unique.end());
  if (!connected(n, s.edges)) {
    throw ValidationError(
        "adjacency graph is disconnected; the ICAR scaling requires a single connected component");
  }

  const auto N = static_cast<Eigen::Index>(n);
  s.icar_precision = Eigen::MatrixXd::Zero(N, N);
  for (const auto& [i, j] : s.edges) {
    const auto a = static_cast<Eigen::Index>(i);
    const auto b = static_cast<Eigen::Index>(j);
    s.icar_precision(a, b) -= 1.0;
    s.icar_precision(b, a) -= 1.0;
    s.icar_precision(a, a) += 1.0;
    s.icar_precision(b, b) += 1.0;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.icar_precision);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of ICAR precision failed");
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const Eigen::MatrixXd V = eig.eigenvectors();
  // Connected graph: exactly one zero eigenvalue, the smallest.
  const double tol = 1e-9 * std::max(1.0, lambda(N - 1));
  if (std::abs(lambda(0)) > tol || lambda(1) <= tol) {
    throw NumericalError("ICAR precision does not have exactly one null eigenvalue");
  }

  Eigen::VectorXd inv = Eigen::VectorXd::Zero(N);
  for (Eigen::Index k = 1; k < N; ++k) inv(k) = 1.0 / lambda(k);
  const Eigen::MatrixXd pinv = V * inv.asDiagonal() * V.transpose();

  double log_sum = 0.0;
  for (Eigen::Index k = 0; k < N; ++k) log_sum += std::log(pinv(k, k));
  s.scaling_factor = std::exp(log_sum / static_cast<double>(N));

  s.scaled_covariance = pinv / s.scaling_factor;
  s.scaled_covariance = 0.5 * (s.scaled_covariance + s.scaled_covariance.transpose()).eval();
  // 1/lambda is decreasing in lambda; reorder so eigenvalues of Q~ ascend with
  // the null direction first.
  s.eigenvalues.resize(N);
  s.eigenvectors.resize(N, N);
  s.eigenvalues(0) = 0.0;
  s.eigenvectors.col(0) = V.col(0);
  for (Eigen::Index k = 1; k < N; ++k) {
    s.eigenvalues(k) = inv(N - k) / s.scaling_factor;
    s.eigenvectors.col(k) = V.col(N - k);
  }
  return s;
}

Eigen::MatrixXd bym2_covariance(const SpatialStructure& structure, double sigma, double phi) {
  if (!(phi >= 0.0 && phi <= 1.0)) throw DomainError("BYM2 mixing parameter phi must lie in [0,1]");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("BYM2 sigma must be nonnegative");
  const auto n = static_cast<Eigen::Index>(structure.size());
  const double var = sigma * sigma;
  return var * ((1.0 - phi) * Eigen::MatrixXd::Identity(n, n) + phi * structure.scaled_covariance);
}

std::vector<Edge> lattice_edges(std::size_t rows, std::size_t cols) {
  std::vector<Edge> out;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (c + 1 < cols) out.emplace_back(i, i + 1);
      if (r + 1 < rows) out.emplace_back(i, i + cols);
    }
  }
  return out;
}

}  // namespace sae
