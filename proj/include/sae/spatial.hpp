#pragma once

// ICAR structure for BYM2 area effects. The generalized inverse of the graph
// Laplacian is scaled so the geometric mean of its diagonal is one.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace sae {

using Edge = std::pair<std::size_t, std::size_t>;

struct SpatialStructure {
  std::vector<std::string> area_ids;
  std::vector<Edge> edges;            // undirected, i < j, deduplicated
  Eigen::MatrixXd icar_precision;     // Q* = D - W
  Eigen::MatrixXd scaled_covariance;  // Q~ = pinv(Q*) / s
  /// Eigenpairs of Q~, ascending; eigenvalue 0 belongs to the constant vector.
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
  double scaling_factor = 1.0;  // s, geometric mean of diag(pinv(Q*))

  std::size_t size() const { return area_ids.size(); }
  /// Eigenvalues of Q~ on the non-null eigenspace (A - 1 values).
  Eigen::VectorXd nonnull_eigenvalues() const;
  /// Columns of the eigenvector matrix scaled by sqrt(eigenvalue): L L' = Q~.
  Eigen::MatrixXd covariance_root() const;
};

/// Requires a connected undirected graph with at least two areas and no
/// self-loops; throws ValidationError otherwise.
SpatialStructure build_spatial_structure(std::vector<std::string> area_ids,
                                         const std::vector<Edge>& edges);

/// sigma^2 ((1 - phi) I + phi Q~). Throws DomainError for phi outside [0,1]
/// or negative sigma.
Eigen::MatrixXd bym2_covariance(const SpatialStructure& structure, double sigma, double phi);

/// Rook adjacency on a rows x cols lattice, row-major cell numbering.
std::vector<Edge> lattice_edges(std::size_t rows, std::size_t cols);

}  // namespace sae
