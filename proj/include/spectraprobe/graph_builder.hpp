#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spectraprobe/bundle_io.hpp"

namespace spectraprobe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class AggregationKind { uniform, mass_weighted };

struct AggregationScheme {
  AggregationKind kind = AggregationKind::mass_weighted;
  bool exclude_special = true;
};

enum class LaplacianKind { combinatorial, symmetric, random_walk, directed_rw, magnetic };

std::string to_string(LaplacianKind kind);
LaplacianKind laplacian_kind_from_string(const std::string& name);
std::string to_string(AggregationKind kind);
AggregationKind aggregation_kind_from_string(const std::string& name);

struct LaplacianSpec {
  LaplacianKind kind = LaplacianKind::random_walk;
  double theta = 0.2;  // magnetic phase, (0, pi]

  bool directed() const {
    return kind == LaplacianKind::directed_rw || kind == LaplacianKind::magnetic;
  }
};

inline constexpr double kWeightFloor = 1e-12;

/// 0.5 * (A + A^T), mirrored entries averaged so the result is exactly symmetric.
Matrix symmetrize(const Matrix& attention);

/// Head weights alpha_h: 1/H for uniform, s_h / sum(s) for mass weighting
/// where s_h is the total attention mass of the (already restricted) head.
std::vector<double> head_weights(std::span<const Matrix> heads, AggregationKind kind);

/// sum_h alpha_h * heads[h]. Entries below kWeightFloor are set to zero.
Matrix aggregate_heads(std::span<const Matrix> heads, AggregationKind kind);

/// Weighted token graph with its Laplacian operator.
///
/// `weights` holds the symmetric W for undirected kinds and the aggregated
/// attention A for directed kinds. `op` is always real symmetric and is what
/// the eigensolvers see:
///   combinatorial  D - W
///   symmetric      I - D^{-1/2} W D^{-1/2}
///   random_walk    same matrix as symmetric (similar to I - D^{-1} W)
///   directed_rw    symmetric part of I - D_out^{-1} A
///   magnetic       2n x 2n embedding [[Re L, -Im L], [Im L, Re L]]
struct TokenGraph {
  LaplacianSpec spec;
  Matrix weights;
  Vector degree;  // W row sums (undirected, magnetic) or out-degree (directed_rw)
  Matrix op;
  Eigen::MatrixXcd hermitian;  // magnetic only
  std::vector<int> nodes;      // original token index of each node

  int size() const { return static_cast<int>(weights.rows()); }

  /// Unit vector spanning the known nullspace (undirected kinds only).
  std::optional<Vector> null_vector() const;

  /// The operator in its native, possibly non-symmetric form:
  /// I - D^{-1} W for random_walk, I - D_out^{-1} A for directed_rw.
  /// Magnetic returns Re(L); use `hermitian` for the full operator.
  Matrix native_operator() const;
};

/// Builds the Laplacian of `input` (W or A, see TokenGraph). Throws
/// DataError naming the token index when a node has zero degree.
TokenGraph build_laplacian(const Matrix& input, LaplacianSpec spec);

/// Full graph construction for one layer of one item.
struct GraphBuild {
  TokenGraph graph;
  std::vector<int> excluded_special;
  std::vector<int> dropped_isolated;
  std::vector<double> head_weights;
};

/// attention is [H, N, N]; special[i] flags token i. With
/// scheme.exclude_special the flagged rows/columns are removed before the
/// head masses are computed. Nodes left with zero degree are dropped and
/// recorded rather than regularized.
GraphBuild build_token_graph(const Tensor& attention, std::span<const bool> special,
                             const AggregationScheme& scheme, const LaplacianSpec& spec);

/// Heads of an [H, N, N] tensor as dense matrices.
std::vector<Matrix> split_heads(const Tensor& attention);

}  // namespace spectraprobe
