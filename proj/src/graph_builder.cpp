#include "spectraprobe/graph_builder.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "spectraprobe/error.hpp"

namespace spectraprobe {

std::string to_string(LaplacianKind kind) {
  switch (kind) {
    case LaplacianKind::combinatorial: return "combinatorial";
    case LaplacianKind::symmetric: return "symmetric";
    case LaplacianKind::random_walk: return "random_walk";
    case LaplacianKind::directed_rw: return "directed_rw";
    case LaplacianKind::magnetic: return "magnetic";
  }
  return "unknown";
}

LaplacianKind laplacian_kind_from_string(const std::string& name) {
  if (name == "combinatorial") return LaplacianKind::combinatorial;
  if (name == "symmetric" || name == "sym") return LaplacianKind::symmetric;
  if (name == "random_walk" || name == "rw") return LaplacianKind::random_walk;
  if (name == "directed_rw" || name == "directed") return LaplacianKind::directed_rw;
  if (name == "magnetic" || name == "mag") return LaplacianKind::magnetic;
  throw UsageError("unknown laplacian kind '" + name + "'");
}

std::string to_string(AggregationKind kind) {
  return kind == AggregationKind::uniform ? "uniform" : "mass_weighted";
}

AggregationKind aggregation_kind_from_string(const std::string& name) {
  if (name == "uniform") return AggregationKind::uniform;
  if (name == "mass_weighted" || name == "mass") return AggregationKind::mass_weighted;
  throw UsageError("unknown aggregation scheme '" + name + "'");
}

Matrix symmetrize(const Matrix& a) {
  if (a.rows() != a.cols()) throw DataError("symmetrize: matrix is not square");
  const auto n = a.rows();
  Matrix w(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i, i) = a(i, i);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      w(i, j) = v;
      w(j, i) = v;
    }
  }
  return w;
}

std::vector<double> head_weights(std::span<const Matrix> heads, AggregationKind kind) {
  if (heads.empty()) throw DataError("aggregate_heads: no heads");
  const std::size_t h = heads.size();
  if (kind == AggregationKind::uniform) return std::vector<double>(h, 1.0 / static_cast<double>(h));
  std::vector<double> mass(h);
  double total = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    mass[i] = heads[i].sum();
    total += mass[i];
  }
  if (!(total > 0.0)) throw DataError("aggregate_heads: total attention mass is zero after exclusion");
  for (auto& m : mass) m /= total;
  return mass;
}

Matrix aggregate_heads(std::span<const Matrix> heads, AggregationKind kind) {
  const auto alpha = head_weights(heads, kind);
  const auto rows = heads[0].rows();
  const auto cols = heads[0].cols();
  Matrix out = Matrix::Zero(rows, cols);
  for (std::size_t h = 0; h < heads.size(); ++h) {
    if (heads[h].rows() != rows || heads[h].cols() != cols)
      throw DataError("aggregate_heads: heads differ in shape");
    out.noalias() += alpha[h] * heads[h];
  }
  out = (out.array() < kWeightFloor).select(0.0, out);
  return out;
}

std::optional<Vector> TokenGraph::null_vector() const {
  const auto n = size();
  switch (spec.kind) {
    case LaplacianKind::combinatorial:
      return Vector::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
    case LaplacianKind::symmetric:
    case LaplacianKind::random_walk: {
      Vector v = degree.array().sqrt();
      return Vector(v / v.norm());
    }
    default:
      return std::nullopt;
  }
}

Matrix TokenGraph::native_operator() const {
  const auto n = size();
  switch (spec.kind) {
    case LaplacianKind::random_walk:
      return Matrix::Identity(n, n) - degree.cwiseInverse().asDiagonal() * weights;
    case LaplacianKind::directed_rw:
      return Matrix::Identity(n, n) - degree.cwiseInverse().asDiagonal() * weights;
    case LaplacianKind::magnetic:
      return hermitian.real();
    default:
      return op;
  }
}

namespace {

void check_isolated(const Vector& degree) {
  for (Eigen::Index i = 0; i < degree.size(); ++i)
    if (!(degree(i) > 0.0)) throw DataError("isolated node: token index " + std::to_string(i) + " has zero degree");
}

Matrix symmetric_part(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

TokenGraph build_laplacian(const Matrix& input, LaplacianSpec spec) {
  if (input.rows() != input.cols()) throw DataError("build_laplacian: matrix is not square");
  if (input.rows() < 1) throw DataError("build_laplacian: empty graph");
  const auto n = input.rows();

  TokenGraph g;
  g.spec = spec;
  g.weights = input;
  g.nodes.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) g.nodes[static_cast<std::size_t>(i)] = static_cast<int>(i);

  if ((input.array() < 0.0).any()) throw DataError("build_laplacian: negative edge weight");
  if (!spec.directed()) {
    const double scale = std::max(1.0, input.cwiseAbs().maxCoeff());
    if ((input - input.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw DataError("build_laplacian: undirected kinds need a symmetric weight matrix");
  }

  switch (spec.kind) {
    case LaplacianKind::combinatorial: {
      g.degree = input.rowwise().sum();
      check_isolated(g.degree);
      g.op = -input;
      g.op.diagonal() += g.degree;
      break;
    }
    case LaplacianKind::symmetric:
    case LaplacianKind::random_walk: {
      g.degree = input.rowwise().sum();
      check_isolated(g.degree);
      const Vector s = g.degree.array().rsqrt();
      Matrix normalized = s.asDiagonal() * input * s.asDiagonal();
      g.op = Matrix::Identity(n, n) - symmetric_part(normalized);
      break;
    }
    case LaplacianKind::directed_rw: {
      g.degree = input.rowwise().sum();
      check_isolated(g.degree);
      const Matrix l = Matrix::Identity(n, n) - g.degree.cwiseInverse().asDiagonal() * input;
      g.op = symmetric_part(l);
      break;
    }
    case LaplacianKind::magnetic: {
      if (!(spec.theta > 0.0 && spec.theta <= std::numbers::pi))
        throw UsageError("magnetic phase theta must lie in (0, pi]");
      g.degree = 0.5 * (input.rowwise().sum() + input.colwise().sum().transpose());
      check_isolated(g.degree);
      const std::complex<double> phase = std::polar(1.0, spec.theta);
      g.hermitian.resize(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
          // 0.5 * (A_ij e^{i theta} + A_ji e^{-i theta}), self-loops included
          g.hermitian(i, j) = -0.5 * (input(i, j) * phase + input(j, i) * std::conj(phase));
        }
        g.hermitian(i, i) += g.degree(i);
      }
      // exact Hermitian symmetry
      g.hermitian = 0.5 * (g.hermitian + g.hermitian.adjoint()).eval();
      const Matrix re = g.hermitian.real();
      const Matrix im = g.hermitian.imag();
      g.op.resize(2 * n, 2 * n);
      g.op << re, -im, im, re;
      break;
    }
  }
  return g;
}

std::vector<Matrix> split_heads(const Tensor& attention) {
  if (attention.dims.size() != 3 || attention.dims[1] != attention.dims[2])
    throw DataError("attention tensor must have shape [H, N, N]");
  const auto h = static_cast<Eigen::Index>(attention.dims[0]);
  const auto n = static_cast<Eigen::Index>(attention.dims[1]);
  std::vector<Matrix> heads;
  heads.reserve(static_cast<std::size_t>(h));
  for (Eigen::Index k = 0; k < h; ++k) {
    Matrix m(n, n);
    const float* base = attention.data.data() + k * n * n;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) m(i, j) = static_cast<double>(base[i * n + j]);
    heads.push_back(std::move(m));
  }
  return heads;
}

namespace {

Matrix restrict(const Matrix& m, const std::vector<int>& keep) {
  const auto k = static_cast<Eigen::Index>(keep.size());
  Matrix out(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out(i, j) = m(keep[i], keep[j]);
  return out;
}

Vector degrees_for(const Matrix& m, const LaplacianSpec& spec) {
  if (spec.kind == LaplacianKind::directed_rw) return m.rowwise().sum();
  if (spec.kind == LaplacianKind::magnetic) return 0.5 * (m.rowwise().sum() + m.colwise().sum().transpose());
  return m.rowwise().sum();
}

}  // namespace

GraphBuild build_token_graph(const Tensor& attention, std::span<const bool> special,
                             const AggregationScheme& scheme, const LaplacianSpec& spec) {
  auto heads = split_heads(attention);
  const auto n = static_cast<int>(attention.dims[1]);
  if (!special.empty() && special.size() != static_cast<std::size_t>(n))
    throw DataError("special-token mask length differs from token count");

  GraphBuild out;
  std::vector<int> keep;
  for (int i = 0; i < n; ++i) {
    if (scheme.exclude_special && !special.empty() && special[static_cast<std::size_t>(i)])
      out.excluded_special.push_back(i);
    else
      keep.push_back(i);
  }
  if (keep.size() < 2) throw DataError("fewer than two tokens remain after special-token exclusion");
  if (keep.size() != static_cast<std::size_t>(n))
    for (auto& head : heads) head = restrict(head, keep);

  out.head_weights = head_weights(heads, scheme.kind);
  Matrix combined;
  if (spec.directed()) {
    combined = aggregate_heads(heads, scheme.kind);
  } else {
    std::vector<Matrix> sym;
    sym.reserve(heads.size());
    for (const auto& head : heads) sym.push_back(symmetrize(head));
    combined = aggregate_heads(sym, scheme.kind);
  }

  // Drop zero-degree nodes until none remain; each drop can isolate others.
  for (;;) {
    const Vector degree = degrees_for(combined, spec);
    std::vector<int> local_keep;
    std::vector<int> next_nodes;
    for (Eigen::Index i = 0; i < degree.size(); ++i) {
      if (degree(i) > 0.0) {
        local_keep.push_back(static_cast<int>(i));
        next_nodes.push_back(keep[static_cast<std::size_t>(i)]);
      } else {
        out.dropped_isolated.push_back(keep[static_cast<std::size_t>(i)]);
      }
    }
    if (local_keep.size() == keep.size()) break;
    if (local_keep.size() < 2) throw DataError("fewer than two connected tokens remain after dropping isolated nodes");
    combined = restrict(combined, local_keep);
    keep = std::move(next_nodes);
  }

  out.graph = build_laplacian(combined, spec);
  out.graph.nodes = keep;
  return out;
}

}  // namespace spectraprobe
