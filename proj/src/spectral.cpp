#include "spectraprobe/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "spectraprobe/error.hpp"
#include "spectraprobe/lanczos.hpp"
#include "spectraprobe/rng.hpp"

namespace spectraprobe {

namespace {

constexpr double kPairTolerance = 1e-9;
constexpr std::uint64_t kStartKey = 0xF1ED1E557A27u;

bool psd_kind(LaplacianKind kind) { return kind != LaplacianKind::directed_rw; }

// Documented deterministic Lanczos start: a fixed Philox stream, which the
// solver then orthogonalizes against the known nullspace.
Vector start_vector(Eigen::Index n) {
  Philox4x32 rng(kStartKey);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 0.5 + rng.uniform();
  return v;
}

Spectrum dense_spectrum(const TokenGraph& graph) {
  const Vector degree_abs = graph.degree.cwiseAbs();
  if (degree_abs.size() > 0 && degree_abs.minCoeff() < 1e-14 * std::max(1.0, degree_abs.maxCoeff()))
    throw NumericalError("ill-conditioned operator: near-zero degree");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(graph.op);
  if (solver.info() != Eigen::Success) throw NumericalError("dense eigendecomposition failed");

  Spectrum s;
  s.method = SpectrumMethod::dense_full;
  s.vectors = solver.eigenvectors();
  if (graph.spec.kind != LaplacianKind::magnetic) {
    s.values = solver.eigenvalues();
    return s;
  }
  s.embedded = true;
  const auto& all = solver.eigenvalues();
  const auto n = all.size() / 2;
  s.values.resize(n);
  for (Eigen::Index m = 0; m < n; ++m) {
    const double a = all(2 * m);
    const double b = all(2 * m + 1);
    if (std::abs(a - b) > kPairTolerance * std::max(1.0, std::abs(a))) {
      std::ostringstream os;
      os << "magnetic embedding: eigenvalues " << a << " and " << b << " do not pair";
      throw NumericalError(os.str());
    }
    s.values(m) = 0.5 * (a + b);
  }
  return s;
}

}  // namespace

FiedlerResult smallest_eigenpair_2(const TokenGraph& graph, const EigenOptions& options) {
  const int n = graph.size();
  if (n < 2) throw DataError("smallest_eigenpair_2 needs at least two nodes");
  const bool magnetic = graph.spec.kind == LaplacianKind::magnetic;

  double last_residual = 0.0;
  if (options.force_iterative || n > options.dense_threshold) {
    const auto dim = static_cast<int>(graph.op.rows());
    const Matrix& op = graph.op;
    MatVec apply = [&op](const Vector& in, Vector& out) { out.noalias() = op * in; };
    LanczosOptions lopt;
    lopt.tol = options.tol;
    lopt.max_iter = options.max_iter;
    Matrix deflate(dim, 0);
    int want = 2;
    if (auto nv = graph.null_vector()) {
      deflate = *nv;
      want = 1;
    }
    if (magnetic) lopt.dedup_tol = kPairTolerance;
    const auto res = lanczos_smallest(apply, dim, want, start_vector(dim), deflate, lopt);
    if (res.converged) {
      const auto k = static_cast<std::size_t>(want - 1);
      FiedlerResult out;
      out.value = res.values[k];
      out.vector = res.vectors.col(static_cast<Eigen::Index>(k));
      out.method = SpectrumMethod::iterative_smallest;
      out.residual = res.residuals[k];
      return out;
    }
    if (!res.residuals.empty()) last_residual = res.residuals.back();
  }

  Spectrum s;
  try {
    s = dense_spectrum(graph);
  } catch (const NumericalError& e) {
    std::ostringstream os;
    os << e.what() << " (iterative residual " << last_residual << ")";
    throw NumericalError(os.str());
  }
  FiedlerResult out;
  out.value = s.values(1);
  out.method = SpectrumMethod::dense_full;
  out.vector = s.vectors->col(magnetic ? 2 : 1);
  out.residual = (graph.op * out.vector - out.value * out.vector).norm();
  return out;
}

Spectrum full_spectrum(const TokenGraph& graph) {
  if (graph.size() < 2) throw DataError("full_spectrum needs at least two nodes");
  return dense_spectrum(graph);
}

double dirichlet_energy(const TokenGraph& graph, const Matrix& x) {
  if (x.rows() != graph.size())
    throw DataError("dirichlet_energy: signal has " + std::to_string(x.rows()) + " rows, graph has " +
                    std::to_string(graph.size()) + " nodes");
  double energy = 0.0;
  switch (graph.spec.kind) {
    case LaplacianKind::random_walk: {
      Matrix l = -graph.weights;
      l.diagonal() += graph.degree;
      energy = x.cwiseProduct(l * x).sum();
      break;
    }
    case LaplacianKind::magnetic:
      energy = x.cwiseProduct(graph.hermitian.real() * x).sum();
      break;
    default:
      energy = x.cwiseProduct(graph.op * x).sum();
      break;
  }
  return psd_kind(graph.spec.kind) ? std::max(0.0, energy) : energy;
}

Vector modal_energies(const TokenGraph& graph, const Spectrum& spectrum, const Matrix& x) {
  if (!spectrum.vectors) throw DataError("modal energies need eigenvectors (use full_spectrum)");
  const auto n = graph.size();
  if (x.rows() != n)
    throw DataError("modal_energies: signal has " + std::to_string(x.rows()) + " rows, graph has " +
                    std::to_string(n) + " nodes");
  const Matrix& u = *spectrum.vectors;
  if (spectrum.embedded) {
    Matrix lifted = Matrix::Zero(2 * n, x.cols());
    lifted.topRows(n) = x;
    const Matrix coeff = u.transpose() * lifted;
    Vector e(n);
    for (Eigen::Index m = 0; m < n; ++m)
      e(m) = coeff.row(2 * m).squaredNorm() + coeff.row(2 * m + 1).squaredNorm();
    return e;
  }
  Matrix coeff;
  if (graph.spec.kind == LaplacianKind::random_walk)
    coeff = u.transpose() * (graph.degree.array().sqrt().matrix().asDiagonal() * x);
  else
    coeff = u.transpose() * x;
  return coeff.rowwise().squaredNorm();
}

double spectral_entropy(const Vector& e) {
  const double total = e.sum();
  if (!(total > 0.0) || !std::isfinite(total)) throw DataError("degenerate signal: total modal energy is zero");
  double h = 0.0;
  for (Eigen::Index m = 0; m < e.size(); ++m) {
    const double p = e(m) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(e.size())));
}

double spectral_entropy(const TokenGraph& graph, const Spectrum& spectrum, const Matrix& x) {
  return spectral_entropy(modal_energies(graph, spectrum, x));
}

std::string HferCutoff::describe() const {
  std::ostringstream os;
  switch (mode) {
    case Mode::index: os << "K=" << index; break;
    case Mode::energy_mass: os << "c=" << fraction; break;
    case Mode::eigenvalue_mass: os << "c_eig=" << fraction; break;
  }
  return os.str();
}

int resolve_cutoff(const HferCutoff& cutoff, const Vector& eigenvalues, const Vector& energies) {
  const auto n = static_cast<int>(energies.size());
  if (cutoff.mode == HferCutoff::Mode::index) {
    if (cutoff.index < 1 || cutoff.index >= n)
      throw DataError("HFER cutoff K=" + std::to_string(cutoff.index) + " outside [1, " +
                      std::to_string(n - 1) + "]");
    return cutoff.index;
  }
  if (!(cutoff.fraction > 0.0 && cutoff.fraction < 1.0))
    throw UsageError("HFER mass fraction must lie in (0, 1)");
  Vector mass = cutoff.mode == HferCutoff::Mode::energy_mass ? energies : Vector(eigenvalues.cwiseAbs());
  const double total = mass.sum();
  if (!(total > 0.0)) throw DataError("degenerate signal: total modal energy is zero");
  const double target = (1.0 - cutoff.fraction) * total;
  double cumulative = 0.0;
  for (int m = 0; m < n; ++m) {
    cumulative += mass(m);
    if (cumulative >= target * (1.0 - 1e-12)) return m + 1;  // exact boundary survives rounding
  }
  return n;
}

double hfer(const Vector& e, int k) {
  const double total = e.sum();
  if (!(total > 0.0)) throw DataError("degenerate signal: total modal energy is zero");
  if (k < 0 || k > e.size()) throw DataError("HFER cutoff out of range");
  const double tail = e.tail(e.size() - k).sum();
  return std::clamp(tail / total, 0.0, 1.0);
}

double hfer(const Vector& eigenvalues, const Vector& energies, const HferCutoff& cutoff) {
  return hfer(energies, resolve_cutoff(cutoff, eigenvalues, energies));
}

LayerDiagnostics layer_diagnostics(const TokenGraph& graph, const Matrix& x, const HferCutoff& cutoff) {
  const Spectrum s = full_spectrum(graph);
  LayerDiagnostics d;
  d.nodes = graph.size();
  d.energy = dirichlet_energy(graph, x);
  const Vector e = modal_energies(graph, s, x);
  d.spectral_entropy = spectral_entropy(e);
  d.cutoff_index = resolve_cutoff(cutoff, s.values, e);
  d.hfer = hfer(e, d.cutoff_index);
  d.fiedler = s.values(1);
  if (psd_kind(graph.spec.kind) && d.fiedler < 0.0 && d.fiedler > -1e-10) d.fiedler = 0.0;
  return d;
}

}  // namespace spectraprobe
