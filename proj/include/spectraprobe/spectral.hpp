#pragma once

#include <optional>
#include <string>

#include "spectraprobe/graph_builder.hpp"

namespace spectraprobe {

enum class SpectrumMethod { iterative_smallest, dense_full };

/// Eigenstructure of a TokenGraph's operator.
///
/// For the magnetic kind the complex Hermitian operator is handled through
/// its real 2n x 2n embedding: `values` holds the n de-duplicated
/// eigenvalues and `vectors` the 2n embedded eigenvectors, whose
/// consecutive pairs (2m, 2m+1) span the complex mode m.
struct Spectrum {
  Vector values;
  std::optional<Matrix> vectors;
  SpectrumMethod method = SpectrumMethod::dense_full;
  bool embedded = false;
};

struct EigenOptions {
  double tol = 1e-6;
  int max_iter = 10000;
  int dense_threshold = 64;  // graphs with n <= this go straight to the dense solver
  bool force_iterative = false;
};

struct FiedlerResult {
  double value = 0.0;
  Vector vector;  // embedded (2n) for the magnetic kind
  SpectrumMethod method = SpectrumMethod::dense_full;
  double residual = 0.0;
};

/// Second-smallest eigenvalue of the graph operator. Undirected kinds deflate
/// their known null vector; directed kinds take the two smallest.
FiedlerResult smallest_eigenpair_2(const TokenGraph& graph, const EigenOptions& options = {});

/// Complete orthonormal eigendecomposition (dense).
Spectrum full_spectrum(const TokenGraph& graph);

/// Tr(X^T L X). For random_walk the quadratic form is taken in the
/// degree-weighted inner product, Tr(X^T D L_rw X) = Tr(X^T (D - W) X),
/// which is the form whose spectral expansion matches the GFT below.
double dirichlet_energy(const TokenGraph& graph, const Matrix& signal);

/// Modal energies e_m = ||Xhat_m||^2, ordered like spectrum.values.
/// random_walk uses Xhat = U^T D^{1/2} X with U the symmetric operator's basis.
Vector modal_energies(const TokenGraph& graph, const Spectrum& spectrum, const Matrix& signal);

/// Natural-log Shannon entropy of the normalized modal energies.
double spectral_entropy(const Vector& energies);
double spectral_entropy(const TokenGraph& graph, const Spectrum& spectrum, const Matrix& signal);

struct HferCutoff {
  enum class Mode { index, energy_mass, eigenvalue_mass };
  Mode mode = Mode::energy_mass;
  int index = 0;         // K, for Mode::index
  double fraction = 0.2; // c, for the mass modes

  static HferCutoff at_index(int k) { return {Mode::index, k, 0.0}; }
  static HferCutoff energy_mass(double c) { return {Mode::energy_mass, 0, c}; }
  static HferCutoff eigenvalue_mass(double c) { return {Mode::eigenvalue_mass, 0, c}; }

  std::string describe() const;
};

/// Index K (1-based count of retained low modes) implied by a cutoff.
/// Mass modes return the smallest K whose eigenvalue-ordered cumulative mass
/// reaches (1 - c) of the total.
int resolve_cutoff(const HferCutoff& cutoff, const Vector& eigenvalues, const Vector& energies);

/// sum_{m > K} e_m / sum_m e_m.
double hfer(const Vector& energies, int k);
double hfer(const Vector& eigenvalues, const Vector& energies, const HferCutoff& cutoff);

struct LayerDiagnostics {
  double energy = 0.0;
  double spectral_entropy = 0.0;
  double hfer = 0.0;
  double fiedler = 0.0;
  int cutoff_index = 0;
  int nodes = 0;
};

LayerDiagnostics layer_diagnostics(const TokenGraph& graph, const Matrix& signal,
                                   const HferCutoff& cutoff);

}  // namespace spectraprobe
