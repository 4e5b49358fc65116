#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace spectraprobe {

struct LanczosOptions {
  double tol = 1e-6;      // residual <= tol * max(1, |ritz value|)
  int max_iter = 10000;   // cap on Krylov steps (restarts included)
  // Ritz values closer than dedup_tol * max(1, |value|) count as one
  // eigenvalue; used for operators with structurally doubled spectra.
  double dedup_tol = 0.0;
};

struct LanczosResult {
  std::vector<double> values;        // ascending, `want` entries when converged
  Eigen::MatrixXd vectors;           // matching Ritz vectors, one per column
  std::vector<double> residuals;     // ||A y - theta y|| per returned pair
  int iterations = 0;
  bool converged = false;
};

using MatVec = std::function<void(const Eigen::VectorXd& in, Eigen::VectorXd& out)>;

/// Smallest `want` eigenpairs of a real symmetric operator by Lanczos with
/// full reorthogonalization. Columns of `deflate` (orthonormal) are
/// projected out of every Krylov vector, so their eigenvalues are never
/// returned. On an invariant-subspace breakdown the iteration continues
/// from a fresh deterministic vector orthogonal to the current basis.
LanczosResult lanczos_smallest(const MatVec& apply, int n, int want, const Eigen::VectorXd& start,
                               const Eigen::MatrixXd& deflate, const LanczosOptions& options);

}  // namespace spectraprobe
