#include "spectraprobe/lanczos.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "spectraprobe/rng.hpp"

namespace spectraprobe {

namespace {

constexpr std::uint64_t kRestartKey = 0x5EC74A110B0Eu;

void orthogonalize(Eigen::VectorXd& w, const Eigen::MatrixXd& basis, Eigen::Index cols,
                   const Eigen::MatrixXd& deflate) {
  // Two passes of classical Gram-Schmidt keep the basis orthogonal to
  // working precision.
  for (int pass = 0; pass < 2; ++pass) {
    if (deflate.cols() > 0) w -= deflate * (deflate.transpose() * w);
    if (cols > 0) w -= basis.leftCols(cols) * (basis.leftCols(cols).transpose() * w);
  }
}

// Fresh start direction after a breakdown; deterministic per restart count.
bool fresh_vector(Eigen::VectorXd& out, const Eigen::MatrixXd& basis, Eigen::Index cols,
                  const Eigen::MatrixXd& deflate, std::uint32_t restart) {
  Philox4x32 rng(kRestartKey, restart);
  for (int attempt = 0; attempt < 4; ++attempt) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = rng.uniform() - 0.5;
    orthogonalize(out, basis, cols, deflate);
    const double norm = out.norm();
    if (norm > 1e-8) {
      out /= norm;
      return true;
    }
  }
  return false;
}

}  // namespace

LanczosResult lanczos_smallest(const MatVec& apply, int n, int want, const Eigen::VectorXd& start,
                               const Eigen::MatrixXd& deflate, const LanczosOptions& options) {
  LanczosResult result;
  const int max_dim = n - static_cast<int>(deflate.cols());
  if (want < 1 || max_dim < 1) return result;
  want = std::min(want, max_dim);

  Eigen::MatrixXd basis(n, max_dim);
  std::vector<double> alpha;
  std::vector<double> beta;  // beta[j] couples basis j and j+1
  alpha.reserve(static_cast<std::size_t>(max_dim));
  beta.reserve(static_cast<std::size_t>(max_dim));

  std::uint32_t restarts = 0;
  Eigen::VectorXd v = start;
  orthogonalize(v, basis, 0, deflate);
  if (v.norm() < 1e-10 * std::max(1.0, start.norm())) {
    if (!fresh_vector(v, basis, 0, deflate, restarts++)) return result;
  } else {
    v /= v.norm();
  }

  Eigen::VectorXd w(n);
  double scale = 0.0;  // running estimate of ||A|| for breakdown detection
  int next_check = want;

  for (int j = 0; j < max_dim && result.iterations < options.max_iter; ++j) {
    basis.col(j) = v;
    apply(v, w);
    ++result.iterations;
    const double a = v.dot(w);
    w -= a * v;
    if (j > 0) w -= beta.back() * basis.col(j - 1);
    orthogonalize(w, basis, j + 1, deflate);
    alpha.push_back(a);
    double b = w.norm();
    scale = std::max(scale, std::abs(a) + b);

    const int m = j + 1;
    const bool exhausted = (m == max_dim);
    const bool breakdown = b <= 1e-12 * std::max(1.0, scale);
    if (m >= next_check || exhausted || breakdown) {
      next_check = m + std::max(4, m / 10);
      Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha.data(), m);
      Eigen::VectorXd sub(std::max(0, m - 1));
      for (int i = 0; i + 1 < m; ++i) sub(i) = beta[static_cast<std::size_t>(i)];
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
      tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
      const auto& theta = tri.eigenvalues();
      const auto& s = tri.eigenvectors();

      std::vector<int> picked;
      for (int i = 0; i < m && static_cast<int>(picked.size()) < want; ++i) {
        if (!picked.empty() && options.dedup_tol > 0.0) {
          const double prev = theta(picked.back());
          if (std::abs(theta(i) - prev) <= options.dedup_tol * std::max(1.0, std::abs(prev))) continue;
        }
        picked.push_back(i);
      }
      // Residual norm of Ritz pair i is |b * s(m-1, i)|.
      bool ok = static_cast<int>(picked.size()) == want;
      std::vector<double> residuals;
      for (int i : picked) {
        const double r = exhausted ? 0.0 : std::abs(b * s(m - 1, i));
        residuals.push_back(r);
        if (r > options.tol * std::max(1.0, std::abs(theta(i)))) ok = false;
      }
      if (ok) {
        result.converged = true;
        result.vectors.resize(n, want);
        for (int k = 0; k < want; ++k) {
          const int i = picked[static_cast<std::size_t>(k)];
          result.values.push_back(theta(i));
          result.vectors.col(k) = basis.leftCols(m) * s.col(i);
          result.residuals.push_back(residuals[static_cast<std::size_t>(k)]);
        }
        return result;
      }
    }
    if (exhausted) break;

    if (breakdown) {
      // Krylov space is invariant; continue in its orthogonal complement.
      if (!fresh_vector(v, basis, m, deflate, restarts++)) break;
      b = 0.0;
    } else {
      v = w / b;
    }
    beta.push_back(b);
  }
  return result;
}

}  // namespace spectraprobe
