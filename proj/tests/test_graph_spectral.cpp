#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "spectraprobe/error.hpp"
#include "spectraprobe/graph_builder.hpp"
#include "spectraprobe/lanczos.hpp"
#include "spectraprobe/rng.hpp"
#include "spectraprobe/spectral.hpp"
#include "synth.hpp"

using namespace spectraprobe;

namespace {

constexpr double kPi = std::numbers::pi;

Matrix complete_graph(int n) { return Matrix::Ones(n, n) - Matrix::Identity(n, n); }

Matrix cycle_graph(int n) {
  Matrix w = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) w(i, (i + 1) % n) = w((i + 1) % n, i) = 1.0;
  return w;
}

Matrix path_graph(int n) {
  Matrix w = Matrix::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) w(i, i + 1) = w(i + 1, i) = 1.0;
  return w;
}

TokenGraph lap(const Matrix& w, LaplacianKind kind, double theta = 0.2) { return build_laplacian(w, {kind, theta}); }

Matrix random_signal(int n, int d, std::uint64_t seed) {
  Philox4x32 rng(seed, 3);
  Matrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

// 1/2 sum_ij W_ij ||x_i - x_j||^2, written out directly.
double energy_double_sum(const Matrix& w, const Matrix& x) {
  double s = 0.0;
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) s += w(i, j) * (x.row(i) - x.row(j)).squaredNorm();
  return 0.5 * s;
}

// Second-smallest real part of the eigenvalues of I - D^{-1} W, from the
// general (non-symmetric) solver.
double rw_lambda2_general(const Matrix& w) {
  const Vector d = w.rowwise().sum();
  const Matrix p = Matrix::Identity(w.rows(), w.cols()) - d.cwiseInverse().asDiagonal() * w;
  Eigen::EigenSolver<Matrix> es(p);
  std::vector<double> re;
  for (int i = 0; i < es.eigenvalues().size(); ++i) re.push_back(es.eigenvalues()(i).real());
  std::sort(re.begin(), re.end());
  return re[1];
}

Tensor heads_tensor(const std::vector<Matrix>& heads) {
  Tensor t;
  const auto n = static_cast<std::uint64_t>(heads[0].rows());
  t.dims = {heads.size(), n, n};
  for (const auto& h : heads)
    for (int i = 0; i < h.rows(); ++i)
      for (int j = 0; j < h.cols(); ++j) t.data.push_back(static_cast<float>(h(i, j)));
  return t;
}

}  // namespace

TEST_CASE("symmetrize") {
  CHECK(symmetrize(Matrix::Identity(3, 3)) == Matrix::Identity(3, 3));
  Matrix a(2, 2);
  a << 0.7, 0.3, 0.1, 0.9;
  Matrix expect(2, 2);
  expect << 0.7, 0.2, 0.2, 0.9;
  CHECK((symmetrize(a) - expect).cwiseAbs().maxCoeff() < 1e-15);
  Philox4x32 rng(11);
  Matrix r(7, 7);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) r(i, j) = rng.uniform();
  const Matrix s = symmetrize(r);
  CHECK((s - s.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("head aggregation weights") {
  Matrix p = Matrix::Constant(3, 3, 1.0 / 3.0);
  Matrix q = Matrix::Identity(3, 3);
  std::vector<Matrix> heads{p, q};
  const Matrix uni = aggregate_heads(heads, AggregationKind::uniform);
  CHECK((uni - 0.5 * (p + q)).cwiseAbs().maxCoeff() < 1e-15);
  // Row-stochastic heads all carry mass N.
  const Matrix mw = aggregate_heads(heads, AggregationKind::mass_weighted);
  CHECK((mw - uni).cwiseAbs().maxCoeff() < 1e-15);

  std::vector<Matrix> uneven{Matrix::Constant(2, 2, 0.75), Matrix::Constant(2, 2, 0.25)};  // masses 3 and 1
  const auto w = head_weights(uneven, AggregationKind::mass_weighted);
  CHECK(w[0] == doctest::Approx(0.75));
  CHECK(w[1] == doctest::Approx(0.25));
}

TEST_CASE("mass weights are computed after special-token exclusion") {
  // Head 0 puts everything on BOS; after exclusion its mass is tiny.
  Matrix h0 = Matrix::Zero(4, 4);
  h0.col(0).setConstant(0.97);
  h0.block(1, 1, 3, 3).setConstant(0.01);
  h0(0, 0) = 0.97;
  Matrix h1 = Matrix::Constant(4, 4, 0.25);
  const bool special[] = {true, false, false, false};
  const auto g = build_token_graph(heads_tensor({h0, h1}), special, {AggregationKind::mass_weighted, true},
                                   {LaplacianKind::combinatorial});
  REQUIRE(g.head_weights.size() == 2);
  CHECK(g.head_weights[0] == doctest::Approx(0.09 / (0.09 + 2.25)));
  CHECK(g.excluded_special == std::vector<int>{0});
  CHECK(g.graph.size() == 3);
  CHECK(g.graph.nodes == std::vector<int>{1, 2, 3});
}

TEST_CASE("isolated nodes are dropped and recorded") {
  Matrix h = Matrix::Identity(4, 4) * 0.0;
  h.block(0, 0, 3, 3).setConstant(1.0 / 3.0);
  h(3, 0) = 1.0;  // token 3 only attends to BOS
  const bool special[] = {true, false, false, false};
  const auto g = build_token_graph(heads_tensor({h}), special, {AggregationKind::uniform, true},
                                   {LaplacianKind::random_walk});
  CHECK(g.dropped_isolated == std::vector<int>{3});
  CHECK(g.graph.nodes == std::vector<int>{1, 2});
}

TEST_CASE("laplacian construction examples") {
  const Matrix k2 = complete_graph(2);
  Matrix expect(2, 2);
  expect << 1, -1, -1, 1;
  CHECK((lap(k2, LaplacianKind::combinatorial).op - expect).cwiseAbs().maxCoeff() == 0.0);

  const Matrix w = synth::random_graph(9, 0.4, 5);
  for (double theta : {0.1, 0.7, kPi}) {
    const auto g = lap(w, LaplacianKind::magnetic, theta);
    const Matrix d = w.rowwise().sum().asDiagonal();
    CHECK((g.hermitian.real() - (d - std::cos(theta) * w)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(g.hermitian.imag().cwiseAbs().maxCoeff() < 1e-12);
  }

  Matrix rs = w;
  for (int i = 0; i < 9; ++i) rs(i, i) = 0.0;
  // Symmetric and row-stochastic: D = I, so directed_rw and random_walk coincide.
  Matrix sym_stoch = Matrix::Constant(5, 5, 0.2);
  const auto drw = lap(sym_stoch, LaplacianKind::directed_rw);
  const auto rw = lap(sym_stoch, LaplacianKind::random_walk);
  CHECK((drw.native_operator() - rw.native_operator()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("laplacian errors") {
  CHECK_THROWS_AS(lap(Matrix::Zero(3, 3), LaplacianKind::combinatorial), DataError);
  Matrix asym(2, 2);
  asym << 0, 1, 0.5, 0;
  CHECK_THROWS_AS(lap(asym, LaplacianKind::symmetric), DataError);
  CHECK_NOTHROW(lap(asym, LaplacianKind::directed_rw));
  CHECK_THROWS_AS(lap(complete_graph(3), LaplacianKind::magnetic, 0.0), UsageError);
  CHECK_THROWS_AS(laplacian_kind_from_string("hodge"), UsageError);
}

TEST_CASE("fiedler value closed forms") {
  Matrix k2(2, 2);
  k2 << 0, 0.5, 0.5, 0;
  CHECK(smallest_eigenpair_2(lap(k2, LaplacianKind::combinatorial)).value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(smallest_eigenpair_2(lap(complete_graph(3), LaplacianKind::combinatorial)).value ==
        doctest::Approx(3.0).epsilon(1e-12));
  CHECK(smallest_eigenpair_2(lap(path_graph(3), LaplacianKind::combinatorial)).value ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(smallest_eigenpair_2(lap(cycle_graph(4), LaplacianKind::combinatorial)).value ==
        doctest::Approx(2.0).epsilon(1e-12));
  for (int n = 3; n <= 12; ++n) {
    CHECK(std::abs(smallest_eigenpair_2(lap(complete_graph(n), LaplacianKind::combinatorial)).value - n) < 1e-8);
    CHECK(std::abs(smallest_eigenpair_2(lap(cycle_graph(n), LaplacianKind::combinatorial)).value -
                   (2 - 2 * std::cos(2 * kPi / n))) < 1e-8);
    CHECK(std::abs(smallest_eigenpair_2(lap(path_graph(n), LaplacianKind::combinatorial)).value -
                   (2 - 2 * std::cos(kPi / n))) < 1e-8);
  }
}

TEST_CASE("disconnected graph has zero fiedler value") {
  Matrix w = Matrix::Zero(6, 6);
  w.block(0, 0, 3, 3) = complete_graph(3);
  w.block(3, 3, 3, 3) = complete_graph(3);
  for (auto kind : {LaplacianKind::combinatorial, LaplacianKind::symmetric, LaplacianKind::random_walk}) {
    CHECK(std::abs(smallest_eigenpair_2(lap(w, kind)).value) < 1e-8);
    const auto d = layer_diagnostics(lap(w, kind), random_signal(6, 3, 1), HferCutoff::at_index(2));
    CHECK(std::abs(d.fiedler) < 1e-8);
  }
}

TEST_CASE("random_walk and symmetric share eigenvalues with I - D^-1 W") {
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix w = synth::random_graph(10 + 3 * trial, 0.3, 100 + static_cast<std::uint64_t>(trial));
    const double l_rw = smallest_eigenpair_2(lap(w, LaplacianKind::random_walk)).value;
    const double l_sym = smallest_eigenpair_2(lap(w, LaplacianKind::symmetric)).value;
    CHECK(std::abs(l_rw - l_sym) < 1e-8);
    CHECK(std::abs(l_rw - rw_lambda2_general(w)) < 1e-8);
  }
}

TEST_CASE("iterative solver agrees with dense on large graphs") {
  EigenOptions iter;
  iter.force_iterative = true;
  for (auto kind : {LaplacianKind::combinatorial, LaplacianKind::random_walk, LaplacianKind::magnetic}) {
    Matrix w = synth::random_graph(90, 0.08, 77);
    if (kind == LaplacianKind::magnetic)
      for (int i = 0; i < 90; ++i) w(i, (i + 5) % 90) += 0.7;  // directed extra edges
    const auto g = lap(w, kind);
    const auto a = smallest_eigenpair_2(g, iter);
    const auto b = full_spectrum(g);
    CHECK(a.method == SpectrumMethod::iterative_smallest);
    CHECK(std::abs(a.value - b.values(1)) < 1e-6);
  }
}

TEST_CASE("lanczos finds smallest eigenvalues of a diagonal operator") {
  const int n = 200;
  Vector diag(n);
  for (int i = 0; i < n; ++i) diag(i) = 1.0 + 0.5 * i;
  MatVec apply = [&](const Vector& in, Vector& out) { out = diag.cwiseProduct(in); };
  const auto r = lanczos_smallest(apply, n, 3, Vector::Ones(n), Matrix(n, 0), {});
  REQUIRE(r.converged);
  CHECK(r.values[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.values[1] == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(r.values[2] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("full spectrum contracts") {
  const auto s = full_spectrum(lap(complete_graph(2), LaplacianKind::combinatorial));
  CHECK(s.values(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.values(1) == doctest::Approx(2.0));
  const Matrix& u = *s.vectors;
  CHECK(std::abs(std::abs(u(0, 0)) - 1 / std::sqrt(2.0)) < 1e-12);
  CHECK(std::abs(u(0, 0) - u(1, 0)) < 1e-12);
  CHECK(std::abs(u(0, 1) + u(1, 1)) < 1e-12);
  const Matrix l = lap(complete_graph(2), LaplacianKind::combinatorial).op;
  CHECK((u * s.values.asDiagonal() * u.transpose() - l).cwiseAbs().maxCoeff() < 1e-10);

  const auto g8 = lap(synth::random_graph(8, 0.4, 9), LaplacianKind::symmetric);
  const auto s8 = full_spectrum(g8);
  CHECK((s8.vectors->transpose() * *s8.vectors - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((g8.op * *s8.vectors - *s8.vectors * s8.values.asDiagonal()).cwiseAbs().maxCoeff() < 1e-6);
  for (int i = 1; i < 8; ++i) CHECK(s8.values(i) >= s8.values(i - 1));
  CHECK(s8.values(0) >= -1e-10);
}

TEST_CASE("magnetic operator is PSD with paired embedded eigenvalues") {
  Philox4x32 rng(31);
  for (double theta : {0.1, 0.2, 0.5, 1.5}) {
    Matrix a(12, 12);
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 12; ++j) a(i, j) = rng.uniform() < 0.4 ? rng.uniform() : 0.0;
    for (int i = 0; i < 12; ++i) a(i, (i + 1) % 12) += 0.5;
    const auto s = full_spectrum(lap(a, LaplacianKind::magnetic, theta));
    CHECK(s.embedded);
    CHECK(s.values.size() == 12);
    CHECK(s.values.minCoeff() >= -1e-10);
  }
  // Small phase on a symmetric input reduces to the combinatorial Laplacian.
  const Matrix w = synth::random_graph(7, 0.5, 3);
  const auto mag = lap(w, LaplacianKind::magnetic, 1e-6);
  CHECK((mag.op.topLeftCorner(7, 7) - lap(w, LaplacianKind::combinatorial).op).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("dirichlet energy") {
  const auto k2 = lap(complete_graph(2), LaplacianKind::combinatorial);
  Matrix x(2, 1);
  x << 0, 1;
  CHECK(dirichlet_energy(k2, x) == doctest::Approx(1.0).epsilon(1e-14));

  const Matrix w = synth::random_graph(10, 0.5, 4);
  CHECK(std::abs(dirichlet_energy(lap(w, LaplacianKind::combinatorial), Matrix::Constant(10, 3, 2.5))) < 1e-10);
  CHECK(std::abs(dirichlet_energy(lap(w, LaplacianKind::random_walk), Matrix::Constant(10, 3, 2.5))) < 1e-10);

  for (std::uint64_t t = 0; t < 50; ++t) {
    const int n = 2 + static_cast<int>(t % 15);
    const Matrix g = synth::random_graph(n, 0.5, 1000 + t);
    const Matrix xs = random_signal(n, 4, t);
    const double oracle = energy_double_sum(g, xs);
    CHECK(std::abs(dirichlet_energy(lap(g, LaplacianKind::combinatorial), xs) - oracle) <= 1e-10 * oracle);
    CHECK(std::abs(dirichlet_energy(lap(g, LaplacianKind::random_walk), xs) - oracle) <= 1e-10 * oracle);
    // symmetric: the same double sum over degree-normalized rows
    const Vector d = g.rowwise().sum();
    const Matrix xn = d.cwiseSqrt().cwiseInverse().asDiagonal() * xs;
    const double sym_oracle = energy_double_sum(g, xn);
    CHECK(std::abs(dirichlet_energy(lap(g, LaplacianKind::symmetric), xs) - sym_oracle) <= 1e-10 * sym_oracle);
  }
  CHECK_THROWS_AS(dirichlet_energy(k2, Matrix::Zero(3, 1)), DataError);
}

TEST_CASE("spectral entropy") {
  const auto g = lap(synth::random_graph(4, 0.6, 8), LaplacianKind::combinatorial);
  const auto s = full_spectrum(g);
  const Matrix& u = *s.vectors;
  CHECK(spectral_entropy(g, s, u.col(2)) == doctest::Approx(0.0).epsilon(1e-12));
  const Matrix equal = u * Vector::Ones(4);  // unit coefficient on every mode
  CHECK(spectral_entropy(g, s, equal) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(std::log(4.0) == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK_THROWS_AS(spectral_entropy(g, s, Matrix::Zero(4, 2)), DataError);
}

TEST_CASE("hfer") {
  const auto g = lap(synth::random_graph(6, 0.5, 12), LaplacianKind::combinatorial);
  const auto s = full_spectrum(g);
  const Vector e_const = modal_energies(g, s, Matrix::Constant(6, 1, 1.0));
  for (int k = 1; k < 6; ++k) CHECK(hfer(e_const, k) == doctest::Approx(0.0).epsilon(1e-12));
  const Vector e_top = modal_energies(g, s, s.vectors->col(5));
  CHECK(hfer(e_top, 5) == doctest::Approx(1.0).epsilon(1e-12));
  const Vector e = modal_energies(g, s, random_signal(6, 3, 2));
  for (int k = 2; k < 6; ++k) CHECK(hfer(e, k) <= hfer(e, k - 1) + 1e-15);
  CHECK_THROWS_AS(resolve_cutoff(HferCutoff::at_index(6), s.values, e), DataError);
  CHECK_THROWS_AS(resolve_cutoff(HferCutoff::energy_mass(1.0), s.values, e), UsageError);
}

TEST_CASE("energy-mass cutoff is the smallest K reaching 1-c of the energy") {
  Vector e(5);
  e << 0.5, 0.2, 0.1, 0.1, 0.1;
  const Vector lambda = Vector::LinSpaced(5, 0.0, 4.0);
  CHECK(resolve_cutoff(HferCutoff::energy_mass(0.2), lambda, e) == 3);  // 0.8 reached at m = 3
  CHECK(hfer(lambda, e, HferCutoff::energy_mass(0.2)) == doctest::Approx(0.2));
  CHECK(resolve_cutoff(HferCutoff::energy_mass(0.5), lambda, e) == 1);
}

TEST_CASE("layer diagnostics on K2") {
  const auto g = lap(complete_graph(2), LaplacianKind::combinatorial);
  Matrix x(2, 1);
  x << 0, 1;
  // x = (0,1) has coefficients +-1/sqrt(2) on both modes.
  const auto d = layer_diagnostics(g, x, HferCutoff::at_index(1));
  CHECK(d.energy == doctest::Approx(1.0));
  CHECK(d.spectral_entropy == doctest::Approx(std::log(2.0)));
  CHECK(d.hfer == doctest::Approx(0.5));
  CHECK(d.fiedler == doctest::Approx(2.0));
  // The mean-free signal (-1, 1) lies in mode 2 only.
  Matrix y(2, 1);
  y << -1, 1;
  const auto dy = layer_diagnostics(g, y, HferCutoff::at_index(1));
  CHECK(dy.energy == doctest::Approx(4.0));
  CHECK(dy.spectral_entropy == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(dy.hfer == doctest::Approx(1.0));

  const auto dc = layer_diagnostics(g, Matrix::Constant(2, 3, 0.4), HferCutoff::energy_mass(0.2));
  CHECK(std::abs(dc.energy) < 1e-12);
  CHECK(std::abs(dc.spectral_entropy) < 1e-12);
  CHECK(std::abs(dc.hfer) < 1e-12);
}

TEST_CASE("diagnostic ranges on random graphs for every kind") {
  for (auto kind : {LaplacianKind::combinatorial, LaplacianKind::symmetric, LaplacianKind::random_walk,
                    LaplacianKind::directed_rw, LaplacianKind::magnetic}) {
    for (std::uint64_t t = 0; t < 10; ++t) {
      const int n = 4 + static_cast<int>(t);
      const auto g = lap(synth::random_graph(n, 0.4, 50 + t), kind);
      const auto d = layer_diagnostics(g, random_signal(n, 5, t), HferCutoff::energy_mass(0.2));
      CHECK(d.spectral_entropy >= 0.0);
      CHECK(d.spectral_entropy <= std::log(static_cast<double>(n)) + 1e-12);
      CHECK(d.hfer >= 0.0);
      CHECK(d.hfer <= 1.0);
      if (kind != LaplacianKind::directed_rw) CHECK(d.energy >= -1e-12);
    }
  }
}
