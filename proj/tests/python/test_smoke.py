import math
import os
import subprocess

import numpy as np
import pytest

import spectraprobe as sp


def complete(n):
    return np.ones((n, n)) - np.eye(n)


def cycle(n):
    w = np.zeros((n, n))
    for i in range(n):
        w[i, (i + 1) % n] = w[(i + 1) % n, i] = 1.0
    return w


def test_closed_form_fiedler():
    for n in range(3, 13):
        assert sp.fiedler(complete(n)) == pytest.approx(n, abs=1e-8)
        assert sp.fiedler(cycle(n)) == pytest.approx(2 - 2 * math.cos(2 * math.pi / n), abs=1e-8)


def test_laplacian_and_spectrum():
    w = cycle(5)
    lap = sp.laplacian(w)
    np.testing.assert_allclose(lap, np.diag(w.sum(1)) - w)
    ev = sp.eigenvalues(w)
    np.testing.assert_allclose(ev, np.sort(np.linalg.eigvalsh(lap)), atol=1e-12)
    assert sp.fiedler(w, "random_walk") == pytest.approx(sp.fiedler(w, "symmetric"), abs=1e-10)
    assert sp.laplacian(w, "magnetic", 0.3).shape == (10, 10)


def test_energy_and_diagnostics():
    rng = np.random.default_rng(0)
    w = complete(6) * rng.uniform(0.5, 1.5, (6, 6))
    w = (w + w.T) / 2
    x = rng.normal(size=(6, 3))
    brute = 0.5 * sum(w[i, j] * np.sum((x[i] - x[j]) ** 2) for i in range(6) for j in range(6))
    assert sp.dirichlet_energy(w, x) == pytest.approx(brute, rel=1e-12)

    d = sp.diagnostics(complete(2), np.array([[0.0], [1.0]]), kind="combinatorial", hfer_k=1)
    assert d["energy"] == pytest.approx(1.0)
    assert d["spectral_entropy"] == pytest.approx(math.log(2))
    assert d["hfer"] == pytest.approx(0.5)
    assert d["fiedler"] == pytest.approx(2.0)
    with pytest.raises(sp.UsageError):
        sp.diagnostics(complete(3), np.ones((3, 1)), hfer_k=1, hfer_c=0.2)


def test_statistics():
    assert sp.permutation_test([0.3, 1.1, 0.7]) == 0.25
    reject, q = sp.bh_fdr([0.01, 0.02, 0.04, 0.5], 0.05)
    assert reject == [True, True, False, False]
    assert q[0] == pytest.approx(0.04)
    lo, hi = sp.bootstrap_ci([1.0, 2.0, 3.0, 4.0], resamples=500, seed=1)
    assert 1.0 <= lo <= hi <= 4.0
    assert sp.bootstrap_ci([1.0, 2.0, 3.0, 4.0], resamples=500, seed=1) == (lo, hi)
    assert sp.delta_sym(1.1, 0.9) == pytest.approx(20.0)
    c = sp.correlations([1, 2, 3, 4, 5], [2, 4.5, 5.5, 8, 9.9], resamples=200)
    assert c["spearman"] == pytest.approx(1.0)
    with pytest.raises(sp.DataError):
        sp.trimmed_hedges_g([0.5] * 6)


def test_scores():
    assert sp.rci(0.790, 0.898, -0.744, 0.455) == pytest.approx(1.307, abs=1e-3)
    mu, sigma, tau = sp.shd_calibrate([1.0, 1.0, 2.0, 2.0], tau=2.0)
    assert (mu, tau) == (1.5, 2.0)
    assert sigma == pytest.approx(0.57735, abs=1e-5)
    assert sp.shd_detect(1.5 + 3 * sigma, mu, sigma, tau) == 1
    assert sp.shd_detect(1.5 + 2 * sigma, mu, sigma, tau) == 0


def test_tensor_round_trip(tmp_path):
    a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    sp.write_tensor(str(tmp_path / "a.spct"), a)
    np.testing.assert_array_equal(sp.read_tensor(str(tmp_path / "a.spct")), a)
    (tmp_path / "bad.spct").write_bytes(b"nope")
    with pytest.raises(sp.DataError):
        sp.read_tensor(str(tmp_path / "bad.spct"))


def test_run_cli_in_process(tmp_path):
    code, out, _ = sp.run_cli(["--help"])
    assert code == 0
    assert "contrast" in out
    code, _, err = sp.run_cli(["validate", str(tmp_path)])
    assert code == 2
    assert "manifest" in err


@pytest.mark.skipif("SPECTRAPROBE_CLI" not in os.environ, reason="CLI binary path not provided")
def test_cli_binary(tmp_path):
    cli = os.environ["SPECTRAPROBE_CLI"]
    assert subprocess.run([cli, "--version"], capture_output=True).returncode == 0
    assert subprocess.run([cli, "validate", str(tmp_path)], capture_output=True).returncode == 2
    assert subprocess.run([cli, "diagnose"], capture_output=True).returncode == 2
