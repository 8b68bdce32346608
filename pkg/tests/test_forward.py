import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhscatter.forward import (ClassicalSolver, ExponentCapError, ManifestError, born_f, b_value,
                               build_dataset, check_exponent, faddeev_amplitude_h, load_dataset,
                               save_dataset, scattering_amplitude_f, solve_classical, solve_faddeev)
from rhscatter.potentials import Disk, make_bump, zero_potential
from rhscatter.spectral import k_dot_x, reflect

D = Disk((0.0, 0.0), 1.0)
E = 1.0


def _angles(n):
    a = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(a), np.sin(a)], -1)


def test_zero_potential_gives_plane_waves():
    v = zero_potential(D, 16)
    k = np.array([0.6, 0.8])
    psi = solve_classical(v, k, E)
    assert np.allclose(psi.values, np.exp(1j * (v.points @ k)))
    mu = solve_faddeev(v, 2.0 + 1j, E)
    assert np.all(mu.values == 1)


def test_momentum_off_shell_rejected():
    with pytest.raises(ValueError):
        solve_classical(zero_potential(D, 8), (1.0, 1.0), E)


def test_classical_matches_dense_solve():
    v = make_bump(D, (0.0, 0.1), 0.8, 1.5, 16)
    cs = ClassicalSolver(v, E)
    psi = cs.solve((1.0, 0.0))
    A = cs.op.dense_support_matrix()
    rhs = np.exp(1j * v.points[..., 0])[cs.op.support]
    ref = np.linalg.solve(A, rhs)
    assert np.allclose(psi.values[cs.op.support], ref, atol=1e-10)


def test_generalized_unitarity_and_reciprocity():
    """F - F^H = -i pi (2 pi / n) F F^H and f(k, l) = f(-l, -k) on the energy circle."""
    v = make_bump(D, (0.1, -0.05), 0.85, 2.0, 24)
    n = 16
    K = _angles(n)
    cs = ClassicalSolver(v, E)
    F = np.array([[scattering_amplitude_f(v, cs.solve(k), l) for l in K] for k in K])
    lhs = F - F.conj().T
    rhs = -1j * np.pi * (2 * np.pi / n) * F @ F.conj().T
    assert np.abs(lhs - rhs).max() < 1e-10 * np.abs(F).max()
    opp = (np.arange(n) + n // 2) % n
    assert np.allclose(F, F[np.ix_(opp, opp)].T, atol=1e-12 * np.abs(F).max())


def test_born_limit():
    K = _angles(8)
    for a in (1e-3, 2e-3):
        v = make_bump(D, (0.1, -0.05), 0.85, a, 24)
        cs = ClassicalSolver(v, E)
        f = np.array([scattering_amplitude_f(v, cs.solve(K[0]), l) for l in K])
        fb = np.array([born_f(v, K[0], l) for l in K])
        assert np.abs(f - fb).max() < 5 * a * np.abs(fb).max()


def test_faddeev_schwarz_symmetry():
    v = make_bump(D, (0.1, -0.05), 0.85, 0.3, 16)
    lam = 1.7 * np.exp(0.4j)
    p = solve_faddeev(v, lam, E).values * np.exp(1j * k_dot_x(lam, v.points, E))
    q = solve_faddeev(v, reflect(lam), E).values * np.exp(1j * k_dot_x(reflect(lam), v.points, E))
    assert np.allclose(q, np.conj(p), atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.4, 4.0), st.floats(-np.pi, np.pi))
def test_b_reflection(r, t):
    v = make_bump(D, (0.1, -0.05), 0.85, 0.3, 12)
    lam = r * np.exp(1j * t)
    b1 = b_value(v, solve_faddeev(v, lam, E), E)
    b2 = b_value(v, solve_faddeev(v, reflect(lam), E), E)
    assert abs(b2 - np.conj(b1)) < 1e-10 * max(abs(b1), 1e-12)


def test_h_on_unit_circle_is_finite_and_exponent_capped():
    v = make_bump(D, (0.0, 0.0), 0.8, 0.3, 12)
    mu = solve_faddeev(v, 1.2, E)
    h = faddeev_amplitude_h(v, mu, np.array([1.2, -1 / 1.2]), E)
    assert np.all(np.isfinite(h))
    assert check_exponent(v, 1.2, 1.2, E, 1.0) == 0.0
    with pytest.raises(ExponentCapError):
        check_exponent(v, 40.0, 1.0, E, 5.0)


def test_dataset_tables(small_dataset):
    ds = small_dataset
    N = ds.contour.size
    assert ds.h.shape == (N, N)
    assert ds.b.shape == ds.grid.shape == ds.u.shape
    assert not ds.failures
    assert ds.b_paired_check < 1e-9
    m = ds.grid.n_outer
    assert np.allclose(ds.b[:m], np.conj(ds.grid.reflect_values(ds.b[m:])))
    assert np.allclose(ds.u, ds.b / np.conj(ds.grid.nodes))


def test_zero_dataset(zero_dataset):
    ds = zero_dataset
    for name in ("h", "b", "u", "f"):
        assert not np.any(getattr(ds, name))
    assert np.all(ds.mu_contour == 1)


def test_exponent_cap_guard(contour16, small_grid):
    v = make_bump(D, (0.0, 0.0), 0.8, 0.1, 12)
    with pytest.raises(ExponentCapError):
        build_dataset(v, contour16, small_grid, exponent_cap=0.1)


def test_save_load_and_corruption(tmp_path, small_dataset):
    m = save_dataset(small_dataset, tmp_path / "ds")
    ds = load_dataset(tmp_path / "ds")
    for name in ("h", "b", "u", "f", "mu_contour"):
        assert np.array_equal(getattr(ds, name), getattr(small_dataset, name))
    m2 = save_dataset(small_dataset, tmp_path / "ds2")
    assert m["checksum"] == m2["checksum"]
    raw = bytearray((tmp_path / "ds" / "h.bin").read_bytes())
    raw[0] ^= 1
    (tmp_path / "ds" / "h.bin").write_bytes(bytes(raw))
    with pytest.raises(ManifestError):
        load_dataset(tmp_path / "ds")
    man = json.loads((tmp_path / "ds2" / "manifest.json").read_text())
    man["E"] = 2.0
    (tmp_path / "ds2" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(ManifestError):
        load_dataset(tmp_path / "ds2")
