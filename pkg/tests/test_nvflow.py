import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhscatter.forward import ExponentCapError
from rhscatter.nvflow import (_regions, b_phase, blowup_scan, cartesian_cauchy, det_field,
                              evolve_data, h_phase, nv_residual)

times = st.floats(-0.05, 0.05, allow_nan=False)


@settings(max_examples=20, deadline=None)
@given(times)
def test_evolution_group_property(small_dataset, t):
    fwd = evolve_data(small_dataset, t)
    back = evolve_data(fwd.dataset, -t)
    for name in ("h", "b", "u"):
        ref = getattr(small_dataset, name)
        assert np.abs(getattr(back.dataset, name) - ref).max() <= 1e-12 * np.abs(ref).max()


@settings(max_examples=20, deadline=None)
@given(times, times)
def test_evolution_composes(small_dataset, s, t):
    a = evolve_data(evolve_data(small_dataset, s).dataset, t).dataset
    b = evolve_data(small_dataset, s + t).dataset
    assert np.allclose(a.h, b.h, rtol=1e-12, atol=1e-12 * np.abs(b.h).max())


@given(st.floats(-10, 10))
def test_b_modulus_preserved(small_dataset, t):
    ev = evolve_data(small_dataset, t)
    b, bt = small_dataset.b, ev.b_t
    # |exp(i theta)| = 1 up to the rounding of cos and sin
    assert np.all(np.abs(np.abs(bt) - np.abs(b)) <= 4 * np.finfo(float).eps * np.abs(b))
    assert np.allclose(np.abs(ev.f_t), np.abs(small_dataset.f), rtol=1e-14, atol=0)


def test_phases():
    lam = np.array([2.0 + 1j, 0.3j])
    assert np.all(b_phase(lam, 1.0, 0.7).real == 0)
    ph = h_phase(lam, lam, 2.0, 0.3)
    assert np.allclose(np.diag(ph), 0)
    assert np.allclose(ph, -ph.T)


def test_time_zero_is_identity(small_dataset):
    ev = evolve_data(small_dataset, 0.0)
    assert ev.dataset is small_dataset and ev.f_t is small_dataset.f


def test_exponent_cap(small_dataset):
    with pytest.raises(ExponentCapError):
        evolve_data(small_dataset, 50.0, exponent_cap=1.0)


def test_blowup_scan_static_and_order_independent(small_dataset, small_context):
    xs = ys = np.linspace(-0.5, 0.5, 3)
    data = {1.0: small_dataset}
    rep, fields = blowup_scan(data, [0.0], xs, ys)
    X = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1)
    assert np.array_equal(fields[(1.0, 0.0)], det_field(small_context, X))
    assert rep["total_flagged"] == 0
    r1, _ = blowup_scan(data, [0.0, 0.02, -0.02], xs, ys)
    r2, _ = blowup_scan(data, [-0.02, 0.02, 0.0], xs, ys)
    assert r1["cells"] == r2["cells"]
    assert all(c["threshold_stable"] for c in r1["cells"])


def test_region_certificate():
    x = np.linspace(-1, 1, 9)
    X, Y = np.meshgrid(x, x, indexing="ij")
    det = (X - 0.1) + 1j * (Y + 0.05)
    mask = np.abs(det) < 0.2
    regions = _regions(mask, det)
    assert len(regions) == 1 and regions[0]["certified"]
    far = _regions(np.abs(det + 5) < 4.95, det + 5)
    assert all(not r["certified"] for r in far)


def test_cartesian_cauchy_of_disk():
    n = 161
    h = 3.0 / (n - 1)
    x = -1.5 + h * np.arange(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    Z = X + 1j * Y
    f = (np.abs(Z) < 1).astype(float)
    P = cartesian_cauchy(f, h)
    # (1/pi) int_disk dA / (z - y) = conj(z) inside, 1/z outside (shifted to the grid origin)
    inside = np.abs(Z) < 0.6
    outside = np.abs(Z) > 1.3
    assert np.abs(P[inside] - np.conj(Z[inside])).max() < 0.02
    assert np.abs(P[outside] - 1 / Z[outside]).max() < 0.02


def test_nv_residual_of_zero_field():
    z = np.zeros((12, 12))
    out = nv_residual(z, z, z, 0.1, 0.01, 1.0)
    assert out["residual_max"] == 0
    assert "diagnostic" in out["label"]
