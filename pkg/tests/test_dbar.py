import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhscatter.dbar import (DBAR_FACTOR, CauchyPlan, PolarCells, _dense_solve, _solve, build_r,
                            cauchy_transform, contour_cauchy_matrix, lp2_norm, solve_all, solve_e)
from rhscatter.spectral import ContourSpec, build_contour, build_exterior_grid


def annulus_cells(a, b, nr=24, nth=16):
    edges = np.linspace(np.log(a), np.log(b), nr + 1)
    return PolarCells(edges[:-1], edges[1:], nth)


def annulus_transform(lam, a, b):
    """(1/pi) int_{a<|zeta|<b} dA / (lam - zeta)."""
    r = abs(lam)
    if r < a:
        return 0j
    if r < b:
        return np.conj(lam) - a * a / lam
    return (b * b - a * a) / lam


def test_disk_indicator_transform():
    # the unit disk up to a tiny hole around 0, which only shows near the hole
    a = np.exp(-14)
    cells = annulus_cells(a, 1.0, nr=140, nth=16)
    f = np.ones(cells.shape)
    plan = CauchyPlan(cells)
    nodes = cells.nodes
    assert np.allclose(plan.on_grid(f), np.conj(nodes) - a * a / nodes, atol=1e-12)
    pts = np.array([0.3 + 0.2j, 2.0 - 1j, -0.7j, 1.5])
    exact = np.where(np.abs(pts) < 1, np.conj(pts), 1 / pts)
    assert np.allclose(cauchy_transform(cells, f, pts), exact, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 1.0), st.floats(1.1, 3.0), st.floats(0.05, 5.0), st.floats(-np.pi, np.pi))
def test_annulus_indicator_transform(a, ratio, r, t):
    b = a * ratio
    cells = annulus_cells(a, b, nr=4, nth=8)
    lam = r * np.exp(1j * t)
    if min(abs(r - a), abs(r - b)) < 1e-6:
        return
    for order in (0, 1):
        plan = CauchyPlan(cells, order)
        val = plan.target_matrix([lam]) @ np.ones(cells.shape).reshape(-1)
        assert abs(val[0] - annulus_transform(lam, a, b)) < 1e-11 * max(1, b * b / r)


def test_grid_and_target_evaluation_agree():
    g = build_exterior_grid(1.0, 0.25, nradial=6, ntheta=16)
    rng = np.random.default_rng(1)
    f = (rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)) * np.exp(-np.abs(g.s))[:, None]
    for order in (0, 1):
        plan = CauchyPlan(g, order)
        M = plan.target_matrix(g.nodes.reshape(-1))
        assert np.allclose(M @ f.reshape(-1), plan.on_grid(f).reshape(-1), atol=1e-12)


def test_transform_inverts_dbar_at_nodes():
    g = build_exterior_grid(1.0, 0.25, nradial=6, ntheta=16)
    rng = np.random.default_rng(2)
    f = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    plan = CauchyPlan(g)
    h = 1e-5
    for i, j in [(2, 3), (9, 12)]:
        z = g.nodes[i, j]
        v = plan.target_matrix(np.array([z + h, z - h, z + 1j * h, z - 1j * h])) @ f.reshape(-1)
        dbar = 0.5 * ((v[0] - v[1]) / (2 * h) + 1j * (v[2] - v[3]) / (2 * h))
        assert abs(dbar - f[i, j]) < 1e-5 * np.abs(f).max()


@given(st.floats(0.5, 3.0), st.floats(-np.pi, np.pi), st.integers(-4, 4))
def test_contour_cauchy_reproduces_laurent_polynomials(r, t, p):
    c = build_contour(ContourSpec(1.0, 0.5, 32))
    C = c.spec.C
    z = r * np.exp(1j * t)
    if min(abs(r - C), abs(r - 1 / C)) < 1e-3:
        return
    K = c.nodes ** p
    val = (contour_cauchy_matrix(c, [z]) @ K)[0]
    expected = z ** p if 1 / C < r < C else 0.0
    assert abs(val - expected) < 1e-10 * max(1, C ** abs(p), abs(z) ** p)


def test_contour_cauchy_boundary_side():
    c = build_contour(ContourSpec(1.0, 0.5, 16))
    K = c.nodes ** 2 + 1 / c.nodes
    inside = contour_cauchy_matrix(c, c.nodes, side=1) @ K
    outside = contour_cauchy_matrix(c, c.nodes, side=-1) @ K
    assert np.allclose(inside, K)
    assert np.allclose(outside, 0, atol=1e-12)


def test_r_definition_and_norm():
    g = build_exterior_grid(1.0, 0.25, nradial=4, ntheta=8)
    u = np.full(g.shape, 0.01 + 0.02j)
    r = build_r(u, g, np.array([0.3, -0.2]))
    assert np.allclose(np.abs(r), DBAR_FACTOR * np.abs(u))
    assert np.all(np.sign(np.abs(g.nodes) - 1) * (r / u / DBAR_FACTOR).real > -1)
    assert lp2_norm(2 * u, g) == pytest.approx(2 * lp2_norm(u, g))
    assert not np.any(build_r(np.zeros(g.shape), g, np.zeros(2)))


def test_vanishing_coefficient():
    g = build_exterior_grid(1.0, 0.25, nradial=4, ntheta=8)
    plan = CauchyPlan(g)
    c = build_contour(ContourSpec(1.0, 0.25, 8))
    sol = solve_all(plan, np.zeros(g.shape, complex), c.nodes)
    assert np.all(sol.e_on_grid() == 1)
    pts = np.array([3.0 + 1j, 0.2j])
    om1, om2 = sol.omega(pts)
    assert np.allclose(om1, 1 / (c.nodes[None, :] - pts[:, None]))
    assert not np.any(om2)


def test_fixed_point_matches_dense_solve():
    g = build_exterior_grid(1.0, 0.25, nradial=5, ntheta=8)
    plan = CauchyPlan(g)
    rng = np.random.default_rng(3)
    # decay like the data: |r| ~ |lambda|^-2 outside, ~ |lambda|^2 in the inner block
    decay = np.minimum(np.abs(g.nodes), 1 / np.abs(g.nodes)) ** 2
    r = 0.05 * decay * (rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape))
    rhs = np.ones(g.shape + (1,), complex)
    phi, it, res = _solve(plan, r, rhs)
    assert it > 0 and res < 1e-12
    assert np.allclose(phi, _dense_solve(plan, r, rhs), atol=1e-12)
    sol = solve_e(plan, r)
    e = sol.e_on_grid()
    assert np.allclose(e, 1 + plan.on_grid(r * np.conj(e)), atol=1e-12)


def test_dense_fallback_when_iteration_stalls():
    g = build_exterior_grid(1.0, 0.25, nradial=5, ntheta=8)
    plan = CauchyPlan(g)
    rng = np.random.default_rng(4)
    r = 3.0 * (rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape))
    rhs = np.ones(g.shape + (1,), complex)
    phi, it, res = _solve(plan, r, rhs)
    assert it == 0
    assert res < 1e-8 * np.abs(phi).max()


def test_boundary_limit_routes_agree(small_dataset, small_context):
    from rhscatter.dbar import omega1_boundary_limit
    from rhscatter.reconstruct import assemble_system, solve_jump

    ctx = small_context
    c = ctx.contour
    system = assemble_system(ctx, np.array([0.2, -0.1]))
    K = solve_jump(system).K
    s1, _ = system.dbar.omega_smooth(c.nodes, ctx.Mc)
    projected = ctx.plemelj @ K + (s1 * c.weights[None, :]) @ K / (2j * np.pi)
    for idx in (0, 5, c.n + 3):
        value, seq = omega1_boundary_limit(system.dbar, c, K, idx)
        assert abs(value - projected[idx]) < 1e-4 * np.abs(K).max()
        assert abs(seq[-1] - projected[idx]) > abs(value - projected[idx])
