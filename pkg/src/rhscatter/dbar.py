"""Real-linear dbar equations for e, X1, X2 on the exterior log-polar grid.

The plane Cauchy transform

    P[f](lambda) = (1/pi) int f(zeta) / (lambda - zeta) dA(zeta)

(which equals -(1/pi) int f / (zeta - lambda)) is applied to densities that
are trigonometric in the angle and constant in s = ln|zeta| inside each
radial cell; ``radial_order=1`` makes them linear with centered slopes.
For a single angular mode the angular integral is elementary, so

    P[F(s) e^{i m theta}](e^{t + i phi}) = 2 e^{i(m-1) phi} int F(s) e^{s + (m-1)(t-s)} ds

over s < t when m <= 0 and minus the same over s > t when m >= 1.  The
radial integral is done exactly per cell, including the cell that holds the
target, so the transform is exact for the discrete density class.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .spectral import ExteriorGrid, SpectralContour, lambda_to_k

log = logging.getLogger(__name__)

P_NORM = 3.0


class DbarSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolarCells:
    """Generic log-polar cell layout (rows in s = ln|lambda|, equispaced angles)."""

    s_lo: np.ndarray
    s_hi: np.ndarray
    ntheta: int

    @property
    def s(self):
        return 0.5 * (self.s_lo + self.s_hi)

    @property
    def theta(self):
        return 2 * np.pi * (np.arange(self.ntheta) + 0.5) / self.ntheta

    @property
    def nodes(self):
        return np.exp(self.s[:, None] + 1j * self.theta[None, :])

    @property
    def shape(self):
        return (self.s.size, self.ntheta)

    @property
    def areas(self):
        a = 0.5 * (np.exp(2 * self.s_hi) - np.exp(2 * self.s_lo)) * 2 * np.pi / self.ntheta
        return np.repeat(a[:, None], self.ntheta, axis=1)


def _phi(x, order):
    """int_0^1 t^order e^{x t} dt for order 0 or 1, stable near x = 0."""
    small = np.abs(x) < 0.1
    xs = np.where(small, 0.0, x)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if order == 0:
            direct = np.expm1(xs) / xs
        else:
            direct = (np.exp(xs) * (xs - 1) + 1) / xs ** 2
    series = np.zeros_like(x)
    term = np.ones_like(x)
    for n in range(9):
        if n:
            term = term * x / n
        series = series + term / (n + 1 + order)
    return np.where(small, series, direct)


def _moments(lo, hi, alpha, beta, centre):
    """(int e^{alpha s + beta} ds, int (s - centre) e^{alpha s + beta} ds) over [lo, hi]."""
    lo, hi, centre = np.broadcast_arrays(lo, hi, centre)
    d = np.maximum(hi - lo, 0.0)
    x = alpha * d
    base = np.exp(alpha * lo + beta)
    m0 = base * d * _phi(x, 0)
    m1 = base * (d * d * _phi(x, 1) + (lo - centre) * d * _phi(x, 0))
    keep = d > 0
    return np.where(keep, m0, 0.0), np.where(keep, m1, 0.0)


def _modes(n):
    return np.fft.fftfreq(n, 1.0 / n).astype(int)


def slope_matrix(s_lo, s_hi) -> np.ndarray:
    """Linear map from cell values to d/ds slopes (centered within each
    contiguous block of cells, one-sided at block ends)."""
    s = 0.5 * (s_lo + s_hi)
    n = s.size
    D = np.zeros((n, n))
    if n < 2:
        return D
    joined = np.isclose(s_hi[:-1], s_lo[1:])
    for i in range(n):
        left = i > 0 and joined[i - 1]
        right = i < n - 1 and joined[i]
        if left and right:
            D[i, i + 1], D[i, i - 1] = 1 / (s[i + 1] - s[i - 1]), -1 / (s[i + 1] - s[i - 1])
        elif right:
            D[i, i + 1], D[i, i] = 1 / (s[i + 1] - s[i]), -1 / (s[i + 1] - s[i])
        elif left:
            D[i, i], D[i, i - 1] = 1 / (s[i] - s[i - 1]), -1 / (s[i] - s[i - 1])
    return D


def _radial_weights(t, s_lo, s_hi, m, D=None):
    """J[k, i]: weight of cell value i at target log-radius t[k] for angular mode m.

    The density is linear in s inside each cell with slopes D @ values.
    """
    t = np.asarray(t)[:, None]
    lo, hi = s_lo[None, :], s_hi[None, :]
    centre = 0.5 * (lo + hi)
    alpha = 2.0 - m
    beta = (m - 1) * t
    if m <= 0:
        m0, m1 = _moments(lo, np.minimum(hi, t), alpha, beta, centre)
    else:
        m0, m1 = _moments(np.maximum(lo, t), hi, alpha, beta, centre)
        m0, m1 = -m0, -m1
    if D is None:
        D = slope_matrix(s_lo, s_hi)
    return m0 + m1 @ D


class CauchyPlan:
    """Precomputed plane Cauchy transform for a fixed cell layout.

    ``radial_order`` 0 treats the density as constant in s on each cell,
    1 as linear with centered slopes.
    """

    def __init__(self, cells, radial_order: int = 0):
        self.cells = cells
        self.radial_order = radial_order
        self.nth = cells.ntheta
        self.m = _modes(self.nth)
        s = cells.s
        n = cells.s.size
        self.D = slope_matrix(cells.s_lo, cells.s_hi) if radial_order else np.zeros((n, n))
        # T[mode, target row, cell row] for targets at the grid nodes
        self.T = np.stack([_radial_weights(s, cells.s_lo, cells.s_hi, m, self.D) for m in self.m])
        self._T2 = (2.0 * self.T).astype(complex)
        # half-offset angles: theta_j = 2 pi (j + 1/2) / n
        self.shift = np.exp(-1j * np.pi * self.m / self.nth)

    def coefficients(self, f):
        """Angular Fourier coefficients c[row, mode, ...] of grid values f[row, angle, ...]."""
        c = np.fft.fft(f, axis=1) / self.nth
        return c * self.shift.reshape((1, -1) + (1,) * (f.ndim - 2))

    def on_grid(self, f):
        """P[f] at the grid nodes; f has shape (rows, ntheta) or (rows, ntheta, k)."""
        c = self.coefficients(f)
        flat = c.reshape(c.shape[0], self.nth, -1).transpose(1, 0, 2)
        d = np.matmul(self._T2, flat).transpose(1, 0, 2).reshape(c.shape)
        # output mode m - 1 evaluated at theta_j
        phase = np.exp(1j * np.pi * self.m / self.nth).reshape((1, -1) + (1,) * (f.ndim - 2))
        out = np.fft.ifft(d * phase, axis=1) * self.nth
        theta = self.cells.theta.reshape((1, -1) + (1,) * (f.ndim - 2))
        return out * np.exp(-1j * theta)

    def target_matrix(self, points) -> np.ndarray:
        """Dense map from grid values (flattened row-major) to P at arbitrary points."""
        points = np.atleast_1d(np.asarray(points, complex))
        t = np.log(np.abs(points))
        phi = np.angle(points)
        cells = self.cells
        nr = cells.s.size
        # (points, modes, rows) weights in coefficient space
        W = np.empty((points.size, self.nth, nr), complex)
        for mi, m in enumerate(self.m):
            W[:, mi, :] = 2.0 * np.exp(1j * (m - 1) * phi)[:, None] * _radial_weights(t, cells.s_lo, cells.s_hi, m, self.D)
        # coefficients c[row, mode] = shift[mode] / n * sum_j f[row, j] e^{-2 pi i mode j / n}
        j = np.arange(self.nth)
        F = np.exp(-2j * np.pi * np.outer(self.m, j) / self.nth) * (self.shift / self.nth)[:, None]
        M = np.einsum("pmr,mj->prj", W, F)
        return M.reshape(points.size, nr * self.nth)


def cauchy_transform(cells, density, target):
    """(1/pi) int density / (target - zeta) dA at arbitrary target point(s)."""
    plan = CauchyPlan(cells)
    M = plan.target_matrix(target)
    out = M @ np.asarray(density, complex).reshape(-1)
    return out if np.ndim(target) else complex(out[0])


# -- r and norms -------------------------------------------------------------------

DBAR_FACTOR = np.pi


def build_r(u: np.ndarray, grid: ExteriorGrid, x) -> np.ndarray:
    """r(x, lambda) = pi sgn(|lambda|^2 - 1) exp(-2i Re k(lambda).x) u(lambda).

    The factor pi goes with h normalized by (2 pi)^-2: finite differences of
    forward-solved mu give d mu / d conj(lambda) = r conj(mu) only with it.
    """
    lam = grid.nodes
    k1, k2 = lambda_to_k(lam, grid.energy)
    phase = np.exp(-2j * (k1.real * x[0] + k2.real * x[1]))
    return DBAR_FACTOR * np.sign(np.abs(lam) ** 2 - 1) * phase * u


def lp2_norm(u: np.ndarray, grid, p: float = P_NORM) -> float:
    """||u||_{L_p(|lambda|<=1)} + || |lambda|^-2 u(1/lambda) ||_{L_p(|lambda|<=1)}."""
    lam = grid.nodes
    A = grid.areas
    inside = np.abs(lam) <= 1
    first = (np.sum(np.abs(u[inside]) ** p * A[inside])) ** (1 / p)
    out = ~inside
    # substitute lambda -> 1/lambda: dA -> |mu|^-4 dA, |lambda|^{-2p} -> |mu|^{2p}
    second = (np.sum(np.abs(lam[out]) ** (2 * p - 4) * np.abs(u[out]) ** p * A[out])) ** (1 / p)
    return float(first + second)


# -- the real-linear solver ------------------------------------------------------

@dataclass
class DbarSolution:
    """Densities phi = r conj(solution) on the grid; solution = rhs + P[phi].

    ``phi_e`` has shape (rows, ntheta); ``phi_x`` has shape (rows, ntheta, 2, N)
    for X1, X2 against the N contour nodes.
    """

    plan: CauchyPlan
    r: np.ndarray
    phi_e: np.ndarray
    phi_x: np.ndarray | None
    zeta: np.ndarray | None
    iterations: int
    residual: float
    r0: float

    def e_at(self, points):
        M = self.plan.target_matrix(points)
        return 1.0 + M @ self.phi_e.reshape(-1)

    def e_on_grid(self):
        return 1.0 + self.plan.on_grid(self.phi_e)

    def omega_smooth(self, points, M=None):
        """(P[phi_1 + i phi_2], P[phi_1 - i phi_2]) at points, shape (npts, N) each."""
        if not np.any(self.r):
            n = np.atleast_1d(points).size if M is None else M.shape[0]
            z = np.zeros((n, self.zeta.size), complex)
            return z, z.copy()
        M = self.plan.target_matrix(points) if M is None else M
        nr, nt = self.r.shape
        ph = self.phi_x.reshape(nr * nt, 2, -1)
        p1 = M @ ph[:, 0, :]
        p2 = M @ ph[:, 1, :]
        return p1 + 1j * p2, p1 - 1j * p2

    def omega(self, points):
        """Omega_1 and Omega_2 at (points x contour nodes)."""
        points = np.atleast_1d(np.asarray(points, complex))
        s1, s2 = self.omega_smooth(points)
        return 1.0 / (self.zeta[None, :] - points[:, None]) + s1, s2

    def X_on_grid(self):
        nodes = self.plan.cells.nodes
        base1 = 1.0 / (2 * (self.zeta[None, None, :] - nodes[..., None]))
        px = self.plan.on_grid(self.phi_x.reshape(self.r.shape + (-1,))).reshape(self.phi_x.shape)
        return base1 + px[..., 0, :], base1 / 1j + px[..., 1, :]


def _fixed_point(plan, r, rhs, tol, maxiter):
    """phi = r conj(rhs + P phi) by successive approximation."""
    phi = r[..., None] * np.conj(rhs)
    norm = max(np.abs(phi).max(), 1e-300)
    last = np.inf
    for it in range(1, maxiter + 1):
        new = r[..., None] * np.conj(rhs + plan.on_grid(phi))
        delta = np.abs(new - phi).max() / norm
        phi = new
        if delta < tol:
            return phi, it, delta
        if it > 5 and delta > 0.9 * last:
            return phi, -it, delta
        last = delta
    return phi, -maxiter, delta


def _dense_solve(plan, r, rhs):
    """Direct solve of the doubled real system when iteration does not contract."""
    shape = r.shape
    n = r.size
    cols = np.zeros(shape + (2 * n,), complex)
    eye = np.eye(n)
    # columns for real and imaginary unit densities
    basis = np.concatenate([eye, 1j * eye], axis=1).reshape(shape + (2 * n,))
    Pb = plan.on_grid(basis)
    cols = basis - r[..., None] * np.conj(Pb)
    A = np.concatenate([cols.real.reshape(n, 2 * n), cols.imag.reshape(n, 2 * n)], axis=0)
    b = r[..., None] * np.conj(rhs)
    B = np.concatenate([b.real.reshape(n, -1), b.imag.reshape(n, -1)], axis=0)
    try:
        sol = np.linalg.solve(A, B)
    except np.linalg.LinAlgError as err:
        raise DbarSolveError(str(err)) from err
    return (sol[:n] + 1j * sol[n:]).reshape(rhs.shape)


def _solve(plan, r, rhs, tol=1e-13, maxiter=200):
    if not np.any(r):
        return np.zeros_like(rhs), 0, 0.0
    phi, it, delta = _fixed_point(plan, r, rhs, tol, maxiter)
    if it < 0:
        log.info("dbar iteration stalled (delta %.2e); using the dense solver", delta)
        phi = _dense_solve(plan, r, rhs)
        it = 0
    res = np.abs(phi - r[..., None] * np.conj(rhs + plan.on_grid(phi))).max()
    return phi, it, float(res)


def solve_e(plan: CauchyPlan, r: np.ndarray, tol: float = 1e-13) -> DbarSolution:
    """e = 1 + P[r conj(e)]."""
    rhs = np.ones(r.shape + (1,), complex)
    phi, it, res = _solve(plan, r, rhs, tol)
    return DbarSolution(plan, r, phi[..., 0], None, None, it, res, lp2_norm(r, plan.cells))


def solve_all(plan: CauchyPlan, r: np.ndarray, zeta: np.ndarray, tol: float = 1e-13) -> DbarSolution:
    """e together with X1(., zeta_j), X2(., zeta_j) for every contour node."""
    N = zeta.size
    if not np.any(r):
        return DbarSolution(plan, r, np.zeros(r.shape, complex), np.zeros(r.shape + (2, N), complex),
                            zeta, 0, 0.0, 0.0)
    nodes = plan.cells.nodes
    base = 1.0 / (2 * (zeta[None, None, :] - nodes[..., None]))
    rhs = np.concatenate([np.ones(r.shape + (1,), complex), base, base / 1j], axis=-1)
    phi, it, res = _solve(plan, r, rhs, tol)
    phi_x = np.stack([phi[..., 1:1 + N], phi[..., 1 + N:]], axis=-2)
    return DbarSolution(plan, r, phi[..., 0], phi_x, zeta, it, res, lp2_norm(r, plan.cells))


def solve_X(plan: CauchyPlan, r: np.ndarray, zeta, which: int, tol: float = 1e-13):
    """X_which(., zeta) on the grid for a single boundary node zeta."""
    nodes = plan.cells.nodes
    base = 1.0 / (2 * (zeta - nodes))
    if which == 2:
        base = base / 1j
    phi, _, _ = _solve(plan, r, base[..., None], tol)
    return base + plan.on_grid(phi[..., 0])


# -- Cauchy integrals over the contour -------------------------------------------

def contour_cauchy_matrix(contour: SpectralContour, targets, side=None) -> np.ndarray:
    """Matrix of K -> (1/2 pi i) int_dLambda K(zeta) d zeta / (zeta - z) at targets z.

    K is represented by its trigonometric interpolant on each circle, for
    which the integral is exact.  Targets on a circle need ``side``: +1
    for the limit from inside the annulus, -1 from outside.
    """
    targets = np.atleast_1d(np.asarray(targets, complex))
    n = contour.n
    C = contour.spec.C
    modes = _modes(n)
    nyq = modes == -n // 2
    j = np.arange(n)
    # coefficient maps: values at nodes -> Fourier coefficients in tau
    F = np.exp(-2j * np.pi * np.outer(modes, j) / n) / n
    out = np.zeros((targets.size, 2 * n), complex)
    rad = np.abs(targets)
    tol = 1e-12
    for k, z in enumerate(targets):
        # outer circle: K = sum c_m (zeta / C)^m, counterclockwise
        on_outer = abs(rad[k] - C) < tol * C
        inside = rad[k] < C and not on_outer or (on_outer and side == 1)
        w = np.zeros(n, complex)
        zz = z / C
        if inside:
            pos = modes >= 0
            w[pos] = zz ** modes[pos]
            w[nyq] = 0.5 * zz ** (n // 2)
        else:
            neg = modes < 0
            w[neg] = -zz ** modes[neg]
            w[nyq] = -0.5 * zz ** (-n // 2)
        out[k, :n] = w @ F
        # inner circle: zeta = e^{-i tau} / C, K = sum a_p (C zeta)^{-p}, clockwise
        on_inner = abs(rad[k] - 1 / C) < tol / C
        outside_inner = rad[k] > 1 / C and not on_inner or (on_inner and side == 1)
        w = np.zeros(n, complex)
        cz = C * z
        if outside_inner:
            pos = modes > 0
            w[pos] = cz ** (-modes[pos])
            w[nyq] = 0.5 * cz ** (-n // 2)
        else:
            nonpos = modes <= 0
            w[nonpos] = -cz ** (-modes[nonpos])
            w[nyq] = -0.5 * cz ** (n // 2)
        out[k, n:] = w @ F
    return out


def omega1_boundary_limit(sol: DbarSolution, contour: SpectralContour, K: np.ndarray, index: int,
                          eps=(2.0 ** -3, 2.0 ** -4, 2.0 ** -5, 2.0 ** -6)):
    """lim_{eps->0+} (1/2 pi i) int Omega_1(lambda'(1 - eps(|lambda'|-1)), zeta) K(zeta) d zeta.

    Evaluated on the eps sequence and Richardson-extrapolated (errors
    assumed to expand in integer powers of eps, consecutive ratio 2).
    Returns (value, table) where table holds the raw sequence.
    """
    lam = contour.nodes[index]
    pts = np.array([lam * (1 - e * (abs(lam) - 1)) for e in eps])
    cauchy = contour_cauchy_matrix(contour, pts) @ K
    s1, _ = sol.omega_smooth(pts) if sol.phi_x is not None else (np.zeros((pts.size, K.size)), None)
    smooth = (s1 * contour.weights[None, :]) @ K / (2j * np.pi)
    seq = cauchy + smooth
    tab = [list(seq)]
    for level in range(1, len(eps)):
        prev = tab[-1]
        f = 2.0 ** level
        tab.append([(f * prev[i + 1] - prev[i]) / (f - 1) for i in range(len(prev) - 1)])
    value = tab[-1][0]
    tail = np.abs(np.diff(seq))
    if np.any(tail[1:] > tail[:-1] * 1.01) and tail[-1] > 1e-8 * max(abs(value), 1):
        raise DbarSolveError(f"boundary limit sequence not converging: {seq}")
    return complex(value), seq
