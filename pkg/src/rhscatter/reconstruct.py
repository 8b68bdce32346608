"""Jump system on the contour, its modified Fredholm determinant, and
recovery of mu' and the potential.

With Rq the W-product quadrature times h and the x-phase, the jump K obeys

    K + Rq (e + B1 K + B2 conj(K)) = 0

where B1 realizes (1/2 pi i) int Omega_1(lambda' from inside, zeta) K d zeta
and B2 realizes -(1/2 pi i) int Omega_2(lambda', zeta) conj(K) d conj(zeta).
Setting M_j = Rq B_j and I = -Rq e gives the doubled system

    [[1 + M1, M2], [conj M2, 1 + conj M1]] (K, conj K) = (I, conj I).
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve

from .dbar import CauchyPlan, DbarSolution, build_r, contour_cauchy_matrix, solve_all
from .forward import ExponentCapError, ScatteringDataset
from .kernels import w_quadrature_matrix
from .spectral import lambda_to_k

log = logging.getLogger(__name__)

PROBE_PHASES = (1, 1j, -1, -1j)
NEAR_ZERO_MU = 1e-8


class SingularSystemError(np.linalg.LinAlgError):
    """The doubled system is numerically singular (det A close to 0 at this x)."""


class BranchWarning(UserWarning):
    pass


@dataclass
class RHContext:
    """x-independent precomputation shared by every point of a sweep."""

    dataset: ScatteringDataset
    Q: np.ndarray
    plan: CauchyPlan
    Mc: np.ndarray  # grid density -> P at contour nodes
    plemelj: np.ndarray  # interior boundary value of the contour Cauchy integral
    probes: np.ndarray
    Mp: np.ndarray  # grid density -> P at probes
    Cp: np.ndarray  # contour Cauchy integral at probes
    exponent_cap: float = 60.0

    @property
    def contour(self):
        return self.dataset.contour


def default_probes(C: float, factor: float = 4.0) -> np.ndarray:
    return factor * C * np.asarray(PROBE_PHASES, complex)


def build_context(ds: ScatteringDataset, probes=None, exponent_cap: float = 60.0,
                  Q: np.ndarray | None = None, radial_order: int = 0) -> RHContext:
    contour = ds.contour
    probes = default_probes(contour.spec.C) if probes is None else np.asarray(probes, complex)
    plan = CauchyPlan(ds.grid, radial_order)
    Q = w_quadrature_matrix(contour) if Q is None else Q
    return RHContext(
        dataset=ds, Q=Q, plan=plan,
        Mc=plan.target_matrix(contour.nodes),
        plemelj=contour_cauchy_matrix(contour, contour.nodes, side=1),
        probes=probes,
        Mp=plan.target_matrix(probes),
        Cp=contour_cauchy_matrix(contour, probes),
        exponent_cap=exponent_cap,
    )


@dataclass
class RHSystem:
    x: np.ndarray
    I_vec: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    Rq: np.ndarray
    e_contour: np.ndarray
    dbar: DbarSolution = field(repr=False)

    @property
    def size(self) -> int:
        return self.I_vec.size

    def doubled(self) -> np.ndarray:
        """The operator A of (Id + A)(K, conj K) = (I, conj I)."""
        return np.block([[self.A1, self.A2], [np.conj(self.A2), np.conj(self.A1)]])


@dataclass
class JumpSolution:
    K: np.ndarray
    det_A: complex
    condition: float
    conj_mismatch: float


def _phase_matrix(ctx: RHContext, x) -> np.ndarray:
    k1, k2 = lambda_to_k(ctx.contour.nodes, ctx.dataset.energy)
    kx = k1 * x[0] + k2 * x[1]
    ex = np.abs(kx.imag[None, :] - kx.imag[:, None]).max()
    if ex > ctx.exponent_cap:
        raise ExponentCapError(f"phase exponent {ex:.2f} exceeds cap {ctx.exponent_cap}")
    return np.exp(1j * (kx[None, :] - kx[:, None]))


def assemble_system(ctx: RHContext, x, dbar: DbarSolution | None = None) -> RHSystem:
    """I, A1, A2 at the point x (the dbar problem is solved here unless given)."""
    x = np.asarray(x, float)
    ds = ctx.dataset
    contour = ctx.contour
    if dbar is None:
        r = build_r(ds.u, ds.grid, x)
        dbar = solve_all(ctx.plan, r, contour.nodes)
    Rq = ctx.Q * ds.h * _phase_matrix(ctx, x)
    e_c = 1.0 + ctx.Mc @ dbar.phi_e.reshape(-1)
    S1, S2 = dbar.omega_smooth(contour.nodes, ctx.Mc)
    w = contour.weights
    B1 = ctx.plemelj + S1 * w[None, :] / (2j * np.pi)
    B2 = -S2 * np.conj(w)[None, :] / (2j * np.pi)
    return RHSystem(x, -Rq @ e_c, Rq @ B1, Rq @ B2, Rq, e_c, dbar)


def fredholm_det(system: RHSystem, previous: np.ndarray | None = None) -> complex:
    """exp(sum ln(1 + nu) - nu) over eigenvalues nu of the doubled operator.

    ``previous`` (eigenvalues at a neighbouring parameter) enables a branch
    check: a warning is issued if an eigenvalue path crosses (-inf, -1].
    """
    nu = np.linalg.eigvals(system.doubled())
    if previous is not None and previous.size == nu.size:
        z0 = 1 + previous
        z1 = 1 + nu
        crossing = (z0.imag * z1.imag < 0) & ((z0.real + z1.real) < 0)
        if np.any(crossing):
            warnings.warn("determinant eigenvalue crossed the log branch cut", BranchWarning)
    return complex(np.exp(np.sum(np.log(1 + nu) - nu)))


def solve_jump(system: RHSystem, method: str = "direct", iterations: int = 10,
               with_det: bool = True, cond_limit: float = 1e12) -> JumpSolution:
    """Solve the doubled system for (K, conj K).

    ``method="neumann"`` runs ``iterations`` steps of successive
    approximation started from zero.
    """
    N = system.size
    A = system.doubled()
    rhs = np.concatenate([system.I_vec, np.conj(system.I_vec)])
    if method == "neumann":
        z = np.zeros_like(rhs)
        for _ in range(iterations):
            z = rhs - A @ z
        cond = float("nan")
        det = fredholm_det(system) if with_det else complex("nan")
    else:
        M = np.eye(2 * N) + A
        lu, piv = lu_factor(M, check_finite=False)
        rcond, _ = lapack.zgecon(lu, np.linalg.norm(M, 1), norm="1")
        cond = float("inf") if rcond == 0 else 1.0 / rcond
        if not np.isfinite(cond) or cond > cond_limit:
            raise SingularSystemError(f"doubled system condition {cond:.3e}")
        z = lu_solve((lu, piv), rhs, check_finite=False)
        # prod(1 + nu) exp(-sum nu): the modified determinant without eigenvalues
        sign = np.prod(np.where(piv != np.arange(2 * N), -1.0, 1.0))
        det = complex(sign * np.prod(np.diag(lu)) * np.exp(-np.trace(A))) if with_det else complex("nan")
    K1, K2 = z[:N], z[N:]
    mismatch = float(np.abs(K1 - np.conj(K2)).max())
    K = 0.5 * (K1 + np.conj(K2))
    return JumpSolution(K, det, cond, mismatch)


def reconstruct_mu(ctx: RHContext, system: RHSystem, jump: JumpSolution,
                   probes=None) -> np.ndarray:
    """mu'(lambda) = e + (1/2 pi i) int Omega_1 K d zeta - (1/2 pi i) int Omega_2 conj(K) d conj(zeta)."""
    contour = ctx.contour
    if probes is None:
        Mp, Cp = ctx.Mp, ctx.Cp
    else:
        probes = np.atleast_1d(np.asarray(probes, complex))
        Mp = ctx.plan.target_matrix(probes)
        Cp = contour_cauchy_matrix(contour, probes)
    dbar = system.dbar
    e_p = 1.0 + Mp @ dbar.phi_e.reshape(-1)
    S1, S2 = dbar.omega_smooth(None, Mp)
    w = contour.weights
    K = jump.K
    return (e_p + Cp @ K + (S1 @ (w * K)) / (2j * np.pi)
            - (S2 @ np.conj(w * K)) / (2j * np.pi))


# -- sweeps over x -------------------------------------------------------------------

@dataclass
class PointResult:
    mu: np.ndarray  # mu' at the probes
    det: complex
    condition: float
    ok: bool


def solve_point(ctx: RHContext, x) -> PointResult:
    try:
        sys_ = assemble_system(ctx, x)
        jump = solve_jump(sys_)
    except SingularSystemError as err:
        log.info("singular system at x=%s: %s", x, err)
        return PointResult(np.full(ctx.probes.size, np.nan + 0j), 0j, float("inf"), False)
    return PointResult(reconstruct_mu(ctx, sys_, jump), jump.det_A, jump.condition, True)


_CTX: RHContext | None = None


def _init_worker(ctx):
    global _CTX
    _CTX = ctx


def _worker(x):
    return solve_point(_CTX, x)


def sweep(ctx: RHContext, points: np.ndarray, workers: int = 1) -> list[PointResult]:
    """Independent RH solves at each point; results in input order."""
    pts = [np.asarray(p, float) for p in np.asarray(points).reshape(-1, 2)]
    if workers <= 1:
        return [solve_point(ctx, p) for p in pts]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as ex:
        return list(ex.map(_worker, pts, chunksize=max(1, len(pts) // (4 * workers))))


def recover_potential(mu: np.ndarray, step: float, probes, E: float):
    """v_hat = (Lap mu' + 2i k.grad mu') / mu' on the interior of an x-grid.

    ``mu`` has shape (nx, ny, nprobes) with x-spacing ``step``.  Returns
    (v_hat complex over the (nx-2, ny-2) interior, per-probe estimates,
    mask of points excluded because |mu'| was too small).
    """
    k1, k2 = lambda_to_k(np.asarray(probes, complex), E)
    c = mu[1:-1, 1:-1]
    d1 = (mu[2:, 1:-1] - mu[:-2, 1:-1]) / (2 * step)
    d2 = (mu[1:-1, 2:] - mu[1:-1, :-2]) / (2 * step)
    lap = (mu[2:, 1:-1] + mu[:-2, 1:-1] + mu[1:-1, 2:] + mu[1:-1, :-2] - 4 * c) / step ** 2
    bad = ~(np.abs(c) >= NEAR_ZERO_MU)
    with np.errstate(divide="ignore", invalid="ignore"):
        per = (lap + 2j * (k1 * d1 + k2 * d2)) / c
    per = np.where(bad, np.nan, per)
    excluded = np.all(bad, axis=-1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        vhat = np.nanmean(per, axis=-1)
    return vhat, per, excluded


def infill(field_: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked entries by the mean of their valid 4-neighbours (repeated until filled)."""
    out = field_.copy()
    mask = mask.copy()
    for _ in range(max(out.shape)):
        if not mask.any():
            break
        idx = np.argwhere(mask)
        new_mask = mask.copy()
        for i, j in idx:
            vals = [out[a, b] for a, b in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1))
                    if 0 <= a < out.shape[0] and 0 <= b < out.shape[1] and not mask[a, b]]
            if vals:
                out[i, j] = np.mean(vals)
                new_mask[i, j] = False
        mask = new_mask
    return out


@dataclass
class ReconstructionField:
    """Reconstruction on a sub-grid of the potential grid.

    ``xs``/``ys`` are the coordinates of the interior points where v_hat is
    defined; ``det`` covers the same points.
    """

    xs: np.ndarray
    ys: np.ndarray
    v_hat: np.ndarray
    det: np.ndarray
    imag_residual: float
    probe_spread: float
    singular: np.ndarray
    excluded: np.ndarray
    stride: int

    @property
    def flagged(self) -> np.ndarray:
        return self.singular | self.excluded


def reconstruct_field(ctx: RHContext, stride: int = 1, workers: int = 1,
                      det_threshold: float = 1e-6) -> ReconstructionField:
    """Sweep x over the potential grid (every ``stride``-th node, plus one ring
    of neighbours for the finite differences) and recover v_hat."""
    v = ctx.dataset.potential
    h = v.spacing * stride
    x0, y0 = v.origin
    nx = (v.n - 1) // stride + 1
    xs = x0 + h * np.arange(-1, nx + 1)
    ys = y0 + h * np.arange(-1, nx + 1)
    X = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1)
    res = sweep(ctx, X.reshape(-1, 2), workers)
    shape = X.shape[:2]
    mu = np.array([r.mu for r in res]).reshape(shape + (-1,))
    det = np.array([r.det for r in res]).reshape(shape)
    singular_all = (np.abs(det) < det_threshold).reshape(shape)
    vhat, per, excluded = recover_potential(mu, h, ctx.probes, ctx.dataset.energy)
    # any stencil touching a singular point is flagged and in-filled
    s = singular_all
    sing = s[1:-1, 1:-1] | s[2:, 1:-1] | s[:-2, 1:-1] | s[1:-1, 2:] | s[1:-1, :-2]
    flagged = sing | excluded | ~np.isfinite(vhat)
    vhat = infill(np.where(flagged, 0, vhat), flagged)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spread = float(np.nanmax(np.abs(per - vhat[..., None]))) if np.isfinite(per).any() else 0.0
    return ReconstructionField(xs[1:-1], ys[1:-1], vhat, det[1:-1, 1:-1],
                               float(np.abs(vhat.imag).max()), spread, sing, excluded, stride)


def relative_l2_error(rec: ReconstructionField, v) -> float:
    """||Re v_hat - v|| / ||v|| over the reconstruction sub-grid."""
    st = rec.stride
    truth = v.values[::st, ::st]
    return float(np.linalg.norm(rec.v_hat.real - truth) / np.linalg.norm(truth))
