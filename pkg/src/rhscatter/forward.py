"""Nystrom solvers for the classical and Faddeev scattering equations and
tabulation of the scattering data f, h, b, u.

Both integral operators are convolutions on the uniform potential grid, so
they are applied with zero-padded FFTs and inverted with GMRES.  The kernel
is sampled on the (2n-1)^2 difference grid; the log-singular self cell uses
the exact cell average of ln|y|.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .kernels import (faddeev_regular_part, green_classical, green_classical_regular_part,
                      green_faddeev_g)
from .potentials import PotentialGrid
from .spectral import (ExteriorGrid, SpectralContour, build_contour, ContourSpec, lambda_to_k,
                       reflect)

log = logging.getLogger(__name__)

# (1/h^2) int over the cell [-h/2, h/2]^2 of ln(|y|/h)
CELL_LOG_MEAN = np.log(np.sqrt(0.5)) - 1.5 + np.pi / 4

EXCEPTIONAL_COND = 1e12


class SolverError(RuntimeError):
    def __init__(self, msg, condition=None):
        super().__init__(msg)
        self.condition = condition


class ExponentCapError(ValueError):
    pass


@dataclass(frozen=True)
class WaveField:
    """psi+ (classical) or mu (Faddeev) on the nodes of the potential grid."""

    kind: str
    arg: complex
    values: np.ndarray
    residual: float
    iterations: int = 0
    condition: float | None = None
    flagged: bool = False


# -- convolution operator ------------------------------------------------------

def difference_points(n: int, h: float) -> np.ndarray:
    d = h * np.arange(-(n - 1), n)
    return np.stack(np.meshgrid(d, d, indexing="ij"), -1)


class ConvolutionOperator:
    """f -> f - h^2 sum_j K(x_i - x_j) v_j f_j on an n x n grid.

    ``table`` may be a zero-argument callable; it is then evaluated on first
    use, so an operator on a vanishing potential never builds its kernel.
    """

    def __init__(self, table, v: PotentialGrid):
        self.n = v.n
        self.m = 2 * v.n
        self.h = v.spacing
        self.v = v.values
        self.support = v.values != 0
        self._table = table
        self._kernel_hat = None

    @property
    def kernel_hat(self) -> np.ndarray:
        if self._kernel_hat is None:
            n, m = self.n, self.m
            table = self._table() if callable(self._table) else self._table
            pad = np.zeros((m, m), complex)
            # offsets -(n-1)..(n-1) stored modulo m
            idx = np.arange(-(n - 1), n) % m
            pad[np.ix_(idx, idx)] = table
            self._kernel_hat = np.fft.fft2(pad) * self.h ** 2
            self._table = None
        return self._kernel_hat

    def apply_kernel(self, f: np.ndarray) -> np.ndarray:
        """h^2 sum_j K(x_i - x_j) v_j f_j."""
        n, m = self.n, self.m
        buf = np.zeros((m, m), complex)
        buf[:n, :n] = self.v * f
        return np.fft.ifft2(np.fft.fft2(buf) * self.kernel_hat)[:n, :n]

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return f - self.apply_kernel(f)

    def dense_support_matrix(self) -> np.ndarray:
        """Dense matrix of the operator restricted to support nodes."""
        idx = np.argwhere(self.support)
        n = self.n
        cols = []
        for i, j in idx:
            e = np.zeros((n, n), complex)
            e[i, j] = 1.0
            cols.append(self(e)[self.support])
        return np.array(cols).T

    def solve(self, rhs: np.ndarray, rtol: float = 1e-12, maxiter: int = 400):
        n = self.n
        if not self.support.any():
            return rhs.astype(complex), 0.0, 0
        op = LinearOperator((n * n, n * n), matvec=lambda f: self(f.reshape(n, n)).ravel(),
                            dtype=complex)
        count = [0]

        def cb(_):
            count[0] += 1

        sol, info = gmres(op, rhs.ravel().astype(complex), rtol=rtol, atol=0.0, restart=80,
                          maxiter=maxiter, callback=cb, callback_type="pr_norm")
        sol = sol.reshape(n, n)
        res = float(np.linalg.norm(self(sol) - rhs) / max(np.linalg.norm(rhs), 1e-300))
        if info != 0 or res > 1e3 * rtol:
            cond = self.condition()
            raise SolverError(f"GMRES did not converge (residual {res:.3e})", condition=cond)
        return sol, res, count[0]

    def condition(self) -> float:
        if self.support.sum() > 4000:
            return float("nan")
        return float(np.linalg.cond(self.dense_support_matrix()))


def classical_table(v: PotentialGrid, E: float) -> np.ndarray:
    h = v.spacing
    pts = difference_points(v.n, h)
    c = v.n - 1
    pts[c, c] = (1.0, 0.0)  # placeholder, replaced below
    tab = green_classical(pts, E)
    tab[c, c] = green_classical_regular_part(E) + (np.log(h) + CELL_LOG_MEAN) / (2 * np.pi)
    return tab


def faddeev_table(v: PotentialGrid, lam: complex, E: float) -> np.ndarray:
    h = v.spacing
    pts = difference_points(v.n, h)
    c = v.n - 1
    tab = green_faddeev_g(pts, lam, E)
    tab[c, c] = faddeev_regular_part(lam, E) + (np.log(h) + CELL_LOG_MEAN) / (2 * np.pi)
    return tab


# -- solvers -----------------------------------------------------------------

class ClassicalSolver:
    """Lippmann-Schwinger operator with G+, shared by every incident momentum."""

    def __init__(self, v: PotentialGrid, E: float):
        self.v, self.E = v, E
        self.op = ConvolutionOperator(lambda: classical_table(v, E), v)

    def solve(self, k, rtol: float = 1e-12) -> WaveField:
        """psi+(., k) for a (possibly complex) momentum k = (k1, k2)."""
        k1, k2 = k
        pts = self.v.points
        rhs = np.exp(1j * (k1 * pts[..., 0] + k2 * pts[..., 1]))
        sol, res, it = self.op.solve(rhs, rtol)
        return WaveField("classical", complex(k1 + 1j * k2), sol, res, it)

    def solve_lambda(self, lam: complex, rtol: float = 1e-12) -> WaveField:
        return self.solve(lambda_to_k(lam, self.E), rtol)


def solve_classical(v: PotentialGrid, k, E: float, rtol: float = 1e-12) -> WaveField:
    k = np.asarray(k, dtype=complex)
    if abs(k[0] ** 2 + k[1] ** 2 - E) > 1e-9 * max(E, 1.0):
        raise ValueError("momentum must satisfy k.k = E")
    return ClassicalSolver(v, E).solve(k, rtol)


def solve_faddeev(v: PotentialGrid, lam: complex, E: float, rtol: float = 1e-12,
                  strict: bool = True) -> WaveField:
    """mu(., k(lambda)) from mu = 1 + g * (v mu).

    A numerically singular operator marks an exceptional point: it raises
    SolverError when ``strict`` and is otherwise returned as a flagged field.
    """
    op = ConvolutionOperator(lambda: faddeev_table(v, lam, E), v)
    try:
        sol, res, it = op.solve(np.ones((v.n, v.n), complex), rtol)
    except SolverError as err:
        if strict or not (err.condition is None or err.condition > EXCEPTIONAL_COND):
            raise
        nan = np.full((v.n, v.n), np.nan + 0j)
        return WaveField("faddeev", complex(lam), nan, np.inf, condition=err.condition, flagged=True)
    return WaveField("faddeev", complex(lam), sol, res, it)


# -- amplitudes ------------------------------------------------------------------

def _quad(v: PotentialGrid, integrand: np.ndarray) -> complex:
    return complex((integrand * v.values).sum() * v.spacing ** 2 / (2 * np.pi) ** 2)


def scattering_amplitude_f(v: PotentialGrid, psi_plus: WaveField, l) -> complex:
    """f(k, l) = (2 pi)^-2 int exp(-i l.y) v psi+(y, k) dy for real l."""
    pts = v.points
    ph = np.exp(-1j * (l[0] * pts[..., 0] + l[1] * pts[..., 1]))
    return _quad(v, ph * psi_plus.values)


def check_exponent(v: PotentialGrid, lam, sig, E: float, cap: float) -> float:
    """Largest |Im (k(lam) - k(sig)).y| over the support; raises above ``cap``."""
    k1, k2 = lambda_to_k(lam, E)
    l1, l2 = lambda_to_k(sig, E)
    pts = v.points[v.values != 0]
    if pts.size == 0:
        return 0.0
    d1, d2 = np.asarray(k1 - l1), np.asarray(k2 - l2)
    ex = np.abs(np.imag(np.multiply.outer(d1, pts[:, 0]) + np.multiply.outer(d2, pts[:, 1]))).max()
    if ex > cap:
        raise ExponentCapError(f"exponent {ex:.2f} exceeds cap {cap}")
    return float(ex)


def faddeev_amplitude_h(v: PotentialGrid, mu: WaveField, sig, E: float, cap: float = 60.0):
    """h(k(lambda), k(sig)) = (2 pi)^-2 int exp(i(k(lambda) - k(sig)).y) v mu(y, lambda) dy.

    ``sig`` may be an array of spectral points.
    """
    lam = mu.arg
    sig = np.atleast_1d(np.asarray(sig, complex))
    check_exponent(v, lam, sig, E, cap)
    k1, k2 = lambda_to_k(lam, E)
    l1, l2 = lambda_to_k(sig, E)
    pts = v.points
    sup = v.values != 0
    y1, y2 = pts[sup][:, 0], pts[sup][:, 1]
    ph = np.exp(1j * (np.multiply.outer(k1 - l1, y1) + np.multiply.outer(k2 - l2, y2)))
    w = v.values[sup] * mu.values[sup] * v.spacing ** 2 / (2 * np.pi) ** 2
    return ph @ w


def b_value(v: PotentialGrid, mu: WaveField, E: float, cap: float = 60.0) -> complex:
    """b(lambda) = h(lambda, -1/conj(lambda))."""
    return complex(faddeev_amplitude_h(v, mu, reflect(mu.arg), E, cap)[0])


def born_f(v: PotentialGrid, k, l) -> complex:
    """(2 pi)^-2 int exp(i(k - l).y) v(y) dy."""
    pts = v.points
    ph = np.exp(1j * ((k[0] - l[0]) * pts[..., 0] + (k[1] - l[1]) * pts[..., 1]))
    return _quad(v, ph)


# -- dataset -----------------------------------------------------------------------

@dataclass
class ScatteringDataset:
    """Scattering data at fixed energy on the contour and the exterior grid.

    h[i, j] = h(lambda_i, lambda_j) over contour nodes; b and u live on the
    exterior grid (rows x angles); f[i, j] = f(k(alpha_i), k(alpha_j)) for
    real momenta at the angles ``f_angles``.  ``mu_contour`` and
    ``psi_plus_contour`` keep the forward fields at contour nodes on the
    potential grid for oracle checks.
    """

    potential: PotentialGrid
    contour: SpectralContour
    grid: ExteriorGrid
    h: np.ndarray
    b: np.ndarray
    u: np.ndarray
    f: np.ndarray
    f_angles: np.ndarray
    mu_contour: np.ndarray | None = None
    psi_plus_contour: np.ndarray | None = None
    failures: list = field(default_factory=list)
    b_paired_check: float = 0.0

    @property
    def energy(self) -> float:
        return self.contour.spec.energy

    def with_tables(self, h=None, b=None) -> "ScatteringDataset":
        """Copy with replaced h and/or b; u is rebuilt from b."""
        b = self.b if b is None else b
        return ScatteringDataset(self.potential, self.contour, self.grid,
                                 self.h if h is None else h, b, u_from_b(self.grid, b), self.f,
                                 self.f_angles, self.mu_contour, self.psi_plus_contour,
                                 list(self.failures), self.b_paired_check)


def u_from_b(grid: ExteriorGrid, b: np.ndarray) -> np.ndarray:
    """u = chi b / conj(lambda); every exterior cell lies outside the annulus."""
    return b / np.conj(grid.nodes)


def _faddeev_task(args):
    v, lam, E, cap, rtol = args
    mu = solve_faddeev(v, lam, E, rtol, strict=False)
    if mu.flagged:
        return lam, None, mu.condition
    return lam, b_value(v, mu, E, cap), mu.residual


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def build_dataset(v: PotentialGrid, contour: SpectralContour, grid: ExteriorGrid,
                  n_f_angles: int = 16, exponent_cap: float = 60.0, rtol: float = 1e-12,
                  workers: int = 1, keep_fields: bool = True, paired_rows: int = 1) -> ScatteringDataset:
    """Solve every forward problem needed by the reconstruction.

    b on the inner block follows from b(-1/conj(lambda)) = conj(b(lambda));
    ``paired_rows`` inner rows are nevertheless solved directly and the
    largest deviation is stored in ``b_paired_check``.
    """
    E = contour.spec.energy
    sup = v.points[v.values != 0]
    L = float(np.hypot(sup[:, 0], sup[:, 1]).max()) if sup.size else 0.0
    if 2 * contour.spec.rho * L > exponent_cap:
        raise ExponentCapError(f"2 rho L = {2 * contour.spec.rho * L:.2f} exceeds cap {exponent_cap}")
    N = contour.size
    failures = []

    # contour: mu, psi+, h
    h = np.zeros((N, N), complex)
    mu_c = np.ones((N, v.n, v.n), complex)
    psi_c = np.zeros((N, v.n, v.n), complex)
    csolver = ClassicalSolver(v, E)
    pts = v.points
    for i, lam in enumerate(contour.nodes):
        mu = solve_faddeev(v, lam, E, rtol, strict=False)
        if mu.flagged:
            failures.append({"where": "contour", "index": i, "lambda": [lam.real, lam.imag],
                             "condition": mu.condition})
            continue
        mu_c[i] = mu.values
        h[i] = faddeev_amplitude_h(v, mu, contour.nodes, E, exponent_cap)
        psi_c[i] = csolver.solve_lambda(lam, rtol).values

    # exterior: outer block solved, inner block by symmetry
    m = grid.n_outer
    nodes = grid.nodes
    b = np.zeros(grid.shape, complex)
    if np.any(v.values):
        tasks = [(v, lam, E, exponent_cap, rtol) for lam in nodes[m:].ravel()]
        out = _map(_faddeev_task, tasks, workers)
        vals = np.zeros(len(out), complex)
        for idx, (lam, bv, info) in enumerate(out):
            if bv is None:
                failures.append({"where": "exterior", "index": idx, "lambda": [lam.real, lam.imag],
                                 "condition": info})
                vals[idx] = np.nan
            else:
                vals[idx] = bv
        b[m:] = vals.reshape(m, grid.ntheta)
        b[:m] = np.conj(grid.reflect_values(b[m:]))
    paired = 0.0
    if np.any(v.values) and paired_rows > 0:
        rows = range(m - paired_rows, m)
        for r in rows:
            for j in range(0, grid.ntheta, max(1, grid.ntheta // 8)):
                mu = solve_faddeev(v, nodes[r, j], E, rtol)
                paired = max(paired, abs(b_value(v, mu, E, exponent_cap) - b[r, j]) / max(abs(b[r, j]), 1e-300))

    # classical amplitude at real momenta
    ang = 2 * np.pi * np.arange(n_f_angles) / n_f_angles
    kk = np.sqrt(E) * np.stack([np.cos(ang), np.sin(ang)], -1)
    f = np.zeros((n_f_angles, n_f_angles), complex)
    if np.any(v.values):
        for i in range(n_f_angles):
            psi = csolver.solve(kk[i], rtol)
            ph = np.exp(-1j * (np.multiply.outer(kk[:, 0], pts[..., 0]) + np.multiply.outer(kk[:, 1], pts[..., 1])))
            f[i] = (ph * (v.values * psi.values)).sum(axis=(1, 2)) * v.spacing ** 2 / (2 * np.pi) ** 2

    return ScatteringDataset(v, contour, grid, h, b, u_from_b(grid, b), f, ang,
                             mu_c if keep_fields else None, psi_c if keep_fields else None,
                             failures, paired)


# -- persistence ---------------------------------------------------------------

TABLES = ("h", "b", "u", "f")


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_dataset(ds: ScatteringDataset, out: Path, extra: dict | None = None) -> dict:
    """Write complex tables as little-endian complex128 plus a JSON manifest.

    h.bin: (N, N) over contour node pairs; b.bin, u.bin: (rows, ntheta) over
    the exterior grid; f.bin: (n_angles, n_angles).  All row-major.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sums = {}
    for name in TABLES:
        arr = np.ascontiguousarray(getattr(ds, name), "<c16")
        p = out / f"{name}.bin"
        p.write_bytes(arr.tobytes())
        sums[name] = {"shape": list(arr.shape), "sha256": _sha(p)}
    if ds.mu_contour is not None:
        for name in ("mu_contour", "psi_plus_contour"):
            arr = np.ascontiguousarray(getattr(ds, name), "<c16")
            p = out / f"{name}.bin"
            p.write_bytes(arr.tobytes())
            sums[name] = {"shape": list(arr.shape), "sha256": _sha(p)}
    ds.potential.save(out / "potential")
    sums["potential"] = {"sha256": _sha(out / "potential.bin")}
    spec = ds.contour.spec
    manifest = {
        "E": spec.energy,
        "rho": spec.rho,
        "contour": {"nodes_per_circle": spec.nodes_per_circle, "C": spec.C},
        "grid": ds.grid.to_dict(),
        "f_angles": ds.f_angles.tolist(),
        "tables": sums,
        "failures": ds.failures,
        "b_paired_check": ds.b_paired_check,
    }
    if extra:
        manifest.update(extra)
    body = json.dumps(manifest, indent=1, sort_keys=True)
    manifest["checksum"] = hashlib.sha256(body.encode()).hexdigest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


class ManifestError(ValueError):
    pass


def load_dataset(path: Path) -> ScatteringDataset:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(mpath)
    manifest = json.loads(mpath.read_text())
    check = manifest.pop("checksum", None)
    body = json.dumps(manifest, indent=1, sort_keys=True)
    if check != hashlib.sha256(body.encode()).hexdigest():
        raise ManifestError("manifest checksum mismatch")
    tabs = {}
    for name, meta in manifest["tables"].items():
        if name == "potential":
            continue
        p = path / f"{name}.bin"
        if _sha(p) != meta["sha256"]:
            raise ManifestError(f"checksum mismatch for {name}.bin")
        tabs[name] = np.frombuffer(p.read_bytes(), "<c16").reshape(meta["shape"]).copy()
    if _sha(path / "potential.bin") != manifest["tables"]["potential"]["sha256"]:
        raise ManifestError("checksum mismatch for potential.bin")
    v = PotentialGrid.load(path / "potential")
    contour = build_contour(ContourSpec(manifest["E"], manifest["rho"],
                                        manifest["contour"]["nodes_per_circle"]))
    grid = ExteriorGrid.from_dict(manifest["grid"])
    return ScatteringDataset(v, contour, grid, tabs["h"], tabs["b"], tabs["u"], tabs["f"],
                             np.asarray(manifest["f_angles"]), tabs.get("mu_contour"),
                             tabs.get("psi_plus_contour"), manifest["failures"],
                             manifest["b_paired_check"])
