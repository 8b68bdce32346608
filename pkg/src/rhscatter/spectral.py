"""Spectral parameterization of the fixed-energy momentum sphere.

Complex momenta k with k.k = E are parameterized by lambda in C \\ 0.
The region where |Im k| < rho is an annulus 1/C < |lambda| < C; its
boundary (two circles) carries the jump of the Riemann-Hilbert problem.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class SpectralDomainError(ValueError):
    pass


def lambda_to_k(lam, E: float):
    """Return (k1, k2) for spectral parameter(s) ``lam`` at energy ``E``."""
    lam = np.asarray(lam, dtype=complex)
    if np.any(lam == 0):
        raise SpectralDomainError("lambda = 0 is not on the energy sphere")
    if E <= 0:
        raise SpectralDomainError("energy must be positive")
    s = np.sqrt(E)
    k1 = (lam + 1.0 / lam) * s / 2.0
    k2 = (1.0 / lam - lam) * 1j * s / 2.0
    return k1, k2


def k_to_lambda(k1, k2, E: float, tol: float = 1e-9):
    k1 = np.asarray(k1, dtype=complex)
    k2 = np.asarray(k2, dtype=complex)
    if np.any(np.abs(k1 * k1 + k2 * k2 - E) > tol * max(E, 1.0)):
        raise SpectralDomainError("momentum is not on the sphere k.k = E")
    return (k1 + 1j * k2) / np.sqrt(E)


def k_dot_x(lam, x, E: float):
    """k(lambda).x for points x of shape (..., 2); broadcasts lam against x[..., 0]."""
    k1, k2 = lambda_to_k(lam, E)
    x = np.asarray(x, dtype=float)
    return k1 * x[..., 0] + k2 * x[..., 1]


def im_k_norm(lam, E: float):
    r = np.abs(np.asarray(lam, dtype=complex))
    return np.sqrt(E) / 2.0 * np.abs(r - 1.0 / r)


def re_k_norm(lam, E: float):
    r = np.abs(np.asarray(lam, dtype=complex))
    return np.sqrt(E) / 2.0 * (r + 1.0 / r)


def reflect(lam):
    """The involution lambda -> -1/conj(lambda)."""
    return -1.0 / np.conj(np.asarray(lam, dtype=complex))


def outer_radius(E: float, rho: float) -> float:
    t = rho / np.sqrt(E)
    return float(t + np.sqrt(t * t + 1.0))


@dataclass(frozen=True)
class ContourSpec:
    energy: float
    rho: float
    nodes_per_circle: int = 64

    def __post_init__(self):
        if self.energy <= 0:
            raise SpectralDomainError("energy must be positive")
        if self.rho <= 0:
            raise SpectralDomainError("rho must be positive")
        if self.nodes_per_circle < 8 or self.nodes_per_circle % 2:
            raise SpectralDomainError("nodes_per_circle must be even and >= 8")

    @property
    def C(self) -> float:
        return outer_radius(self.energy, self.rho)


@dataclass(frozen=True)
class SpectralContour:
    """Two-circle boundary of the annulus, outer circle first.

    The outer circle |lambda| = C runs counterclockwise, the inner circle
    |lambda| = 1/C clockwise, so the annulus lies to the left.  Both circles
    share the angle set 2*pi*j/N; inner node j sits at angle -2*pi*j/N.
    ``weights`` are the complex trapezoidal line elements d(lambda).
    """

    spec: ContourSpec
    nodes: np.ndarray
    weights: np.ndarray
    component: np.ndarray  # 0 = outer, 1 = inner
    tau: np.ndarray = field(repr=False)  # parameter angle of each node

    @property
    def n(self) -> int:
        return self.spec.nodes_per_circle

    @property
    def size(self) -> int:
        return self.nodes.size

    def reflected_index(self) -> np.ndarray:
        """Index j' with node[j'] = -1/conj(node[j])."""
        n = self.n
        j = np.arange(n)
        # outer node at angle t maps to inner point at angle t + pi, i.e. inner
        # parameter -(t + pi)
        to_inner = n + (-(j + n // 2)) % n
        to_outer = (-(j) + n // 2) % n
        return np.concatenate([to_inner, to_outer])

    def to_json(self) -> str:
        header = {
            "E": self.spec.energy,
            "rho": self.spec.rho,
            "C": self.spec.C,
            "nodes_per_circle": self.n,
        }
        nodes = [
            {
                "lambda": [float(z.real), float(z.imag)],
                "weight": [float(w.real), float(w.imag)],
                "component": "outer" if c == 0 else "inner",
            }
            for z, w, c in zip(self.nodes, self.weights, self.component)
        ]
        return json.dumps({"header": header, "nodes": nodes}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SpectralContour":
        data = json.loads(text)
        h = data["header"]
        return build_contour(ContourSpec(h["E"], h["rho"], h["nodes_per_circle"]))


def build_contour(spec: ContourSpec, misorient: bool = False) -> SpectralContour:
    """Trapezoidal discretization of the annulus boundary.

    ``misorient`` flips the inner circle to counterclockwise; it exists only
    as a negative control for the verification runner.
    """
    n = spec.nodes_per_circle
    C = spec.C
    tau = 2 * np.pi * np.arange(n) / n
    dt = 2 * np.pi / n
    outer = C * np.exp(1j * tau)
    w_outer = 1j * outer * dt
    sgn = 1.0 if misorient else -1.0
    inner = np.exp(1j * sgn * tau) / C
    w_inner = sgn * 1j * inner * dt
    return SpectralContour(
        spec=spec,
        nodes=np.concatenate([outer, inner]),
        weights=np.concatenate([w_outer, w_inner]),
        component=np.repeat([0, 1], n),
        tau=np.concatenate([tau, tau]),
    )


def chi_indicator(lam, E: float, rho: float, rtol: float = 1e-12):
    """1 where |Im k(lambda)| >= rho (outside the annulus, boundary included)."""
    v = im_k_norm(lam, E)
    return (v >= rho * (1 - rtol)).astype(float)


# -- a-priori bounds -------------------------------------------------------

@dataclass(frozen=True)
class AprioriBounds:
    c0: float
    q: float
    I1: float
    M: float
    rho1: float


def domain_I1(domain, n: int = 200) -> float:
    """max_x int_D |x - y|^{-1/2} dy, searched over a grid of x in D.

    For disks the maximum is at the center and the value is 4*pi*R^{3/2}/3.
    """
    from .potentials import Disk

    if isinstance(domain, Disk):
        return 4.0 * np.pi * domain.radius ** 1.5 / 3.0
    (x0, y0), (x1, y1) = domain.bbox
    hx, hy = (x1 - x0) / n, (y1 - y0) / n
    xs = x0 + hx * (np.arange(n) + 0.5)
    ys = y0 + hy * (np.arange(n) + 0.5)
    Y = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)
    Y = Y[domain.contains(Y)]
    best = 0.0
    cand = Y[:: max(1, len(Y) // 400)]
    for x in cand:
        d = np.linalg.norm(Y - x, axis=1)
        d = np.maximum(d, 0.5 * min(hx, hy))
        best = max(best, float(np.sum(d ** -0.5) * hx * hy))
    return best


def apriori_bounds(q: float, domain, E: float, rho: float, c0: float = 1.0) -> AprioriBounds:
    if q < 0 or rho <= 0:
        raise SpectralDomainError("need q >= 0 and rho > 0")
    I1 = domain_I1(domain)
    a = c0 * q * I1
    M = a / (E + rho * rho) ** 0.25
    rho1 = np.sqrt(max(a ** 4 - E, 0.0))
    return AprioriBounds(c0=c0, q=q, I1=I1, M=float(M), rho1=float(rho1))


def calibrate_c0(E: float, rmax: float = 40.0, n: int = 4000) -> float:
    """Estimate c0 as sup |x|^{1/2} E^{1/4} |G+(x)| over sampled radii."""
    from scipy.special import hankel1

    s = np.linspace(1e-3, rmax, n)  # s = |x| sqrt(E)
    vals = np.sqrt(s) * np.abs(hankel1(0, s)) / 4.0
    return float(vals.max())


def select_rho(q: float, domain, E: float, c0: float | None = None, factor: float = 1.05,
               floor: float = 0.25) -> float:
    """Default rho = factor * rho1, never below ``floor`` (rho1 may vanish)."""
    c0 = calibrate_c0(E) if c0 is None else c0
    b = apriori_bounds(q, domain, E, 1.0, c0)
    return max(factor * b.rho1, floor)


# -- exterior grid -------------------------------------------------------------

@dataclass(frozen=True)
class ExteriorGrid:
    """Log-polar cells covering C <= |lambda| <= C_max and the inversion image.

    Rows are cells in s = ln|lambda|: the mirrored inner block first (s < 0),
    then the outer block.  Columns are equispaced angles offset by half a
    step, so lambda -> -1/conj(lambda) maps nodes to nodes.
    """

    energy: float
    rho: float
    outer_edges: np.ndarray  # increasing, outer_edges[0] = ln C
    ntheta: int = 32

    def __post_init__(self):
        if self.ntheta % 2:
            raise SpectralDomainError("ntheta must be even")

    @property
    def C(self) -> float:
        return outer_radius(self.energy, self.rho)

    @property
    def s_lo(self) -> np.ndarray:
        e = self.outer_edges
        return np.concatenate([-e[:0:-1], e[:-1]])

    @property
    def s_hi(self) -> np.ndarray:
        e = self.outer_edges
        return np.concatenate([-e[-2::-1], e[1:]])

    @property
    def s(self) -> np.ndarray:
        return 0.5 * (self.s_lo + self.s_hi)

    @property
    def theta(self) -> np.ndarray:
        return 2 * np.pi * (np.arange(self.ntheta) + 0.5) / self.ntheta

    @property
    def shape(self):
        return (self.s.size, self.ntheta)

    @property
    def nodes(self) -> np.ndarray:
        return np.exp(self.s[:, None] + 1j * self.theta[None, :])

    @property
    def areas(self) -> np.ndarray:
        """Exact area of each annular sector."""
        dth = 2 * np.pi / self.ntheta
        a = 0.5 * (np.exp(2 * self.s_hi) - np.exp(2 * self.s_lo)) * dth
        return np.repeat(a[:, None], self.ntheta, axis=1)

    @property
    def n_outer(self) -> int:
        return self.outer_edges.size - 1

    def reflect_values(self, values_outer: np.ndarray) -> np.ndarray:
        """Values at the inner block from values at the outer block under the
        node map lambda -> -1/conj(lambda) (no conjugation applied)."""
        shift = np.roll(values_outer, self.ntheta // 2, axis=-1)
        return shift[..., ::-1, :]

    def to_dict(self):
        return {"E": self.energy, "rho": self.rho, "outer_edges": self.outer_edges.tolist(),
                "ntheta": self.ntheta}

    @classmethod
    def from_dict(cls, d):
        return cls(d["E"], d["rho"], np.asarray(d["outer_edges"], float), int(d["ntheta"]))


def build_exterior_grid(E: float, rho: float, cmax_factor: float = 16.0, nradial: int = 24,
                        ntheta: int = 32, grading: float = 1.5) -> ExteriorGrid:
    """Radial cells in ln|lambda| from ln C to ln(cmax_factor*C), refined toward ln C."""
    C = outer_radius(E, rho)
    t = np.linspace(0.0, 1.0, nradial + 1) ** grading
    edges = np.log(C) + np.log(cmax_factor) * t
    return ExteriorGrid(E, rho, edges, ntheta)
