"""Compactly supported real test potentials on a uniform Cartesian grid."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SupportError(ValueError):
    pass


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    @property
    def bbox(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cy - r), (cx + r, cy + r)

    def contains(self, pts, tol: float = 1e-12):
        pts = np.asarray(pts, float)
        d = np.hypot(pts[..., 0] - self.center[0], pts[..., 1] - self.center[1])
        return d <= self.radius * (1 + tol)

    def to_dict(self):
        return {"shape": "disk", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Rectangle:
    lower: tuple[float, float]
    upper: tuple[float, float]

    @property
    def bbox(self):
        return tuple(self.lower), tuple(self.upper)

    def contains(self, pts, tol: float = 1e-12):
        pts = np.asarray(pts, float)
        (x0, y0), (x1, y1) = self.lower, self.upper
        e = tol * max(x1 - x0, y1 - y0)
        return ((pts[..., 0] >= x0 - e) & (pts[..., 0] <= x1 + e)
                & (pts[..., 1] >= y0 - e) & (pts[..., 1] <= y1 + e))

    def to_dict(self):
        return {"shape": "rectangle", "lower": list(self.lower), "upper": list(self.upper)}


def domain_from_dict(d: dict):
    if d["shape"] == "disk":
        return Disk(tuple(d["center"]), float(d["radius"]))
    if d["shape"] == "rectangle":
        return Rectangle(tuple(d["lower"]), tuple(d["upper"]))
    raise ValueError(f"unknown domain shape {d['shape']!r}")


def compute_L(domain) -> float:
    """max |x| over the boundary of the domain."""
    if isinstance(domain, Disk):
        return float(np.hypot(*domain.center) + domain.radius)
    (x0, y0), (x1, y1) = domain.lower, domain.upper
    return float(max(np.hypot(x, y) for x in (x0, x1) for y in (y0, y1)))


@dataclass(frozen=True)
class PotentialGrid:
    """Node values of v on a uniform n x n grid spanning the domain's bounding box.

    ``values[i, j]`` sits at (x0 + i*h, y0 + j*h).  Integrals use the
    node-centered midpoint rule with cell area h^2.
    """

    domain: object
    n: int
    values: np.ndarray
    q: float | None = None

    @property
    def origin(self):
        return np.array(self.domain.bbox[0], float)

    @property
    def spacing(self) -> float:
        (x0, _), (x1, _) = self.domain.bbox
        return (x1 - x0) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return grid_points(self.domain, self.n)

    @property
    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def integral(self) -> float:
        return float(self.values.sum() * self.spacing ** 2)

    def scaled(self, s: float) -> "PotentialGrid":
        return PotentialGrid(self.domain, self.n, s * self.values, self.q)

    def __add__(self, other: "PotentialGrid") -> "PotentialGrid":
        return PotentialGrid(self.domain, self.n, self.values + other.values, self.q)

    # persistence: raw little-endian float64, row-major, plus JSON sidecar
    def save(self, path) -> None:
        path = Path(path)
        path.with_suffix(".bin").write_bytes(self.values.astype("<f8").tobytes(order="C"))
        meta = {"nx": self.n, "ny": self.n, "spacing": self.spacing,
                "domain": self.domain.to_dict(), "q": self.q}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, path) -> "PotentialGrid":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
        vals = raw.reshape(meta["nx"], meta["ny"]).copy()
        return cls(domain_from_dict(meta["domain"]), meta["nx"], vals, meta["q"])

    def to_csv(self, path) -> None:
        pts = self.points.reshape(-1, 2)
        np.savetxt(path, np.column_stack([pts, self.values.reshape(-1)]),
                   delimiter=",", header="x1,x2,v", comments="")


def grid_points(domain, n: int) -> np.ndarray:
    (x0, y0), (x1, y1) = domain.bbox
    if not np.isclose(x1 - x0, y1 - y0):
        raise ValueError("grid requires a square bounding box")
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    return np.stack(np.meshgrid(xs, ys, indexing="ij"), -1)


def _finalize(domain, n, vals, q=None) -> PotentialGrid:
    pts = grid_points(domain, n)
    vals = np.where(domain.contains(pts), vals, 0.0)
    return PotentialGrid(domain, n, np.ascontiguousarray(vals, float), q)


def _check_support(domain, center, radius):
    c = np.asarray(center, float)
    ang = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    ring = c + radius * np.stack([np.cos(ang), np.sin(ang)], -1)
    if not np.all(domain.contains(ring, tol=1e-9)):
        raise SupportError("bump support must lie inside the domain")


def bump_profile(r, radius):
    t = np.clip(r / radius, 0, 1)
    out = np.zeros_like(t)
    inside = t < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


def make_bump(domain, center, radius: float, amplitude: float, n: int = 64) -> PotentialGrid:
    """amplitude * exp(1 - 1/(1 - r^2/radius^2)) inside the ball, zero outside."""
    _check_support(domain, center, radius)
    pts = grid_points(domain, n)
    r = np.hypot(pts[..., 0] - center[0], pts[..., 1] - center[1])
    return _finalize(domain, n, amplitude * bump_profile(r, radius), q=abs(amplitude))


def make_gaussian(domain, center, width: float, amplitude: float, n: int = 64) -> PotentialGrid:
    """Gaussian truncated to the domain (discontinuous at the boundary)."""
    pts = grid_points(domain, n)
    r2 = (pts[..., 0] - center[0]) ** 2 + (pts[..., 1] - center[1]) ** 2
    return _finalize(domain, n, amplitude * np.exp(-r2 / (2 * width ** 2)), q=abs(amplitude))


def make_two_bump(domain, amplitude: float, n: int = 64) -> PotentialGrid:
    """Asymmetric pair of bumps of unequal size and sign."""
    (x0, y0), (x1, y1) = domain.bbox
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    w = (x1 - x0) / 2
    a = make_bump(domain, (cx - 0.35 * w, cy + 0.1 * w), 0.4 * w, amplitude, n)
    b = make_bump(domain, (cx + 0.4 * w, cy - 0.2 * w), 0.3 * w, -0.6 * amplitude, n)
    out = a + b
    return PotentialGrid(domain, n, out.values, abs(amplitude))


def make_disk_indicator(domain, center, radius: float, amplitude: float, n: int = 64) -> PotentialGrid:
    _check_support(domain, center, radius)
    pts = grid_points(domain, n)
    r = np.hypot(pts[..., 0] - center[0], pts[..., 1] - center[1])
    return _finalize(domain, n, amplitude * (r <= radius), q=abs(amplitude))


def zero_potential(domain, n: int = 64) -> PotentialGrid:
    return PotentialGrid(domain, n, np.zeros((n, n)), 0.0)


@dataclass(frozen=True)
class PotentialFamily:
    """s * base for s in (-s1, s1), s1 = q / ||base||_inf."""

    base: PotentialGrid
    q: float

    @property
    def s1(self) -> float:
        sup = self.base.sup
        return np.inf if sup == 0 else self.q / sup

    def scale(self, s: float) -> PotentialGrid:
        if abs(s) >= self.s1:
            raise ValueError(f"|s| = {abs(s)} outside the admissible range ({self.s1})")
        return self.base.scaled(s)


def build_potential(spec: dict) -> PotentialGrid:
    """Factory used by the CLI: {"kind": ..., "domain": {...}, "n": ..., ...}."""
    dom = domain_from_dict(spec["domain"])
    n = int(spec.get("n", 64))
    kind = spec.get("kind", "bump")
    amp = float(spec.get("amplitude", 0.0))
    if kind == "zero" or amp == 0.0 and kind != "bump":
        return zero_potential(dom, n)
    if kind == "bump":
        return make_bump(dom, tuple(spec.get("center", (0.0, 0.0))), float(spec["radius"]), amp, n)
    if kind == "gaussian":
        return make_gaussian(dom, tuple(spec.get("center", (0.0, 0.0))), float(spec["width"]), amp, n)
    if kind == "two_bump":
        return make_two_bump(dom, amp, n)
    if kind == "disk":
        return make_disk_indicator(dom, tuple(spec.get("center", (0.0, 0.0))), float(spec["radius"]), amp, n)
    raise ValueError(f"unknown potential kind {kind!r}")
