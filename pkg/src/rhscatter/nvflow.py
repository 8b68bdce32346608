"""Experimental time evolution of the scattering data and a blow-up scan.

The evolved tables are phase multiples of the static ones; the
reconstruction run on them yields a *candidate* evolved potential only.
Nothing here asserts that the candidate solves the evolution equation; the
residual diagnostic below merely reports how far it is from doing so.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .forward import ExponentCapError, ScatteringDataset
from .reconstruct import RHContext, assemble_system, build_context, fredholm_det

log = logging.getLogger(__name__)


@dataclass
class EvolvedDataset:
    base: ScatteringDataset
    t: float
    dataset: ScatteringDataset
    f_t: np.ndarray

    @property
    def h_t(self):
        return self.dataset.h

    @property
    def b_t(self):
        return self.dataset.b


def _cubic(lam):
    return lam ** 3 + lam ** -3.0


def h_phase(lam, sig, E: float, t: float) -> np.ndarray:
    """i E^{3/2} t (lam^3 + lam^-3 - sig^3 - sig^-3) over the outer product lam x sig."""
    lam = np.asarray(lam, complex)
    sig = np.asarray(sig, complex)
    return 1j * E ** 1.5 * t * (_cubic(lam)[:, None] - _cubic(sig)[None, :])


def b_phase(lam, E: float, t: float) -> np.ndarray:
    """i t E^{3/2} (lam^3 + lam^-3 + conj(lam)^3 + conj(lam)^-3), purely imaginary."""
    lam = np.asarray(lam, complex)
    return 2j * t * E ** 1.5 * _cubic(lam).real


def evolve_data(ds: ScatteringDataset, t: float, exponent_cap: float = 60.0) -> EvolvedDataset:
    """Phase-evolve h, b (and f) to time t; u is rebuilt from b."""
    if t == 0:
        return EvolvedDataset(ds, 0.0, ds, ds.f)
    E = ds.energy
    nodes = ds.contour.nodes
    ph = h_phase(nodes, nodes, E, t)
    grow = ph.real.max()
    if grow > exponent_cap:
        raise ExponentCapError(f"h phase grows by e^{grow:.1f} (cap {exponent_cap}) at t={t}")
    h_t = ds.h * np.exp(ph)
    b_t = ds.b * np.exp(b_phase(ds.grid.nodes, E, t))
    # real momenta k = sqrt(E) e^{i alpha}: k1^3 - 3 k1 k2^2 = E^{3/2} cos(3 alpha)
    c3 = np.cos(3 * ds.f_angles)
    f_t = ds.f * np.exp(2j * t * E ** 1.5 * (c3[:, None] - c3[None, :]))
    return EvolvedDataset(ds, float(t), ds.with_tables(h_t, b_t), f_t)


# -- det A over (s, t, x) ------------------------------------------------------------

def det_field(ctx: RHContext, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, float).reshape(-1, 2)
    out = np.empty(len(pts), complex)
    for i, x in enumerate(pts):
        out[i] = fredholm_det(assemble_system(ctx, x))
    return out.reshape(np.asarray(points).shape[:-1])


def _regions(mask: np.ndarray, det: np.ndarray) -> list[dict]:
    """Connected flagged regions on an x-grid with sign-change certificates.

    A region is certified when both Re det and Im det change sign on the
    region grown by one cell, which a zero inside requires.
    """
    labels, n = ndimage.label(mask)
    out = []
    for k in range(1, n + 1):
        reg = labels == k
        grown = ndimage.binary_dilation(reg)
        vals = det[grown]
        re_change = bool(vals.real.min() < 0 < vals.real.max())
        im_change = bool(vals.imag.min() < 0 < vals.imag.max())
        out.append({
            "cells": np.argwhere(reg).tolist(),
            "min_abs_det": float(np.abs(det[reg]).min()),
            "re_sign_change": re_change,
            "im_sign_change": im_change,
            "certified": re_change and im_change,
        })
    return out


def blowup_scan(datasets: dict, t_grid, xs, ys, threshold: float = 1e-3,
                exponent_cap: float = 60.0, probes=None) -> dict:
    """Tabulate det A(x, s, t) and flag cells with |det A| < threshold.

    ``datasets`` maps s to the forward dataset of s*v.  Cells are processed
    independently, so the report does not depend on the ordering of t_grid.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    X = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1)
    report = {"threshold": threshold, "xs": xs.tolist(), "ys": ys.tolist(),
              "t_grid": [float(t) for t in t_grid], "cells": [], "errors": []}
    fields = {}
    for s, ds in sorted(datasets.items()):
        for t in t_grid:
            key = (float(s), float(t))
            try:
                ev = evolve_data(ds, t, exponent_cap)
                ctx = build_context(ev.dataset, probes=probes, exponent_cap=exponent_cap)
                det = det_field(ctx, X)
            except (ExponentCapError, np.linalg.LinAlgError) as err:
                report["errors"].append({"s": key[0], "t": key[1], "error": str(err)})
                continue
            fields[key] = det
            flags = {}
            for tag, thr in (("low", 0.9 * threshold), ("nominal", threshold),
                             ("high", 1.1 * threshold)):
                flags[tag] = np.abs(det) < thr
            report["cells"].append({
                "s": key[0], "t": key[1],
                "flagged": int(flags["nominal"].sum()),
                "flagged_fraction": float(flags["nominal"].mean()),
                "threshold_stable": bool(np.array_equal(flags["low"], flags["high"])),
                "regions": _regions(flags["nominal"], det),
                "det_min_abs": float(np.abs(det).min()),
                "det_max_dev": float(np.abs(det - 1).max()),
            })
    report["cells"].sort(key=lambda c: (c["s"], c["t"]))
    report["total_flagged"] = int(sum(c["flagged"] for c in report["cells"]))
    return report, fields


# -- residual diagnostic for a candidate evolved potential ------------------------

def cartesian_cauchy(f: np.ndarray, h: float) -> np.ndarray:
    """(1/pi) int f(y) / (z - y) dA(y) on a uniform square grid (zero-padded FFT).

    The kernel 1/(pi z) is sampled at cell offsets; its cell average over the
    self cell vanishes by symmetry.
    """
    n, m = f.shape
    i = np.arange(-(n - 1), n)
    j = np.arange(-(m - 1), m)
    Z = h * (i[:, None] + 1j * j[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        ker = np.where(Z == 0, 0, 1 / (np.pi * Z))
    shape = (2 * n - 1, 2 * m - 1)
    F = np.fft.fft2(f, shape)
    Kf = np.fft.fft2(np.fft.ifftshift(ker), shape)
    return np.fft.ifft2(F * Kf)[:n, :m] * h * h


def _dz(f, h):
    fx, fy = np.gradient(f, h, h)
    return 0.5 * (fx - 1j * fy)


def nv_residual(v_prev: np.ndarray, v_mid: np.ndarray, v_next: np.ndarray, h: float,
                dt: float, E: float) -> dict:
    """Report d_t v - 4 Re(4 dz^3 v + dz(v w) - E dz w) with dbar w = -3 dz v.

    Time derivative by centered differences; w from the Cartesian Cauchy
    transform, x-derivatives by second-order finite differences.
    """
    v = v_mid
    w = cartesian_cauchy(-3 * _dz(v, h), h)
    d3 = _dz(_dz(_dz(v, h), h), h)
    rhs = 4 * np.real(4 * d3 + _dz(v * w, h) - E * _dz(w, h))
    dvdt = (v_next - v_prev) / (2 * dt)
    res = dvdt - rhs
    scale = max(np.abs(rhs).max(), np.abs(dvdt).max(), 1e-300)
    return {"residual_max": float(np.abs(res).max()), "relative": float(np.abs(res).max() / scale),
            "label": "candidate NV solution (diagnostic only)"}
