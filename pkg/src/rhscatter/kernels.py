"""Green's functions G+, Faddeev g, and the jump kernel W on the annulus boundary.

Faddeev g is evaluated by integrating the spectral derivatives of G along
the ray through lambda:

    dG/d|lambda| = sgn(|lambda|-1) / (2 pi |lambda|) * Re exp(i k(lambda).x),

starting either from the unit-circle limit of G - G+ (a half-circle
integral) or, when that start point would amplify by exp(Im k.x) > e, from
the far end of the ray where G itself vanishes.  The far-end integral is
taken along a deformed path on which the exponential decays without
oscillating.
"""
from __future__ import annotations

import numpy as np
from scipy.special import hankel1

from .spectral import SpectralContour, lambda_to_k

EULER_GAMMA = 0.5772156649015329


class BranchViolation(RuntimeError):
    pass


class KernelDomainError(ValueError):
    pass


def _gauss(n, a, b):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * t + 0.5 * (a + b), 0.5 * (b - a) * w


_GL64 = np.polynomial.legendre.leggauss(64)
_GL48 = np.polynomial.legendre.leggauss(48)


def _tail_rule():
    # u in [0, 48] for int_0^inf e^{-u} f(u) du, panels graded toward 0
    edges = [0.0, 1.0, 3.0, 7.0, 14.0, 26.0, 48.0]
    us, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        u, w = _gauss(16, a, b)
        us.append(u)
        ws.append(w)
    return np.concatenate(us), np.concatenate(ws)


_TAIL_U, _TAIL_W = _tail_rule()


# -- classical Green's function --------------------------------------------

def green_classical(x, E: float):
    """G+(x) = -(i/4) H0^(1)(|x| sqrt(E)); x has shape (..., 2)."""
    x = np.asarray(x, float)
    r = np.hypot(x[..., 0], x[..., 1])
    if np.any(r == 0):
        raise KernelDomainError("G+ is singular at x = 0")
    return -0.25j * hankel1(0, r * np.sqrt(E))


def green_classical_regular_part(E: float) -> complex:
    """lim_{x->0} G+(x) - ln|x| / (2 pi)."""
    return -0.25j + (np.log(np.sqrt(E) / 2) + EULER_GAMMA) / (2 * np.pi)


def faddeev_regular_part(lam: complex, E: float) -> complex:
    """lim_{x->0} g(x, k(lambda)) - ln|x| / (2 pi)."""
    return (np.log(np.sqrt(E) / 2) + EULER_GAMMA + abs(np.log(abs(lam)))) / (2 * np.pi)


# -- Faddeev Green's function -------------------------------------------------

def _half_circle_term(rx, beta, alpha, sigma, E):
    """(i / 4 pi) int over {sigma sin(tau - alpha) < 0} of exp(i sqrt(E) rx cos(tau - beta)) dtau."""
    t, w = _GL48
    lo = alpha - np.pi if sigma > 0 else alpha
    tau = lo[..., None] + 0.5 * np.pi * (t + 1)
    ph = np.exp(1j * np.sqrt(E) * rx[..., None] * np.cos(tau - beta[..., None]))
    return 1j / (4 * np.pi) * (ph * w).sum(-1) * (0.5 * np.pi)


def green_faddeev_g(x, lam: complex, E: float):
    """Faddeev's reduced Green's function g(x, k(lambda)) for |lambda| != 1.

    ``x`` has shape (..., 2).  The x = 0 entry (if present) returns the
    regular part, i.e. g - ln|x|/(2 pi) at the origin.
    """
    lam = complex(lam)
    r = abs(lam)
    if lam == 0 or abs(r - 1.0) < 1e-14:
        raise KernelDomainError("g is undefined on the unit circle |lambda| = 1")
    x = np.asarray(x, float)
    shape = x.shape[:-1]
    x = x.reshape(-1, 2)
    rx = np.hypot(x[:, 0], x[:, 1])
    beta = np.arctan2(x[:, 1], x[:, 0])
    alpha = np.angle(lam)
    sigma = 1.0 if r > 1 else -1.0
    a = np.sqrt(E) / 2
    zc = x[:, 0] - 1j * x[:, 1]
    z = x[:, 0] + 1j * x[:, 1]
    A = a * zc * np.exp(1j * alpha)   # phi(s) = A s + B / s along the ray
    B = a * z * np.exp(-1j * alpha)
    phi_r = A * r + B / r
    psi_r = phi_r.imag
    out = np.empty(rx.size, complex)

    zero = rx == 0
    far = (psi_r > 1.0) & ~zero
    near = ~far & ~zero

    if np.any(near):
        idx = np.nonzero(near)[0]
        lr = np.log(r)
        t, w = _GL64
        u = 0.5 * lr * (t + 1)  # from 0 to ln r
        s = np.exp(u)
        ph = A[idx, None] * s + B[idx, None] / s
        # signed int_1^r Re e^{i phi(s)} ds / (2 pi s)
        radial = (np.exp(1j * ph).real * w).sum(-1) * 0.5 * lr / (2 * np.pi)
        G0 = green_classical(x[idx], E) + _half_circle_term(rx[idx], beta[idx], np.full(idx.size, alpha), sigma, E)
        out[idx] = np.exp(-1j * phi_r[idx]) * (G0 + sigma * radial)
    if np.any(far):
        idx = np.nonzero(far)[0]
        if sigma > 0:
            J = _ray_tail(A[idx], B[idx], r)
        else:
            J = _ray_tail(B[idx], A[idx], 1.0 / r)
        out[idx] = -np.exp(-1j * phi_r[idx]) * J.real / (2 * np.pi)
    if np.any(zero):
        out[zero] = faddeev_regular_part(lam, E)
    return out.reshape(shape)


def _ray_tail(A, B, r0):
    """int_{r0}^inf exp(i(A s + B/s)) ds / s, Im A > 0, along s = r0 + t*i*conj(A)/|A|."""
    absA = np.abs(A)
    d = 1j * np.conj(A) / absA
    u = _TAIL_U[None, :]
    c = absA[:, None] * r0
    s = r0 + u * d[:, None] / absA[:, None]
    f = np.exp(1j * A[:, None] * r0) * np.exp(-u) * np.exp(1j * B[:, None] / s) * d[:, None] / (c + u * d[:, None])
    return (f * _TAIL_W[None, :]).sum(-1)


def green_faddeev(x, lam: complex, E: float):
    """G(x, k(lambda)) = g(x, k) exp(i k.x)."""
    x = np.asarray(x, float)
    k1, k2 = lambda_to_k(lam, E)
    return green_faddeev_g(x, lam, E) * np.exp(1j * (k1 * x[..., 0] + k2 * x[..., 1]))


def green_difference(x, lam: complex, E: float):
    """G(x, k(lambda)) - G+(x); finite at x = 0."""
    x = np.asarray(x, float)
    rx = np.hypot(x[..., 0], x[..., 1])
    out = np.empty(rx.shape, complex)
    nz = rx > 0
    out[nz] = green_faddeev(x[nz], lam, E) - green_classical(x[nz], E)
    out[~nz] = faddeev_regular_part(lam, E) - green_classical_regular_part(E)
    return out


# -- the jump kernel W ---------------------------------------------------------

def heaviside_term(lam, sig):
    """int_{|eta|=1} theta[...] / (2 (sig - eta)) |d eta| from the W kernel."""
    lam = np.asarray(lam, complex)
    sig = np.asarray(sig, complex)
    lam, sig = np.broadcast_arrays(lam, sig)
    alpha = np.angle(lam)
    sigma = np.sign(np.abs(lam) - 1)
    flat_l, flat_s = alpha.reshape(-1), sig.reshape(-1)
    flat_sg = sigma.reshape(-1)
    res = np.empty(flat_s.size, complex)
    for sg in (1.0, -1.0):
        m = flat_sg == sg
        if not np.any(m):
            continue
        lo = flat_l[m] - np.pi if sg > 0 else flat_l[m]
        res[m] = _arc_cauchy_var(flat_s[m], lo, lo + np.pi) / 2
    return res.reshape(lam.shape)


def _arc_cauchy_var(sig, lo, hi, nsub: int = 64):
    frac = np.linspace(0, 1, nsub + 1)
    tau = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
    eta = np.exp(1j * tau)
    d = sig[:, None] - eta
    dlog = np.log(d[:, 1:] / d[:, :-1]).sum(-1)
    return (1j * (hi - lo) - dlog) / (1j * sig)


def w_logs(lam, sig):
    """Principal logarithms of w1 and w2; raises on a branch violation."""
    lam = np.asarray(lam, complex)
    sig = np.asarray(sig, complex)
    lam0 = lam / np.abs(lam)
    w1 = (sig - lam) / (sig - lam0)
    w2 = (-1 / sig - np.conj(lam)) / (-1 / sig - np.conj(lam0))
    with np.errstate(divide="ignore"):
        l1, l2 = np.log(w1), np.log(w2)
    for w, name in ((w1, "w1"), (w2, "w2")):
        bad = (w != 0) & (np.abs(np.angle(w)) >= np.pi * (1 - 1e-13))
        if np.any(bad):
            raise BranchViolation(f"|arg {name}| reached pi at {int(bad.sum())} node pairs")
    return l1, l2


def w_kernel(lam, sig):
    """Pointwise W(lambda, sigma) for boundary points (off the log singularities).

    W = (i/2) sgn(|lambda|^2 - 1) (ln w1 - ln w2) / sigma + Heaviside term.
    The w2 coefficient is the one produced by substituting sigma -> -1/conj(sigma)
    in the Cauchy-integral representation of the spectral derivatives of G.
    """
    lam = np.asarray(lam, complex)
    sig = np.asarray(sig, complex)
    l1, l2 = w_logs(lam, sig)
    sgn = np.sign(np.abs(lam) ** 2 - 1)
    return 0.5j * sgn * (l1 - l2) / sig + heaviside_term(lam, sig)


def branch_sweep(contour: SpectralContour):
    """Max |Im ln w_i| over all off-singular node pairs and the violation count."""
    L, S = np.meshgrid(contour.nodes, contour.nodes, indexing="ij")
    lam0 = L / np.abs(L)
    w1 = (S - L) / (S - lam0)
    w2 = (-1 / S - np.conj(L)) / (-1 / S - np.conj(lam0))
    a1 = np.abs(np.angle(w1[w1 != 0]))
    a2 = np.abs(np.angle(w2[w2 != 0]))
    worst = float(max(a1.max(), a2.max()))
    violations = int((a1 >= np.pi).sum() + (a2 >= np.pi).sum())
    return worst, violations


def _log_product_weights(n: int, direction: int) -> np.ndarray:
    """Circulant weights c[d] with int f(tau) ln(1 - e^{-i dir (tau - t_i)}) dtau ~ sum_j c[(i-j) % n] f_j."""
    m = np.arange(1, n // 2 + 1)
    coef = -2 * np.pi / m / n
    coef[-1] *= 0.5
    d = np.arange(n)
    ang = 2 * np.pi * np.outer(d, m) / n  # (t_i - tau_j) = 2 pi (i-j)/n
    return (coef[None, :] * np.exp(1j * direction * ang)).sum(-1)


def _model_log(s, direction):
    return np.log(1 - np.exp(-1j * direction * s))


def w_quadrature_matrix(contour: SpectralContour) -> np.ndarray:
    """Matrix Q with int_{dLambda} W(lambda_i, s) F(s) ds ~ sum_j Q[i, j] F_j.

    Exact for F times the log singularities at s = lambda_i (from w1) and at
    s = -1/conj(lambda_i) (from w2) in the sense of trigonometric product
    integration; the jump of Im ln w at those points is matched by choosing
    the sawtooth direction of the model logarithm per singular point.
    """
    n = contour.n
    N = contour.size
    nodes, tau, comp = contour.nodes, contour.tau, contour.component
    dtau = 2 * np.pi / n
    # d(sigma)/d(tau) for each node
    dsdt = contour.weights / dtau
    L, S = np.meshgrid(nodes, nodes, indexing="ij")
    sgn = np.sign(np.abs(nodes) ** 2 - 1)[:, None]
    l1, l2 = w_logs(L, S)
    H = heaviside_term(L, S)
    Q = H * contour.weights[None, :]
    refl = contour.reflected_index()
    coeff1 = 0.5j * sgn * (1 / S) * dsdt[None, :]
    coeff2 = -0.5j * sgn * (1 / S) * dsdt[None, :]
    P = {d: _log_product_weights(n, d) for d in (1, -1)}
    for i in range(N):
        for logs, coeff, sing in ((l1, coeff1, i), (l2, coeff2, refl[i])):
            same = comp == comp[sing]
            other = ~same
            Q[i, other] += coeff[i, other] * logs[i, other] * dtau
            js = np.nonzero(same)[0]
            t_sing = tau[sing]
            # offsets along the parameter of the singular circle
            s = (tau[js] - t_sing + np.pi) % (2 * np.pi) - np.pi
            lam_i = nodes[i]
            direction = _jump_direction(lam_i, nodes[sing], dsdt[sing], logs is l2)
            model = np.zeros(js.size, complex)
            nz = s != 0
            model[nz] = _model_log(s[nz], direction)
            rem = np.where(nz, logs[i, js] - model, 0)
            k = np.nonzero(~nz)[0][0]
            rem[k] = _remainder_limit(lam_i, nodes[sing], dsdt[sing], logs is l2, direction)
            pos = (js - sing) % n  # circulant offset index
            wts = P[direction][(-pos) % n]
            Q[i, js] += coeff[i, js] * (wts + rem * dtau)
    return Q


def _w_log_at(lam, sig, second):
    l1, l2 = w_logs(np.asarray(lam), np.asarray(sig))
    return l2 if second else l1


def _jump_direction(lam, sing, dsdt, second, eps=1e-7):
    """+1 if Im ln w jumps by +pi when the parameter crosses the singular node."""
    lo = _w_log_at(lam, sing - dsdt * eps, second)
    hi = _w_log_at(lam, sing + dsdt * eps, second)
    jump = float(np.imag(hi - lo))
    return 1 if jump > 0 else -1


def _remainder_limit(lam, sing, dsdt, second, direction, eps=1e-6):
    vals = []
    for e in (eps, -eps):
        lw = _w_log_at(lam, sing + dsdt * e, second)
        vals.append(lw - _model_log(np.array(e), direction))
    return complex(0.5 * (vals[0] + vals[1]))


def green_diff_contour(x, lam_index: int, contour: SpectralContour, Q: np.ndarray | None = None):
    """(2 pi)^{-2} int W(lambda, s) exp(i (sqrt(E)/2)(s conj(z) + z / s)) ds by contour quadrature."""
    E = contour.spec.energy
    Q = w_quadrature_matrix(contour) if Q is None else Q
    x = np.asarray(x, float).reshape(-1, 2)
    z = x[:, 0] + 1j * x[:, 1]
    s = contour.nodes[None, :]
    a = np.sqrt(E) / 2
    F = np.exp(1j * a * (s * np.conj(z)[:, None] + z[:, None] / s))
    return (F * Q[lam_index][None, :]).sum(-1) / (2 * np.pi) ** 2


def kernel_table_dump(table: np.ndarray, path, axes: dict) -> None:
    """Row-major complex128 pairs plus a JSON sidecar describing the axes."""
    import json
    from pathlib import Path

    path = Path(path)
    path.with_suffix(".bin").write_bytes(np.ascontiguousarray(table, "<c16").tobytes())
    meta = {"shape": list(table.shape), "dtype": "complex128-le", **axes}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1))
