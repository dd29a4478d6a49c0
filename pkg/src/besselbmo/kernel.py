"""Riesz transform kernel of the Bessel operator by adaptive theta quadrature.

The kernel is

    R(x, y) = -(2 lam / pi) * int_0^pi (x - y cos t) (sin t)^(2 lam - 1)
                                / (x^2 + y^2 - 2 x y cos t)^(lam + 1) dt

for x != y. Near t = 0 the denominator collapses to |x - y|^(2 lam + 2), so the
initial panels are geometric toward t = 0 with the finest panel at the angular
scale |x - y| / sqrt(x y). Each panel uses a 7/15 Gauss-Kronrod pair and the
panel with the largest error estimate is bisected until the summed estimate is
below tolerance. For lam < 1/2 the factor (sin t)^(2 lam - 1) is singular at both
endpoints; each half of [0, pi] is then mapped by t = u^(1 / (2 lam)) measured
from its endpoint, which turns the singular factor into a bounded one.

``1 - cos t`` is always evaluated as ``2 sin^2(t/2)`` to avoid cancellation
close to the diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np

from .errors import CalibrationError, ConfigError, DiagonalSingularityError, QuadratureConvergenceError
from .weighted_domain import as_lambda

# 15-point Kronrod nodes on [-1, 1] (non-negative half) and weights; every other
# node starting at index 1 is a 7-point Gauss node.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class KernelConfig:
    lam: float
    max_subdivisions: int = 400
    abs_tol: float = 1e-300
    rel_tol: float = 1e-11

    def __post_init__(self):
        object.__setattr__(self, "lam", as_lambda(self.lam))
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ConfigError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ConfigError("max_subdivisions must be at least 1")


@dataclass(frozen=True)
class KernelBoundConstants:
    K1: float
    K2: float
    K3: float
    C_K1: float
    C_K2: float
    C_K3: float
    sample_ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.K1 > 2 and 0 < self.K2 < 1 and 0 < self.K3 < 0.5):
            raise CalibrationError(f"constants outside their admissible ranges: {self}")
        if min(self.C_K1, self.C_K2, self.C_K3) <= 0:
            raise CalibrationError("fitted kernel-bound constants must be positive")


@numba.njit(cache=True)
def _integrand(t, side, x, y, lam, subst):
    if subst:
        inv = 0.5 / lam
        phi = t ** inv
        s = np.sin(phi)
        weight = (s / phi) ** (2.0 * lam - 1.0) * inv
        if side == 0:
            h = np.sin(0.5 * phi)
        else:
            h = np.cos(0.5 * phi)
        omc = 2.0 * h * h
    else:
        weight = np.sin(t) ** (2.0 * lam - 1.0)
        h = np.sin(0.5 * t)
        omc = 2.0 * h * h
    d = x - y
    num = d + y * omc
    den = d * d + 2.0 * x * y * omc
    return num * weight / den ** (lam + 1.0)


@numba.njit(cache=True)
def _panel(a, b, side, x, y, lam, subst, xgk, wgk, wg):
    c = 0.5 * (a + b)
    hw = 0.5 * (b - a)
    fc = _integrand(c, side, x, y, lam, subst)
    rk = fc * wgk[7]
    rg = fc * wg[3]
    ra = abs(fc) * wgk[7]
    for j in range(7):
        dx = hw * xgk[j]
        f1 = _integrand(c - dx, side, x, y, lam, subst)
        f2 = _integrand(c + dx, side, x, y, lam, subst)
        rk += wgk[j] * (f1 + f2)
        ra += wgk[j] * (abs(f1) + abs(f2))
        if j % 2 == 1:
            rg += wg[j // 2] * (f1 + f2)
    return rk * hw, abs(rk - rg) * hw, ra * hw


@numba.njit(cache=True)
def _kernel_one(x, y, lam, abs_tol, rel_tol, max_sub, xgk, wgk, wg):
    """Return (value, error estimate, subdivisions used, converged flag)."""
    subst = lam < 0.5
    scale = abs(x - y) / np.sqrt(x * y)
    levels = 2
    if scale < np.pi:
        levels = int(np.ceil(np.log2(np.pi / scale))) + 3
    if levels > 60:
        levels = 60
    cap = levels + 4 + max_sub
    pa = np.empty(cap)
    pb = np.empty(cap)
    ps = np.empty(cap, dtype=np.int64)
    pk = np.empty(cap)
    pe = np.empty(cap)
    pab = np.empty(cap)
    n = 0
    if subst:
        top = (0.5 * np.pi) ** (2.0 * lam)
        hi = top
        for j in range(1, levels + 1):
            lo = (0.5 * np.pi * 2.0 ** (-j)) ** (2.0 * lam)
            pa[n] = lo
            pb[n] = hi
            ps[n] = 0
            n += 1
            hi = lo
        pa[n] = 0.0
        pb[n] = hi
        ps[n] = 0
        n += 1
        pa[n] = 0.0
        pb[n] = top
        ps[n] = 1
        n += 1
    else:
        hi = np.pi
        for j in range(1, levels + 1):
            lo = np.pi * 2.0 ** (-j)
            pa[n] = lo
            pb[n] = hi
            ps[n] = 0
            n += 1
            hi = lo
        pa[n] = 0.0
        pb[n] = hi
        ps[n] = 0
        n += 1
    for i in range(n):
        pk[i], pe[i], pab[i] = _panel(pa[i], pb[i], ps[i], x, y, lam, subst, xgk, wgk, wg)
    pref = 2.0 * lam / np.pi
    nsub = 0
    while True:
        total = 0.0
        err = 0.0
        absint = 0.0
        worst = 0
        for i in range(n):
            total += pk[i]
            err += pe[i]
            absint += pab[i]
            if pe[i] > pe[worst]:
                worst = i
        tol = max(abs_tol / pref, rel_tol * abs(total), 50.0 * 2.220446049250313e-16 * absint)
        if err <= tol:
            return -pref * total, pref * err, nsub, True
        if nsub >= max_sub:
            return -pref * total, pref * err, nsub, False
        a = pa[worst]
        b = pb[worst]
        m = 0.5 * (a + b)
        side = ps[worst]
        pb[worst] = m
        pk[worst], pe[worst], pab[worst] = _panel(a, m, side, x, y, lam, subst, xgk, wgk, wg)
        pa[n] = m
        pb[n] = b
        ps[n] = side
        pk[n], pe[n], pab[n] = _panel(m, b, side, x, y, lam, subst, xgk, wgk, wg)
        n += 1
        nsub += 1


@numba.njit(cache=True)
def _kernel_many(xs, ys, lam, abs_tol, rel_tol, max_sub, xgk, wgk, wg):
    m = xs.size
    vals = np.empty(m)
    errs = np.empty(m)
    ok = np.ones(m, dtype=np.bool_)
    for i in range(m):
        v, e, _, good = _kernel_one(xs[i], ys[i], lam, abs_tol, rel_tol, max_sub, xgk, wgk, wg)
        vals[i] = v
        errs[i] = e
        ok[i] = good
    return vals, errs, ok


def riesz_kernel_with_error(cfg: KernelConfig, x, y):
    """Vectorized kernel values and quadrature error estimates.

    Raises DiagonalSingularityError if any pair has x == y and
    QuadratureConvergenceError (carrying the residual estimate and the flat
    index of the first failing pair) if the subdivision budget runs out.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    shape = x.shape
    xf = np.ascontiguousarray(x.ravel())
    yf = np.ascontiguousarray(y.ravel())
    if np.any(xf <= 0) or np.any(yf <= 0):
        raise ConfigError("kernel arguments must be positive")
    same = xf == yf
    if np.any(same):
        k = int(np.argmax(same))
        raise DiagonalSingularityError(f"kernel evaluated on the diagonal at x = y = {xf[k]}")
    vals, errs, ok = _kernel_many(xf, yf, cfg.lam, cfg.abs_tol, cfg.rel_tol, cfg.max_subdivisions, _XGK, _WGK, _WG)
    if not np.all(ok):
        k = int(np.argmin(ok))
        raise QuadratureConvergenceError(
            f"theta quadrature did not converge at x={xf[k]}, y={yf[k]} (error estimate {errs[k]:.3e})",
            residual=float(errs[k]),
            location=k,
        )
    return vals.reshape(shape), errs.reshape(shape)


def riesz_kernel(cfg: KernelConfig, x, y):
    vals, _ = riesz_kernel_with_error(cfg, x, y)
    if vals.ndim == 0:
        return float(vals)
    return vals


def adjoint_kernel(cfg: KernelConfig, x, y):
    """Kernel of the adjoint transform: R~(x, y) = R(y, x)."""
    return riesz_kernel(cfg, y, x)


@dataclass(frozen=True)
class SampleSpec:
    """Log-spaced (x, y) clouds for the three kernel regimes.

    Far regime: y = t x with t in [far_min, far_max].
    Near-origin regime: y = t x with t in [near_min, near_max].
    Diagonal regime: y = (1 + s) x with s in [diag_min, diag_max].
    """

    x_min: float = 0.1
    x_max: float = 10.0
    n_x: int = 15
    n_ratio: int = 40
    far_min: float = 2.05
    far_max: float = 1000.0
    near_min: float = 1e-3
    near_max: float = 0.99
    diag_min: float = 1e-3
    diag_max: float = 0.49
    k1_candidates: tuple = (2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 20.0, 50.0)
    k2_candidates: tuple = (0.95, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.02)
    k3_candidates: tuple = (0.49, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05, 0.02)


def regime_cloud(cfg: KernelConfig, x_range, ratio_range, n_x: int, n_ratio: int, diagonal: bool = False):
    """Kernel values on a log-spaced cloud.

    With diagonal=False the cloud is y = t x for t log-spaced in ratio_range;
    with diagonal=True it is y = (1 + s) x for s log-spaced in ratio_range.
    Returns flat arrays (x, y, value, error).
    """
    xs = np.geomspace(x_range[0], x_range[1], n_x)
    ts = np.geomspace(ratio_range[0], ratio_range[1], n_ratio)
    X, T = np.meshgrid(xs, ts, indexing="ij")
    Y = X * (1.0 + T) if diagonal else X * T
    vals, errs = riesz_kernel_with_error(cfg, X.ravel(), Y.ravel())
    return X.ravel(), Y.ravel(), vals, errs


def calibrate_bound_constants(cfg: KernelConfig, spec: SampleSpec | None = None) -> KernelBoundConstants:
    """Smallest K1, largest K2 and K3 whose sign conditions hold on the sample.

    The fitted constants are the minima over the admissible sub-cloud of
    R y^(2lam+2) / x (far), -R x^(2lam+1) (near origin) and
    R (y - x) x^lam y^lam (near diagonal). They are empirical, range-limited
    estimates.
    """
    spec = spec or SampleSpec()
    lam = cfg.lam
    xr = (spec.x_min, spec.x_max)

    x, y, v, _ = regime_cloud(cfg, xr, (spec.far_min, spec.far_max), spec.n_x, spec.n_ratio)
    t = y / x
    K1 = C1 = None
    for k in sorted(spec.k1_candidates):
        sel = t >= k
        if sel.any() and np.all(v[sel] > 0):
            K1 = k
            C1 = float(np.min(v[sel] * y[sel] ** (2 * lam + 2) / x[sel]))
            break

    x, y, v, _ = regime_cloud(cfg, xr, (spec.near_min, spec.near_max), spec.n_x, spec.n_ratio)
    t = y / x
    K2 = C2 = None
    for k in sorted(spec.k2_candidates, reverse=True):
        sel = t <= k
        if sel.any() and np.all(v[sel] < 0):
            K2 = k
            C2 = float(np.min(-v[sel] * x[sel] ** (2 * lam + 1)))
            break

    x, y, v, _ = regime_cloud(cfg, xr, (spec.diag_min, spec.diag_max), spec.n_x, spec.n_ratio, diagonal=True)
    s = y / x - 1.0
    K3 = C3 = None
    for k in sorted(spec.k3_candidates, reverse=True):
        sel = s <= k
        if sel.any() and np.all(v[sel] > 0):
            K3 = k
            C3 = float(np.min(v[sel] * (y[sel] - x[sel]) * x[sel] ** lam * y[sel] ** lam))
            break

    if None in (K1, K2, K3):
        raise CalibrationError(f"no admissible kernel-bound constants for lambda={lam}: K1={K1}, K2={K2}, K3={K3}")
    return KernelBoundConstants(
        K1=float(K1), K2=float(K2), K3=float(K3), C_K1=C1, C_K2=C2, C_K3=C3,
        sample_ranges={"x": list(xr), "far": [spec.far_min, spec.far_max],
                       "near": [spec.near_min, spec.near_max], "diag": [spec.diag_min, spec.diag_max]},
    )


def homogeneity_deviation(cfg: KernelConfig, x, y, scales) -> float:
    """max |R(tx, ty) t^(2lam+1) - R(x, y)| / |R(x, y)| over the cloud and scales."""
    base = np.asarray(riesz_kernel(cfg, x, y))
    worst = 0.0
    for t in scales:
        scaled = np.asarray(riesz_kernel(cfg, t * np.asarray(x), t * np.asarray(y))) * t ** (2 * cfg.lam + 1)
        worst = max(worst, float(np.max(np.abs(scaled - base) / np.abs(base))))
    return worst


@lru_cache(maxsize=16)
def gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _graded_panels(lo: float, hi: float, anchor: float, h_min: float):
    """Panels of [lo, hi] with widths doubling away from anchor (an endpoint)."""
    length = hi - lo
    h = min(h_min, length)
    edges = [0.0, h]
    while edges[-1] < length:
        edges.append(min(length, 2.0 * edges[-1]))
    d = np.array(edges)
    return (lo + d) if anchor == lo else (hi - d[::-1])


def kernel_integral(cfg: KernelConfig, x, a: float, b: float, adjoint: bool = False, n_gauss: int = 16,
                    h_min: float | None = None):
    """int_a^b K(x, y) y^(2 lam) dy with K = R (or R~ if adjoint), vectorized over x.

    Gauss-Legendre on panels graded geometrically toward x. For x inside (a, b)
    the integral is a principal value: the leading singular part 1/(pi (y - x))
    (with the sign flipped for the adjoint kernel) is subtracted and its
    principal value (1/pi) log((b - x)/(x - a)) is added back.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    gx, gw = gauss_legendre(n_gauss)
    lam = cfg.lam
    out = np.empty(xs.shape)
    sgn = -1.0 if adjoint else 1.0
    for k, xv in enumerate(xs):
        hm = h_min if h_min is not None else 1e-13 * max(xv, b)
        if xv <= a or xv >= b:
            d = a - xv if xv <= a else xv - b
            if d <= 0:
                raise DiagonalSingularityError("evaluation point on the interval boundary")
            anchor = a if xv <= a else b
            edges = _graded_panels(a, b, anchor, max(d, hm))
            pv = False
        else:
            left = _graded_panels(a, xv, xv, hm)
            right = _graded_panels(xv, b, xv, hm)
            edges = None
            pv = True
        parts = []
        segs = [edges] if not pv else [left[:-1], right[1:]]
        if pv:
            # drop the two panels touching x: their remainder contribution is O(h_min)
            segs = [left[:-1], right[1:]]
        for e in segs:
            if len(e) < 2:
                continue
            lo = e[:-1, None]
            hi = e[1:, None]
            y = 0.5 * (hi + lo) + 0.5 * (hi - lo) * gx[None, :]
            wy = 0.5 * (hi - lo) * gw[None, :]
            kv = riesz_kernel(cfg, y, xv) if adjoint else riesz_kernel(cfg, xv, y)
            f = kv * y ** (2 * lam)
            if pv:
                f = f - sgn / (np.pi * (y - xv))
            parts.append(np.sum(f * wy))
        val = float(np.sum(parts))
        if pv:
            val += sgn * np.log((b - xv) / (xv - a)) / np.pi
        out[k] = val
    return out if np.ndim(x) else float(out[0])


def riesz_of_indicator(cfg: KernelConfig, x, left: float, right: float, **kw):
    """R applied to the indicator of (left, right) with respect to y^(2 lam) dy."""
    return kernel_integral(cfg, x, left, right, adjoint=False, **kw)
