"""Bilinear forms Pi(g, h), single-atom approximation by such forms, the
iterated weak factorization and lower bounds for product BMO by duality.

Continuous pieces (atoms, the far rectangle R~, the residual) are represented
as ``BoxFunction`` values on small tensor grids. All kernel actions between the
atom support and R~ go through one table K[i, c] = R(x_i, y_c) R(x'_i, y'_c)
(separable, one factor per axis) so the two halves of Pi are exact discrete
adjoints and the residual has exactly the mean of the atom.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .atoms import BoxAtom, BoxFunction, TwoRectangleDecomposition, _mseg, rect_measure, two_rectangle_h1_bound
from .errors import (ConfigError, DenominatorDegeneracyError, InvariantViolationError, NonContractionError,
                     PreconditionError, UsageError)
from .kernel import KernelBoundConstants, KernelConfig, gauss_legendre, kernel_integral, riesz_kernel
from .operators import Lifted, build_riesz, compose
from .weighted_domain import GridFunction, Interval, ProductGrid, Rectangle, weighted_inner_product


# ---------------------------------------------------------------- Pi on product grids


def product_riesz(pg: ProductGrid, cfg: KernelConfig, diagonal_policy: str = "zero"):
    """R_1 R_2 as a composition of the two lifted one-parameter tables."""
    r1 = build_riesz(pg.g1, cfg, diagonal_policy)
    r2 = r1 if pg.g2.same_as(pg.g1) else build_riesz(pg.g2, cfg, diagonal_policy)
    return compose(Lifted(r1, 1, pg), Lifted(r2, 2, pg))


def pi_form(g: GridFunction, h: GridFunction, T, T_adj=None) -> GridFunction:
    """Pi(g, h) = g T(h) - h T*(g) for T = R_1 R_2 (T* its adjoint)."""
    T_adj = T_adj if T_adj is not None else T.adjoint()
    return g.with_values(g.values * T.apply(h.values) - h.values * T_adj.apply(g.values))


def duality_defect(b: GridFunction, g: GridFunction, h: GridFunction, T) -> float:
    """|<b, Pi(g,h)> - <[b, T] h, g>| relative to the larger side."""
    lhs = weighted_inner_product(b, pi_form(g, h, T))
    comm = b.values * T.apply(h.values) - T.apply(b.values * h.values)
    rhs = weighted_inner_product(g.with_values(comm), g)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


# ---------------------------------------------------------------- single-atom approximation


@dataclass
class BilinearPair:
    """g = indicator of Rt and h = -a / (R~_1 R~_2 g)(x0), with their L^2 norms."""

    support: Rectangle
    Rt: Rectangle
    case: str
    M_tilde: float
    G0: float
    g_norm: float
    h_norm: float
    h: BoxFunction | None = None

    @property
    def size(self) -> float:
        return self.g_norm * self.h_norm


@dataclass
class Approximation:
    pair: BilinearPair
    error_upper: float
    decomposition: TwoRectangleDecomposition
    residual_l1: float
    K0: float
    guard: dict
    paper_bound: float
    within_paper_bound: bool
    attempts: list = field(default_factory=list)


def default_K0(consts: KernelBoundConstants, margin: float = 1.1) -> float:
    return margin * (max(1.0 / consts.K2, 1.0 / consts.K3) + 1.0)


def initial_M_tilde(eps: float, K0: float) -> float:
    """Smallest M >= 100 K0 (on a doubling ladder) with log2(M)/M < eps."""
    M = 100.0 * K0
    while math.log2(M) / M >= eps:
        M *= 2.0
    return M


def _far_rectangle(x0, r, M, K0):
    ys, tags = [], []
    for xi, ri in zip(x0, r):
        if xi <= 2 * M * ri:
            ys.append(xi + 2 * M * K0 * ri)
            tags.append("far")
        else:
            ys.append(xi - M * ri / K0)
            tags.append("near")
    case = {("far", "far"): "a", ("near", "far"): "b", ("far", "near"): "c", ("near", "near"): "d"}[tuple(tags)]
    return ys, tags, case


def _predicted_lower(cfg, consts, x0, y0, r, tag, n=16):
    """Lower bound for |int_{Rt_i} R(y, x0) dm(y)| from the calibrated kernel bounds."""
    lam = cfg.lam
    if tag == "far":
        return consts.C_K2 * math.log((y0 + r) / (y0 - r))
    gx, gw = np.polynomial.legendre.leggauss(n)
    y = y0 + r * gx
    return float(np.sum(consts.C_K3 * y ** lam / (x0 ** lam * (x0 - y)) * r * gw))


def atom_approximation(atom: BoxAtom, cfg: KernelConfig, consts: KernelBoundConstants, eps: float,
                       M_tilde: float | None = None, K0: float | None = None, sub: int = 4,
                       adapt: bool = True, max_doublings: int = 24, guard_fraction: float = 0.5,
                       keep_h: bool = False) -> Approximation:
    """Approximate a (1,inf)-atom by Pi(g, h) with g the indicator of a far rectangle.

    The far rectangle is congruent to the support and placed per axis either
    outward (x0 + 2 M K0 r) or inward (x0 - M r / K0) according to whether
    x0 <= 2 M r. The residual a - Pi(g, h) lives on the support and on Rt and
    its h^1 size is bounded by the two-rectangle decomposition. With adapt=True
    M is doubled until that bound is at most eps.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    lam = cfg.lam
    S = atom.support
    f = atom.f
    x0 = S.center
    r = S.radii
    K0 = default_K0(consts) if K0 is None else float(K0)
    if K0 <= max(1.0 / consts.K2, 1.0 / consts.K3) + 1.0:
        raise ConfigError("K0 must exceed max(1/K2, 1/K3) + 1")
    M = initial_M_tilde(eps, K0) if M_tilde is None else float(M_tilde)
    nx, ny = f.nodes
    wa = f.weights
    a_l2 = f.l2()
    attempts = []
    for _ in range(max_doublings + 1):
        ys, tags, case = _far_rectangle(x0, r, M, K0)
        Rt = Rectangle(Interval.ball(ys[0], r[0]), Interval.ball(ys[1], r[1]))
        G_axes = [kernel_integral(cfg, x0[i], ys[i] - r[i], ys[i] + r[i], adjoint=True) for i in range(2)]
        G0 = G_axes[0] * G_axes[1]
        low = [_predicted_lower(cfg, consts, x0[i], ys[i], r[i], tags[i]) for i in range(2)]
        guard = {"predicted_lower": low[0] * low[1], "threshold": guard_fraction * low[0] * low[1],
                 "c_guard": guard_fraction * low[0] * low[1] * M * M, "value": abs(G0)}
        if abs(G0) < guard["threshold"]:
            raise DenominatorDegeneracyError(f"|R~R~g(x0)| = {abs(G0):.3e} below guard {guard['threshold']:.3e}")
        bx = np.linspace(Rt.i1.left, Rt.i1.right, sub + 1)
        by = np.linspace(Rt.i2.left, Rt.i2.right, sub + 1)
        gt = BoxFunction(lam, bx, by, np.ones((sub, sub)))
        tx, ty = gt.nodes
        K1 = riesz_kernel(cfg, tx[:, None], nx[None, :])
        K2 = riesz_kernel(cfg, ty[:, None], ny[None, :])
        h = -f.values / G0
        Th = K1 @ (h * wa) @ K2.T              # R1R2 h on Rt
        Gd = K1.T @ gt.weights @ K2            # R~1R~2 g on the support cells
        w1 = f.values + h * Gd
        w2 = -Th
        f1 = BoxFunction(lam, f.bx, f.by, w1)
        f2 = BoxFunction(lam, bx, by, w2)
        dec = two_rectangle_h1_bound(S, Rt, f1, f2, mean_scale=f.l1())
        err = dec.coefficient_sum
        l1 = f1.l1() + f2.l1()
        if l1 > err * (1 + 1e-9) + 1e-300:
            raise InvariantViolationError(f"certified bound {err:.3e} below the residual L1 norm {l1:.3e}")
        h_norm = a_l2 / abs(G0)
        g_norm = math.sqrt(rect_measure(lam, Rt))
        expo = {"a": 2 + 2 * lam, "b": 2 + lam, "c": 2 + lam, "d": 2.0}[case]
        # the size bound is stated for atoms with sup norm at most 1/mu(R)
        scale = f.linf() * rect_measure(lam, S)
        bound = M ** expo * max(scale, 1e-300)
        pair = BilinearPair(S, Rt, case, M, G0, g_norm, h_norm, BoxFunction(lam, f.bx, f.by, h) if keep_h else None)
        attempts.append({"M_tilde": M, "error_upper": err, "case": case})
        res = Approximation(pair, err, dec, l1, K0, guard, bound, g_norm * h_norm <= bound, attempts)
        if err <= eps or not adapt:
            return res
        M *= 2.0
    raise NonContractionError(f"error bound {err:.3e} still above eps = {eps} after {max_doublings} doublings")


# ---------------------------------------------------------------- batched error bounds


def _pad(atoms):
    fs = [a.f for a in atoms]
    n = len(fs)
    P1 = max(len(f.bx) - 1 for f in fs)
    P2 = max(len(f.by) - 1 for f in fs)
    x0 = np.array([a.support.center for a in atoms])
    r = np.array([a.support.radii for a in atoms])
    nx = np.repeat(x0[:, :1], P1, axis=1)
    ny = np.repeat(x0[:, 1:], P2, axis=1)
    wa = np.zeros((n, P1, P2))
    va = np.zeros((n, P1, P2))
    mask = np.zeros((n, P1, P2), dtype=bool)
    for k, f in enumerate(fs):
        a, b = f.values.shape
        gx, gy = f.nodes
        nx[k, :a] = gx
        ny[k, :b] = gy
        wa[k, :a, :b] = f.weights
        va[k, :a, :b] = f.values
        mask[k, :a, :b] = True
    return x0, r, nx, ny, wa, va, mask


def _batch_core(cfg, consts, K0, M, x0, r, nx, ny, wa, va, mask, sub, n_gauss, guard_fraction):
    lam = cfg.lam
    s = 2.0 * lam + 1.0
    n = len(M)
    Mr = M[:, None] * r
    far = x0 <= 2 * Mr
    ys = np.where(far, x0 + 2 * K0 * Mr, x0 - Mr / K0)
    gx, gw = gauss_legendre(n_gauss)
    y = ys[:, :, None] + r[:, :, None] * gx
    Kv = riesz_kernel(cfg, y, np.broadcast_to(x0[:, :, None], y.shape))
    G_ax = np.sum(gw * Kv * y ** (2 * lam), axis=2) * r
    G0 = G_ax[:, 0] * G_ax[:, 1]
    low_far = consts.C_K2 * np.log((ys + r) / (ys - r))
    low_near = np.sum(consts.C_K3 * y ** lam / (x0[:, :, None] ** lam * (x0[:, :, None] - y)) * gw, axis=2) * r
    low = np.where(far, low_far, low_near)
    lower = low[:, 0] * low[:, 1]
    if np.any(np.abs(G0) < guard_fraction * lower):
        k = int(np.argmax(np.abs(G0) < guard_fraction * lower))
        raise DenominatorDegeneracyError(f"|R~R~g(x0)| = {abs(G0[k]):.3e} below guard for atom {k}")
    e = (ys - r)[:, :, None] + (2 * r)[:, :, None] * np.arange(sub + 1) / sub
    t = 0.5 * (e[:, :, 1:] + e[:, :, :-1])
    wt_ax = _mseg(s, e[:, :, :-1], e[:, :, 1:])
    wt = wt_ax[:, 0, :, None] * wt_ax[:, 1, None, :]
    K1 = riesz_kernel(cfg, np.broadcast_to(t[:, 0, :, None], (n, sub, nx.shape[1])),
                      np.broadcast_to(nx[:, None, :], (n, sub, nx.shape[1])))
    K2 = riesz_kernel(cfg, np.broadcast_to(t[:, 1, :, None], (n, sub, ny.shape[1])),
                      np.broadcast_to(ny[:, None, :], (n, sub, ny.shape[1])))
    h = -va / G0[:, None, None]
    Th = np.einsum("nip,npq,njq->nij", K1, h * wa, K2)
    Gd = np.einsum("nip,nij,njq->npq", K1, wt, K2)
    w1 = np.where(mask, va + h * Gd, 0.0)
    w2 = -Th
    c1 = np.sum(w1 * wa, axis=(1, 2))
    c2 = np.sum(w2 * wt, axis=(1, 2))
    l1 = np.sum(np.abs(w1) * wa, axis=(1, 2)) + np.sum(np.abs(w2) * wt, axis=(1, 2))
    la = np.sum(np.abs(va) * wa, axis=(1, 2))
    if np.any(np.abs(c1 + c2) > 1e-9 * np.maximum(l1, la)):
        raise PreconditionError("mean-zero: a residual in the batch has nonzero integral")
    d = np.abs(x0 - ys)
    log_sum = np.log2(d[:, 0] / r[:, 0]) + np.log2(d[:, 1] / r[:, 1])
    i0 = np.maximum(1, np.ceil(log_sum - 1e-12)).astype(int)
    I = int(i0.max()) + 2
    fac = 2.0 ** np.arange(I)
    col = np.arange(I)[None, :]
    rows = np.arange(n)
    mid = 0.5 * (x0 + ys)
    rb = (2.0 ** i0[:, None] + 1) * r
    Rb = (np.maximum(mid - rb, 0.0), mid + rb)
    mu_bar = _mseg(s, Rb[0][:, 0], Rb[1][:, 0]) * _mseg(s, Rb[0][:, 1], Rb[1][:, 1])
    err = np.zeros(n)
    for cc, c, w, ww, msk in ((x0, c1, w1, wa, mask), (ys, c2, w2, wt, np.ones_like(wt, dtype=bool))):
        L = np.maximum(cc[:, :, None] - fac * r[:, :, None], 0.0)
        U = cc[:, :, None] + fac * r[:, :, None]
        mu = _mseg(s, L[:, 0], U[:, 0]) * _mseg(s, L[:, 1], U[:, 1])
        dev = np.where(msk, np.abs(w - (c / mu[:, 1])[:, None, None]), 0.0)
        first = np.maximum(dev.max(axis=(1, 2)), np.abs(c) / mu[:, 1]) * mu[:, 1]
        inner = 1.0 / mu[:, :-1] - 1.0 / mu[:, 1:]
        terms = np.abs(c)[:, None] * np.maximum(inner, 1.0 / mu[:, 1:]) * mu[:, 1:]
        use = (col[:, 1:] >= 2) & (col[:, 1:] <= i0[:, None])
        middle = np.sum(np.where(use, terms, 0.0), axis=1)
        A_lo, A_hi = L[rows, :, i0], U[rows, :, i0]
        T_lo, T_hi = L[rows, :, i0 + 1], U[rows, :, i0 + 1]
        if np.any(Rb[0] < T_lo - 1e-12 * T_hi) or np.any(Rb[1] > T_hi * (1 + 1e-12)):
            raise PreconditionError("tail support: Rbar is not inside 2^(i0+1) R")
        A_in = np.all((Rb[0] <= A_lo) & (A_hi <= Rb[1]), axis=1)
        B_in = np.all((A_lo <= Rb[0]) & (Rb[1] <= A_hi), axis=1)
        mu_i0 = mu[rows, i0]
        v = np.abs(c / mu_i0 - c / mu_bar)
        v = np.where(A_in, v, np.maximum(v, np.abs(c) / mu_i0))
        v = np.where(B_in, v, np.maximum(v, np.abs(c) / mu_bar))
        err += first + middle + v * mu[rows, i0 + 1]
    if np.any(l1 > err * (1 + 1e-9)):
        raise InvariantViolationError("a certified bound fell below the residual L1 norm")
    case = np.where(far[:, 0], np.where(far[:, 1], "a", "c"), np.where(far[:, 1], "b", "d"))
    a_l2 = np.sqrt(np.sum(va * va * wa, axis=(1, 2)))
    size = np.sqrt(wt.sum(axis=(1, 2))) * a_l2 / np.abs(G0)
    return err, case, G0, size


def approximation_errors(atoms, cfg: KernelConfig, consts: KernelBoundConstants, eps: float,
                         K0: float | None = None, sub: int = 4, M_tilde: float | None = None, adapt: bool = True,
                         max_doublings: int = 24, guard_fraction: float = 0.5, n_gauss: int = 16,
                         chunk: int = 20000) -> dict:
    """Certified error bounds of the single-atom approximation for many atoms at once.

    Same construction as ``atom_approximation`` with the atoms padded to a
    common cell layout; the far-rectangle integral uses one Gauss-Legendre rule
    (the rectangle sits at least about 100 radii away, so the integrand is
    smooth). Returns arrays error, M_tilde, case, G0 and pair size.
    """
    K0 = default_K0(consts) if K0 is None else float(K0)
    n = len(atoms)
    out = {"error": np.zeros(n), "M_tilde": np.zeros(n), "case": np.empty(n, dtype="<U1"),
           "G0": np.zeros(n), "size": np.zeros(n)}
    for lo in range(0, n, chunk):
        part = atoms[lo:lo + chunk]
        x0, r, nx, ny, wa, va, mask = _pad(part)
        M = np.full(len(part), initial_M_tilde(eps, K0) if M_tilde is None else float(M_tilde))
        todo = np.arange(len(part))
        for _ in range(max_doublings + 1):
            err, case, G0, size = _batch_core(cfg, consts, K0, M[todo], x0[todo], r[todo], nx[todo], ny[todo],
                                              wa[todo], va[todo], mask[todo], sub, n_gauss, guard_fraction)
            sl = lo + todo
            out["error"][sl] = err
            out["M_tilde"][sl] = M[todo]
            out["case"][sl] = case
            out["G0"][sl] = G0
            out["size"][sl] = size
            bad = err > eps
            if not adapt or not bad.any():
                break
            todo = todo[bad]
            M[todo] *= 2.0
        else:
            raise NonContractionError(f"error bounds still above eps = {eps} after {max_doublings} doublings")
    return out


# ---------------------------------------------------------------- weak factorization


@dataclass
class FactorizationResult:
    levels: list
    pairs: list
    residual_upper: float
    input_upper: float
    eps: float
    C0: float
    certificate: float
    stop_reason: str
    constants: dict

    @property
    def certified(self) -> bool:
        return self.residual_upper <= self.certificate * (1 + 1e-6)


def weak_factorize(atoms, cfg: KernelConfig, consts: KernelBoundConstants, eps: float, C0: float = 1.0,
                   K: int = 4, K0: float | None = None, sub: int = 4, tol: float = 0.0,
                   max_atoms: int = 2_000_000) -> FactorizationResult:
    """Iterate single-atom approximation on the residual.

    atoms: list of (coefficient, BoxAtom). Level k approximates every atom of
    the current decomposition by a bilinear form; the residuals are rewritten
    as atoms by the two-rectangle decomposition, which costs exactly the sum of
    the per-atom error bounds. The h^1 bound of the remainder after K levels is
    compared with (eps C0)^K times the input coefficient sum.
    """
    if C0 < 1:
        raise ConfigError("C0 is an atomic-decomposition constant and cannot be below 1")
    if eps * C0 >= 1:
        raise NonContractionError(f"eps * C0 = {eps * C0} >= 1; the iteration does not contract")
    current = [(float(c), a) for c, a in atoms if c != 0]
    input_upper = float(sum(abs(c) for c, _ in current))
    levels, pairs = [], []
    residual = input_upper
    stop = "max-levels"
    for k in range(1, K + 1):
        t0 = time.perf_counter()
        nxt = []
        coef = np.array([c for c, _ in current])
        if k < K:
            errs, cases_k = np.zeros(len(current)), []
            for j, (c, a) in enumerate(current):
                ap = atom_approximation(a, cfg, consts, eps, K0=K0, sub=sub)
                p = ap.pair
                pairs.append({"level": k, "coefficient": c, "case": p.case, "M_tilde": p.M_tilde, "G0": p.G0,
                              "size": p.size})
                errs[j] = ap.error_upper
                cases_k.append(p.case)
                nxt.extend((c * beta, b) for beta, b in ap.decomposition.terms)
        else:
            # the last level only needs the error bounds, not the residual atoms
            res = approximation_errors([a for _, a in current], cfg, consts, eps, K0=K0, sub=sub)
            errs, cases_k = res["error"], [str(c) for c in res["case"]]
            pairs.extend({"level": k, "coefficient": float(c), "case": str(cs), "M_tilde": float(m), "G0": float(g),
                          "size": float(z)} for c, cs, m, g, z in zip(coef, res["case"], res["M_tilde"], res["G0"],
                                                                       res["size"]))
        resid_k = float(np.sum(np.abs(coef) * errs))
        cases = {c: cases_k.count(c) for c in sorted(set(cases_k))}
        if resid_k > eps * C0 * residual * (1 + 1e-9):
            raise NonContractionError(f"level {k}: residual bound {resid_k:.3e} exceeds eps C0 times {residual:.3e}")
        levels.append({"level": k, "atoms": len(current), "residual_upper": resid_k,
                       "ratio": resid_k / residual if residual > 0 else 0.0, "worst_error": float(np.max(errs)),
                       "cases": cases, "seconds": time.perf_counter() - t0})
        residual = resid_k
        current = nxt
        if residual <= tol * input_upper:
            stop = "tolerance"
            break
        if len(current) > max_atoms:
            stop = "atom-budget"
            break
    return FactorizationResult(levels, pairs, residual, input_upper, eps, C0, (eps * C0) ** len(levels) * input_upper,
                               stop, {"K0": default_K0(consts) if K0 is None else K0,
                                      "M_tilde_initial": initial_M_tilde(eps, default_K0(consts) if K0 is None else K0)})


# ---------------------------------------------------------------- lower bounds by pairing


def bmo_lower_via_pairing(b: GridFunction, battery) -> dict:
    """max |<b, f>| / U(f) over a battery of (f, U(f)) with U an h^1 upper bound.

    Every such ratio is a lower bound for the product BMO norm of b up to the
    duality constant.
    """
    battery = list(battery)
    if not battery:
        raise UsageError("the pairing battery is empty")
    best = 0.0
    arg = None
    for k, (f, upper) in enumerate(battery):
        if upper <= 0:
            continue
        v = abs(weighted_inner_product(b, f)) / upper
        if v > best:
            best, arg = v, k
    return {"lower_bound": best, "argmax": arg, "battery_size": len(battery)}
