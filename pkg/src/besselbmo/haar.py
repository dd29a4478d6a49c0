"""Weighted martingale Haar system, Haar shifts and dyadic paraproducts.

The dyadic tree is built on cell-index ranges: a node covering cells [lo, hi)
splits at (lo + hi) // 2. On a uniform grid these are ordinary dyadic
intervals; on a geometric grid they are dyadic in log scale. Every node has at
most two children, so each internal node carries one cancellative function

    h_I = sqrt(mu_l mu_r / mu(I)) * (chi_l / mu_l - chi_r / mu_r)

and every node carries h0_I = chi_I / sqrt(mu(I)). The tree code works with
child lists so a different branching rule only has to change ``_split``.

All families are evaluated in matrix form: H holds h_I row by row (zero rows
for leaves), so <f, h_I> = H @ (f w) and sum_I c_I h_I = c @ H.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateSplitError, InvariantViolationError, UsageError
from .operators import KernelOperator
from .weighted_domain import GridFunction, ProductGrid, WeightedGrid


def _split(lo: int, hi: int):
    mid = (lo + hi) // 2
    return [(lo, mid), (mid, hi)]


@dataclass(frozen=True, eq=False)
class HaarSystem:
    grid: WeightedGrid
    depth: int
    lo: np.ndarray
    hi: np.ndarray
    level: np.ndarray
    parent: np.ndarray
    children: list
    internal: np.ndarray
    H: np.ndarray
    H0: np.ndarray
    node_measure: np.ndarray

    @property
    def size(self) -> int:
        return self.lo.size

    def ancestor(self, k: int) -> np.ndarray:
        """Index of the k-th ancestor of every node, -1 where it does not exist."""
        a = np.arange(self.size)
        for _ in range(k):
            a = np.where(a >= 0, self.parent[np.maximum(a, 0)], -1)
        return a

    def descendants(self, strict: bool = True) -> np.ndarray:
        """D[I, J] = 1 when J is a (strict) descendant of I."""
        N = self.size
        D = np.zeros((N, N))
        for j in range(N):
            p = self.parent[j]
            while p >= 0:
                D[p, j] = 1.0
                p = self.parent[p]
        if not strict:
            D += np.eye(N)
        return D

    def cell_indicator(self) -> np.ndarray:
        """chi[I, k] = 1 when cell k lies in node I."""
        idx = np.arange(self.grid.n)
        return ((idx >= self.lo[:, None]) & (idx < self.hi[:, None])).astype(float)

    def interval(self, node: int):
        return self.grid.cell_interval(int(self.lo[node]), int(self.hi[node]))


def full_depth(n: int) -> int:
    return int(np.ceil(np.log2(n))) if n > 1 else 0


def build_haar(grid: WeightedGrid, depth: int | None = None) -> HaarSystem:
    n = grid.n
    D = full_depth(n)
    depth = D if depth is None else int(depth)
    if depth < 0 or depth > D:
        raise ConfigError(f"depth {depth} outside [0, {D}] for a {n}-cell grid")
    w = grid.measures
    cum = np.r_[0.0, np.cumsum(w)]
    lo, hi, level, parent, children = [0], [n], [0], [-1], []
    k = 0
    while k < len(lo):
        kids = []
        if level[k] < depth and hi[k] - lo[k] >= 2:
            for a, b in _split(lo[k], hi[k]):
                kids.append(len(lo))
                lo.append(a)
                hi.append(b)
                level.append(level[k] + 1)
                parent.append(k)
        children.append(kids)
        k += 1
    lo = np.array(lo)
    hi = np.array(hi)
    N = lo.size
    mu = cum[hi] - cum[lo]
    H = np.zeros((N, n))
    H0 = np.zeros((N, n))
    internal = np.array([len(c) > 0 for c in children])
    for i in range(N):
        if mu[i] <= 0:
            raise DegenerateSplitError(f"node [{lo[i]}, {hi[i]}) has non-positive measure")
        H0[i, lo[i]:hi[i]] = 1.0 / np.sqrt(mu[i])
        if internal[i]:
            l, r = children[i]
            ml, mr = mu[l], mu[r]
            if ml <= 0 or mr <= 0:
                raise DegenerateSplitError(f"node [{lo[i]}, {hi[i]}) has a zero-measure child")
            c = np.sqrt(ml * mr / mu[i])
            H[i, lo[l]:hi[l]] = c / ml
            H[i, lo[r]:hi[r]] = -c / mr
    for arr in (lo, hi, H, H0, mu, internal):
        arr.setflags(write=False)
    return HaarSystem(grid, depth, lo, hi, np.array(level), np.array(parent), children, internal, H, H0, mu)


@dataclass(frozen=True)
class HaarCoefficients:
    cancellative: np.ndarray
    root_mean: float


def haar_coefficients(f, system: HaarSystem) -> HaarCoefficients:
    v = f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)
    fw = v * system.grid.measures
    return HaarCoefficients(system.H @ fw, float(system.H0[0] @ fw))


def haar_reconstruct(coeffs: HaarCoefficients, system: HaarSystem) -> GridFunction:
    v = coeffs.cancellative @ system.H + coeffs.root_mean * system.H0[0]
    return GridFunction(system.grid, v)


def dyadic_oscillation(b, system: HaarSystem) -> float:
    """sup over tree nodes of the mean L^1 oscillation of b."""
    v = b.values if isinstance(b, GridFunction) else np.asarray(b, dtype=float)
    w = system.grid.measures
    best = 0.0
    for i in range(system.size):
        s = slice(system.lo[i], system.hi[i])
        m = np.sum(v[s] * w[s]) / system.node_measure[i]
        best = max(best, float(np.sum(np.abs(v[s] - m) * w[s]) / system.node_measure[i]))
    return best


# ---------------------------------------------------------------- shifts


@dataclass(frozen=True)
class ShiftParams:
    """Coefficients a[L, I, J] of a cancellative shift, stored as parallel arrays."""

    m: int
    n: int
    L: np.ndarray
    I: np.ndarray
    J: np.ndarray
    a: np.ndarray


def shift_triples(system: HaarSystem, m: int, n: int):
    """All admissible (L, I, J) with I, J internal, I^(m) = J^(n) = L."""
    am = system.ancestor(m)
    an = system.ancestor(n)
    L, I, J = [], [], []
    nodes = np.flatnonzero(system.internal)
    for l in nodes:
        Is = nodes[am[nodes] == l]
        Js = nodes[an[nodes] == l]
        for i in Is:
            for j in Js:
                L.append(l)
                I.append(i)
                J.append(j)
    return np.array(L, dtype=int), np.array(I, dtype=int), np.array(J, dtype=int)


def shift_bound(system: HaarSystem, L, I, J) -> np.ndarray:
    mu = system.node_measure
    return np.sqrt(mu[I]) * np.sqrt(mu[J]) / mu[L]


def random_shift(system: HaarSystem, m: int, n: int, rng) -> ShiftParams:
    L, I, J = shift_triples(system, m, n)
    u = rng.uniform(-1.0, 1.0, size=L.size)
    return ShiftParams(m, n, L, I, J, u * shift_bound(system, L, I, J))


def shift_operator(params: ShiftParams, system: HaarSystem) -> KernelOperator:
    """The shift as a kernel table, so it composes with the other operators."""
    bound = shift_bound(system, params.L, params.I, params.J)
    bad = np.abs(params.a) > bound
    if np.any(bad):
        k = int(np.argmax(bad))
        raise InvariantViolationError(
            f"shift coefficient {params.a[k]} exceeds sqrt(mu(I))sqrt(mu(J))/mu(L) = {bound[k]} "
            f"at (L, I, J) = ({params.L[k]}, {params.I[k]}, {params.J[k]})"
        )
    N = system.size
    A = np.zeros((N, N))
    np.add.at(A, (params.J, params.I), params.a)
    table = system.H.T @ A @ system.H
    return KernelOperator(system.grid, table, diagonal_policy="haar-shift")


def apply_shift(params: ShiftParams, system: HaarSystem, f) -> GridFunction:
    v = f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)
    return GridFunction(system.grid, shift_operator(params, system).apply(v))


# ---------------------------------------------------------------- one-parameter paraproducts


def _vals(f):
    return f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)


def _coef(system: HaarSystem, f, noncancellative=False):
    M = system.H0 if noncancellative else system.H
    return M @ (_vals(f) * system.grid.measures)


def _ancestor_pairs(system: HaarSystem, k: int, any_node: bool = False):
    """Nodes I (internal unless any_node) whose k-th ancestor exists, and those ancestors."""
    anc = system.ancestor(k)
    sel = anc >= 0
    if not any_node:
        sel &= system.internal
    I = np.flatnonzero(sel)
    return I, anc[I]


def paraproduct_Bk(b, f, k: int, system: HaarSystem) -> GridFunction:
    """sum_I <b, h_{I^(k)}> <f, h_I> h_I h_{I^(k)}."""
    if k < 0:
        raise ConfigError("k must be non-negative")
    cb, cf = _coef(system, b), _coef(system, f)
    I, A = _ancestor_pairs(system, k)
    H = system.H
    return GridFunction(system.grid, (cb[A] * cf[I]) @ (H[I] * H[A]))


def paraproduct_B0_tilde(b, f, system: HaarSystem) -> GridFunction:
    """sum_I <b, h_I> <f, h0_I> h0_I h_I."""
    cb, c0 = _coef(system, b), _coef(system, f, noncancellative=True)
    return GridFunction(system.grid, (cb * c0) @ (system.H0 * system.H))


def _below(system: HaarSystem, a) -> np.ndarray:
    """Row I holds sum_{J strictly inside I} <a, h_J> h_J."""
    return system.descendants(strict=True) @ (_coef(system, a)[:, None] * system.H)


def paraproduct_P(b, a, f, system: HaarSystem) -> GridFunction:
    """sum_I <b, h_I> <f, h_I> h_I^2 sum_{J strictly inside I} <a, h_J> h_J."""
    cb, cf = _coef(system, b), _coef(system, f)
    G = system.H ** 2 * _below(system, a)
    return GridFunction(system.grid, (cb * cf) @ G)


def paraproduct_P_adjoint(b, a, g, system: HaarSystem) -> GridFunction:
    """Adjoint of f -> P(b, a, f) under the weighted inner product."""
    cb = _coef(system, b)
    G = system.H ** 2 * _below(system, a)
    inner = G @ (_vals(g) * system.grid.measures)
    return GridFunction(system.grid, (cb * inner) @ system.H)


# ---------------------------------------------------------------- bi-parameter paraproducts


def _coef2(s1: HaarSystem, s2: HaarSystem, f, nc1=False, nc2=False):
    M1 = s1.H0 if nc1 else s1.H
    M2 = s2.H0 if nc2 else s2.H
    fw = _vals(f) * np.outer(s1.grid.measures, s2.grid.measures)
    return M1 @ fw @ M2.T


def _separable(pgrid, G1, coef, G2):
    return GridFunction(pgrid, G1.T @ coef @ G2)


def _shape_check(pgrid: ProductGrid, s1: HaarSystem, s2: HaarSystem):
    if not (pgrid.g1.same_as(s1.grid) and pgrid.g2.same_as(s2.grid)):
        raise UsageError("Haar systems do not match the product grid factors")


def _anc_factor(s: HaarSystem, k: int, nc: bool):
    """Rows h_I h_{I^(k)} (or h0_I h_{I^(k)}) and the selected I and I^(k)."""
    I, A = _ancestor_pairs(s, k, any_node=nc)
    base = s.H0 if nc else s.H
    return base[I] * s.H[A], I, A


def B_kl(b, f, k, l, s1, s2, pgrid, tilde: int = 0) -> GridFunction:
    """B_{k,l} (tilde=0) and its variants with h0 in slot 1 (tilde=1), slot 2 (tilde=2) or both (tilde=3)."""
    nc1 = tilde in (1, 3)
    nc2 = tilde in (2, 3)
    G1, I, A1 = _anc_factor(s1, k, nc1)
    G2, J, A2 = _anc_factor(s2, l, nc2)
    Cb = _coef2(s1, s2, b)
    Cf = _coef2(s1, s2, f, nc1, nc2)
    coef = Cb[np.ix_(A1, A2)] * Cf[np.ix_(I, J)]
    return _separable(pgrid, G1, coef, G2)


def PP(b, a, f, s1, s2, pgrid) -> GridFunction:
    """sum_{I,J} <b, h_I h_J> <f, h_I h_J> h_I^2 h_J^2 sum_{I1 in I, J1 in J strictly} <a, h_I1 h_J1> h_I1 h_J1."""
    c = _coef2(s1, s2, b) * _coef2(s1, s2, f)
    Ca = _coef2(s1, s2, a)
    D1 = s1.descendants(strict=True)
    D2 = s2.descendants(strict=True)
    E1 = (s1.H ** 2)[:, None, :] * D1[:, :, None] * s1.H[None, :, :]
    E2 = (s2.H ** 2)[:, None, :] * D2[:, :, None] * s2.H[None, :, :]
    X = np.tensordot(c, E1, axes=([0], [0]))            # [J, I1, x1]
    Y = np.tensordot(X, Ca, axes=([1], [0]))            # [J, x1, J1]
    out = np.tensordot(Y, E2, axes=([0, 2], [0, 1]))    # [x1, x2]
    return GridFunction(pgrid, out)


def BP_k(b, a2, f, k, s1, s2, pgrid, tilde: bool = False) -> GridFunction:
    G1, I, A1 = _anc_factor(s1, k, tilde)
    G2 = s2.H ** 2 * _below(s2, a2)
    Cb = _coef2(s1, s2, b)
    Cf = _coef2(s1, s2, f, nc1=tilde)
    return _separable(pgrid, G1, Cb[A1] * Cf[I], G2)


def PB_l(b, a1, f, l, s1, s2, pgrid, tilde: bool = False) -> GridFunction:
    G1 = s1.H ** 2 * _below(s1, a1)
    G2, J, A2 = _anc_factor(s2, l, tilde)
    Cb = _coef2(s1, s2, b)
    Cf = _coef2(s1, s2, f, nc2=tilde)
    return _separable(pgrid, G1, Cb[:, A2] * Cf[:, J], G2)


BIPARAMETER_FAMILIES = ("B", "B~1", "B~2", "B~3", "PP", "BP", "B~P", "PB", "PB~")


def biparameter_paraproduct(family: str, b, f, s1, s2, pgrid, k=0, l=0, a=None, a1=None, a2=None) -> GridFunction:
    _shape_check(pgrid, s1, s2)
    if family == "B":
        return B_kl(b, f, k, l, s1, s2, pgrid)
    if family in ("B~1", "B~2", "B~3"):
        return B_kl(b, f, k, l, s1, s2, pgrid, tilde=int(family[-1]))
    if family == "PP":
        return PP(b, a, f, s1, s2, pgrid)
    if family in ("BP", "B~P"):
        return BP_k(b, a2, f, k, s1, s2, pgrid, tilde=family == "B~P")
    if family in ("PB", "PB~"):
        return PB_l(b, a1, f, l, s1, s2, pgrid, tilde=family == "PB~")
    raise UsageError(f"unknown paraproduct family {family!r}; known: {BIPARAMETER_FAMILIES}")


# ---------------------------------------------------------------- martingale structure


def martingale_identity_check(f, node: int, system: HaarSystem) -> float:
    """L^2 norm on I of  sum_{J strictly above I} <f,h_J> h_J h_I + <f,h0_root> h0_root h_I - <f,h0_I> h0_I h_I.

    The root term is the coarsest-average correction: over a finite tree the
    ancestor sum telescopes to (mean over I) - (mean over the root).
    """
    if not system.internal[node]:
        raise UsageError("the identity concerns internal nodes")
    v = _vals(f)
    w = system.grid.measures
    c = system.H @ (v * w)
    lhs = np.zeros(system.grid.n)
    p = system.parent[node]
    while p >= 0:
        lhs += c[p] * system.H[p]
        p = system.parent[p]
    hI = system.H[node]
    lhs = lhs * hI + (system.H0[0] @ (v * w)) * system.H0[0] * hI
    rhs = (system.H0[node] @ (v * w)) * system.H0[node] * hI
    s = slice(system.lo[node], system.hi[node])
    d = lhs[s] - rhs[s]
    return float(np.sqrt(np.sum(d * d * w[s])))
