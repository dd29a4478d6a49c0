"""Mean-oscillation norms over intervals and rectangles, dyadic product BMO and
strong maximal functions.

Intervals are half-open cell-index ranges [lo, hi). The default family is
every such range when the axis has at most ``cap`` cells, and otherwise the
index-dyadic ranges together with their translates by half a length.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigError, DegenerateRegionError
from .haar import HaarSystem, build_haar
from .weighted_domain import GridFunction, Interval, ProductGrid, Rectangle, WeightedGrid

DEFAULT_CAP = 64


@dataclass(frozen=True)
class OscillationEstimate:
    norm_value: float
    argmax_region: object
    family_spec: dict
    argmax_cells: tuple = ()
    details: dict = field(default_factory=dict)


def _vals(f):
    return f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)


def mean_over(b: GridFunction, region) -> float:
    """Measure-weighted mean of b over the cells selected by region.

    region may be an Interval, a Rectangle or a boolean cell mask.
    """
    if isinstance(region, (Interval, Rectangle)):
        mask = b.grid.cell_mask(region)
    else:
        mask = np.asarray(region, dtype=bool)
    w = b.weights
    mu = float(np.sum(w[mask]))
    if mu <= 0:
        raise DegenerateRegionError(f"region {region!r} has zero discrete measure")
    return float(np.sum(b.values[mask] * w[mask]) / mu)


# ---------------------------------------------------------------- interval families


def exhaustive_ranges(n: int):
    lo, hi = np.triu_indices(n + 1, k=1)
    return lo, hi


def dyadic_shift_ranges(n: int):
    """Index-dyadic ranges plus their half-length translates (kept inside [0, n))."""
    out = set()
    stack = [(0, n)]
    while stack:
        a, b = stack.pop()
        out.add((a, b))
        L = b - a
        s = L // 2
        if s >= 1 and b + s <= n:
            out.add((a + s, b + s))
        if L >= 2:
            m = (a + b) // 2
            stack += [(a, m), (m, b)]
    arr = np.array(sorted(out))
    return arr[:, 0], arr[:, 1]


def interval_family(n: int, family: dict | None = None):
    family = dict(family or {})
    mode = family.get("mode", "auto")
    cap = int(family.get("cap", DEFAULT_CAP))
    if mode == "auto":
        mode = "exhaustive" if n <= cap else "dyadic-shift"
    if mode == "exhaustive":
        lo, hi = exhaustive_ranges(n)
    elif mode == "dyadic-shift":
        lo, hi = dyadic_shift_ranges(n)
    else:
        raise ConfigError(f"unknown interval family mode {mode!r}")
    return lo, hi, {"mode": mode, "cap": cap, "count": int(lo.size)}


# ---------------------------------------------------------------- oscillation sweeps


@numba.njit(cache=True)
def _rect_osc_sup(v, w1, w2, lo1, hi1, lo2, hi2, use_l2):
    n1, n2 = v.shape
    c1 = np.zeros(n1 + 1)
    c2 = np.zeros(n2 + 1)
    for i in range(n1):
        c1[i + 1] = c1[i] + w1[i]
    for j in range(n2):
        c2[j + 1] = c2[j] + w2[j]
    P = np.zeros((n1 + 1, n2 + 1))
    Q = np.zeros((n1 + 1, n2 + 1))
    for i in range(n1):
        for j in range(n2):
            ww = w1[i] * w2[j]
            P[i + 1, j + 1] = P[i, j + 1] + P[i + 1, j] - P[i, j] + v[i, j] * ww
            Q[i + 1, j + 1] = Q[i, j + 1] + Q[i + 1, j] - Q[i, j] + v[i, j] * v[i, j] * ww
    best = 0.0
    bi = 0
    bj = 0
    for a in range(lo1.size):
        A0 = lo1[a]
        A1 = hi1[a]
        m1 = c1[A1] - c1[A0]
        for b in range(lo2.size):
            B0 = lo2[b]
            B1 = hi2[b]
            mu = m1 * (c2[B1] - c2[B0])
            s = P[A1, B1] - P[A0, B1] - P[A1, B0] + P[A0, B0]
            m = s / mu
            q = Q[A1, B1] - Q[A0, B1] - Q[A1, B0] + Q[A0, B0]
            var = q / mu - m * m
            sd = np.sqrt(var) if var > 0 else 0.0
            if use_l2:
                val = sd
            else:
                # mean |v - m| <= root variance: skip rectangles that cannot win
                if sd * (1.0 + 1e-9) + 1e-300 <= best:
                    continue
                acc = 0.0
                for i in range(A0, A1):
                    wi = w1[i]
                    for j in range(B0, B1):
                        acc += abs(v[i, j] - m) * wi * w2[j]
                val = acc / mu
            if val > best:
                best = val
                bi = a
                bj = b
    return best, bi, bj


def _osc_sweep(v, w1, w2, fam1, fam2, norm):
    if norm not in ("L1", "L2"):
        raise ConfigError("norm must be 'L1' or 'L2'")
    lo1, hi1, spec1 = fam1
    lo2, hi2, spec2 = fam2
    best, a, b = _rect_osc_sup(np.ascontiguousarray(v, dtype=float), w1, w2,
                               lo1.astype(np.int64), hi1.astype(np.int64),
                               lo2.astype(np.int64), hi2.astype(np.int64), norm == "L2")
    return float(best), (int(lo1[a]), int(hi1[a])), (int(lo2[b]), int(hi2[b])), spec1, spec2


def bmo_one_param(b: GridFunction, family: dict | None = None, norm: str = "L1") -> OscillationEstimate:
    """sup over the interval family of the mean oscillation of b."""
    g = b.grid
    fam = interval_family(g.n, family)
    one = (np.array([0]), np.array([1]), {})
    best, (lo, hi), _, spec, _ = _osc_sweep(b.values[:, None], g.measures, np.ones(1), fam, one, norm)
    return OscillationEstimate(best, g.cell_interval(lo, hi), dict(spec, norm=norm), ((lo, hi),))


def little_bmo(b: GridFunction, family: dict | None = None, norm: str = "L1") -> OscillationEstimate:
    """sup over rectangles (products of the per-axis families) of the mean oscillation."""
    pg: ProductGrid = b.grid
    fam1 = interval_family(pg.g1.n, family)
    fam2 = interval_family(pg.g2.n, family)
    best, r1, r2, s1, s2 = _osc_sweep(b.values, pg.g1.measures, pg.g2.measures, fam1, fam2, norm)
    rect = Rectangle(pg.g1.cell_interval(*r1), pg.g2.cell_interval(*r2))
    return OscillationEstimate(best, rect, {"axis1": s1, "axis2": s2, "norm": norm}, (r1, r2))


def axis_bmo(b: GridFunction, axis: int, family: dict | None = None) -> float:
    """max over the other coordinate of the one-parameter BMO norm along the given axis."""
    if axis not in (1, 2):
        raise ConfigError("axis must be 1 or 2")
    pg: ProductGrid = b.grid
    g = pg.g1 if axis == 1 else pg.g2
    v = b.values if axis == 1 else b.values.T
    fam = interval_family(g.n, family)
    one = (np.array([0]), np.array([1]), {})
    return float(max(_osc_sweep(v[:, j][:, None], g.measures, np.ones(1), fam, one, "L1")[0]
                     for j in range(v.shape[1])))


def slice_sup_bmo(b: GridFunction, family: dict | None = None) -> float:
    """max over x1 of the BMO norm of b(x1, .) plus max over x2 of that of b(., x2)."""
    return axis_bmo(b, 1, family) + axis_bmo(b, 2, family)


# ---------------------------------------------------------------- dyadic product BMO


def _systems(pg: ProductGrid, max_depth, systems):
    if systems is not None:
        return systems
    d1 = None if max_depth is None else min(int(max_depth), int(np.ceil(np.log2(max(pg.g1.n, 2)))))
    d2 = None if max_depth is None else min(int(max_depth), int(np.ceil(np.log2(max(pg.g2.n, 2)))))
    return build_haar(pg.g1, d1), build_haar(pg.g2, d2)


def haar_coefficients_2d(b, s1: HaarSystem, s2: HaarSystem) -> np.ndarray:
    w = np.outer(s1.grid.measures, s2.grid.measures)
    return s1.H @ (_vals(b) * w) @ s2.H.T


def square_function_sq(C, s1: HaarSystem, s2: HaarSystem, inside=None) -> np.ndarray:
    """sum over node pairs of C^2 chi_R / mu(R), optionally only over pairs with inside True."""
    E = C ** 2 / np.outer(s1.node_measure, s2.node_measure)
    if inside is not None:
        E = np.where(inside, E, 0.0)
    return s1.cell_indicator().T @ E @ s2.cell_indicator()


def rectangles_inside(mask, s1: HaarSystem, s2: HaarSystem) -> np.ndarray:
    """inside[I, J] is True when every cell of I x J belongs to the mask."""
    m = np.asarray(mask, dtype=float)
    P = np.zeros((m.shape[0] + 1, m.shape[1] + 1))
    P[1:, 1:] = m.cumsum(0).cumsum(1)
    a0, a1 = s1.lo[:, None], s1.hi[:, None]
    b0, b1 = s2.lo[None, :], s2.hi[None, :]
    cnt = P[a1, b1] - P[a0, b1] - P[a1, b0] + P[a0, b0]
    area = (a1 - a0) * (b1 - b0)
    return cnt == area


def product_bmo_dyadic(b: GridFunction, max_depth: int | None = None, levels: int = 128,
                       systems=None) -> OscillationEstimate:
    """Haar-Carleson sup over (a) dyadic rectangles and (b) level sets of the square function.

    Value is sqrt(sup_Omega (1/mu(Omega)) sum_{R in Omega} <b, h_I h_J>^2).
    """
    pg: ProductGrid = b.grid
    s1, s2 = _systems(pg, max_depth, systems)
    C = haar_coefficients_2d(b, s1, s2)
    C2 = C ** 2
    D1 = s1.descendants(strict=False)
    D2 = s2.descendants(strict=False)
    rect = D1 @ C2 @ D2.T / np.outer(s1.node_measure, s2.node_measure)
    i, j = np.unravel_index(int(np.argmax(rect)), rect.shape)
    best = float(rect[i, j])
    region = Rectangle(s1.interval(i), s2.interval(j))
    label = "dyadic-rectangle"
    nodes = (int(i), int(j))
    S = square_function_sq(C, s1, s2)
    w = pg.measures
    thresholds = np.unique(np.quantile(S[S > 0], np.linspace(0.0, 1.0, levels))) if np.any(S > 0) else []
    for t in thresholds:
        mask = S >= t
        mu = float(np.sum(w[mask]))
        val = float(np.sum(C2[rectangles_inside(mask, s1, s2)])) / mu
        if val > best:
            best, region, label, nodes = val, mask, "square-function-level-set", (float(t),)
    return OscillationEstimate(float(np.sqrt(best)), region,
                               {"families": ["dyadic-rectangle", "square-function-level-set"],
                                "levels": int(len(thresholds)), "depths": (s1.depth, s2.depth)},
                               nodes, {"achieved_by": label})


def carleson_value(b, mask, s1: HaarSystem, s2: HaarSystem) -> float:
    """sqrt((1/mu(Omega)) sum_{R in Omega} <b, h_I h_J>^2) for one cell set Omega."""
    C = haar_coefficients_2d(b, s1, s2)
    w = np.outer(s1.grid.measures, s2.grid.measures)
    mu = float(np.sum(w[np.asarray(mask, dtype=bool)]))
    if mu <= 0:
        raise DegenerateRegionError("empty open set")
    return float(np.sqrt(np.sum(C[rectangles_inside(mask, s1, s2)] ** 2) / mu))


def john_nirenberg_square_function(b, p: float, mask, s1: HaarSystem, s2: HaarSystem, bmo_norm: float | None = None):
    """(|S_Omega b|_p, |b| mu(Omega)^(1/p)) with S_Omega the square function restricted to R in Omega."""
    if not 1 < p < np.inf:
        raise ConfigError("p must lie in (1, inf)")
    mask = np.asarray(mask, dtype=bool)
    C = haar_coefficients_2d(b, s1, s2)
    S = np.sqrt(square_function_sq(C, s1, s2, inside=rectangles_inside(mask, s1, s2)))
    w = np.outer(s1.grid.measures, s2.grid.measures)
    lhs = float(np.sum(S ** p * w) ** (1.0 / p))
    if bmo_norm is None:
        pg = ProductGrid(s1.grid, s2.grid)
        bmo_norm = product_bmo_dyadic(GridFunction(pg, _vals(b)), systems=(s1, s2)).norm_value
    return lhs, float(bmo_norm * np.sum(w[mask]) ** (1.0 / p))


# ---------------------------------------------------------------- strong maximal function


def _interval_max_1d(G, c2, lo2, hi2, n2):
    """For each row of G (batch, n2) the max over family intervals containing k of the mean."""
    P = np.concatenate([np.zeros((G.shape[0], 1)), np.cumsum(G, axis=1)], axis=1)
    avg = (P[:, hi2] - P[:, lo2]) / (c2[hi2] - c2[lo2])
    out = np.full((G.shape[0], n2), -np.inf)
    for t in range(lo2.size):
        s = slice(lo2[t], hi2[t])
        out[:, s] = np.maximum(out[:, s], avg[:, t:t + 1])
    return out


def _interval_max_exhaustive(G, c2, n2):
    """Same as _interval_max_1d for the family of all ranges, in O(n2^2) per row."""
    P = np.concatenate([np.zeros((G.shape[0], 1)), np.cumsum(G, axis=1)], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        A = (P[:, None, :] - P[:, :, None]) / (c2[None, None, :] - c2[None, :, None])
    lo, hi = np.meshgrid(np.arange(n2 + 1), np.arange(n2 + 1), indexing="ij")
    A = np.where(hi[None] > lo[None], A, -np.inf)           # A[r, lo, hi]
    S = np.maximum.accumulate(A[:, :, ::-1], axis=2)[:, :, ::-1]   # max over hi' >= hi
    S = S[:, :, 1:]                                          # S[r, lo, k] = max_{hi > k}
    M = np.maximum.accumulate(S, axis=1)                     # max over lo' <= lo
    return M[:, np.arange(n2), np.arange(n2)]


def strong_maximal(f: GridFunction, p: float = 1.0, family: dict | None = None) -> GridFunction:
    """Per node, sup over family rectangles containing it of (mean of |f|^p)^(1/p)."""
    if p < 1:
        raise ConfigError("p must be at least 1")
    pg: ProductGrid = f.grid
    g = np.abs(f.values) ** p
    n1, n2 = pg.shape
    w1, w2 = pg.g1.measures, pg.g2.measures
    lo1, hi1, _ = interval_family(n1, family)
    lo2, hi2, spec2 = interval_family(n2, family)
    c1 = np.r_[0.0, np.cumsum(w1)]
    c2 = np.r_[0.0, np.cumsum(w2)]
    P1 = np.concatenate([np.zeros((1, n2)), np.cumsum(g * w1[:, None], axis=0)], axis=0)
    G = (P1[hi1] - P1[lo1]) / (c1[hi1] - c1[lo1])[:, None] * w2[None, :]
    if spec2["mode"] == "exhaustive":
        M = _interval_max_exhaustive(G, c2, n2)
    else:
        M = _interval_max_1d(G, c2, lo2, hi2, n2)
    out = np.zeros((n1, n2))
    for t in range(lo1.size):
        s = slice(lo1[t], hi1[t])
        out[s] = np.maximum(out[s], M[t])
    return f.with_values(out ** (1.0 / p))
