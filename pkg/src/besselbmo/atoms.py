"""Rectangle atoms, Whitney covers, the level-set containment check, the
Calderon-Zygmund style (1,q) -> (1,inf) atomic decomposition, and the
two-rectangle telescoping decomposition.

Two representations are used:

* ``GridFunction`` on a uniform ``ProductGrid`` with 2^K cells per axis, where
  rectangles are cell-index boxes (a0, a1, b0, b1) meaning cells
  [a0, a1) x [b0, b1) and dilates are taken in index space, clipped to the grid.
  This is where the Whitney machinery and the decomposition run.
* ``BoxFunction``: a piecewise constant function on a small tensor grid with
  arbitrary cell boundaries. Dilated rectangles 2^i R reach far beyond any fixed
  grid, so the two-rectangle construction and the weak factorization work on
  these local grids whose boundaries contain every rectangle endpoint exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (ConfigError, DecompositionInvariantError, NoComplementError, NotInH1Error,
                     PreconditionError)
from .oscillation import strong_maximal
from .weighted_domain import GridFunction, Interval, ProductGrid, Rectangle, WeightedGrid, measure_between

REL = 1e-10


# ---------------------------------------------------------------- index boxes


def box_measure(pg: ProductGrid, box) -> float:
    a0, a1, b0, b1 = box
    return float(np.sum(pg.g1.measures[a0:a1]) * np.sum(pg.g2.measures[b0:b1]))


def box_mask(shape, box) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    a0, a1, b0, b1 = box
    m[a0:a1, b0:b1] = True
    return m


def dilate_box(box, c: float, shape):
    """Concentric dilate by c in index space: cells whose midpoints fall inside, clipped."""
    a0, a1, b0, b1 = box
    e1 = 0.5 * (c - 1.0) * (a1 - a0)
    e2 = 0.5 * (c - 1.0) * (b1 - b0)
    lo1 = max(0, math.ceil(a0 - e1 - 0.5 - 1e-12))
    hi1 = min(shape[0], math.floor(a1 + e1 - 0.5 + 1e-12) + 1)
    lo2 = max(0, math.ceil(b0 - e2 - 0.5 - 1e-12))
    hi2 = min(shape[1], math.floor(b1 + e2 - 0.5 + 1e-12) + 1)
    return (lo1, hi1, lo2, hi2)


def box_rectangle(pg: ProductGrid, box) -> Rectangle:
    a0, a1, b0, b1 = box
    return Rectangle(pg.g1.cell_interval(a0, a1), pg.g2.cell_interval(b0, b1))


def bounding_box(mask):
    idx = np.argwhere(mask)
    if idx.size == 0:
        return None
    return (int(idx[:, 0].min()), int(idx[:, 0].max()) + 1, int(idx[:, 1].min()), int(idx[:, 1].max()) + 1)


def _require_dyadic_square_grid(pg: ProductGrid):
    n1, n2 = pg.shape
    if n1 != n2 or n1 & (n1 - 1):
        raise ConfigError("Whitney covers need a square grid with 2^K cells per axis")
    return n1


def dyadic_squares(n: int):
    s = n
    while s >= 1:
        for i in range(0, n, s):
            for j in range(0, n, s):
                yield (i, i + s, j, j + s)
        s //= 2


def doubling_constant_9(pg: ProductGrid) -> float:
    """C_lambda on this grid: max over index-dyadic squares of mu(9Q)/mu(Q)."""
    n = _require_dyadic_square_grid(pg)
    best = 1.0
    for q in dyadic_squares(n):
        best = max(best, box_measure(pg, dilate_box(q, 9, pg.shape)) / box_measure(pg, q))
    return best


# ---------------------------------------------------------------- atoms


@dataclass(frozen=True)
class Atom:
    support: Rectangle
    values: GridFunction
    q: float
    box: tuple | None = None


@dataclass(frozen=True)
class AtomReport:
    support_ok: bool
    size_ok: bool
    cancellation_ok: bool
    size_slack: float
    cancellation_slack: float
    norm: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.support_ok and self.size_ok and self.cancellation_ok


def _lq(values, w, q):
    if q == np.inf:
        return float(np.max(np.abs(values))) if values.size else 0.0
    return float(np.sum(np.abs(values) ** q * w) ** (1.0 / q))


def validate_atom(a: Atom, tol: float = 1e-10) -> AtomReport:
    """Support, size and cancellation checks of a rectangle atom (never raises)."""
    pg = a.values.grid
    v = a.values.values
    w = pg.measures
    mask = box_mask(pg.shape, a.box) if a.box is not None else pg.cell_mask(a.support)
    support_ok = bool(np.all(v[~mask] == 0))
    mu = float(np.sum(w[mask]))
    bound = mu ** (1.0 / a.q - 1.0) if a.q != np.inf else 1.0 / mu
    norm = _lq(v, w, a.q)
    l1 = float(np.sum(np.abs(v) * w))
    mean = abs(float(np.sum(v * w)))
    return AtomReport(
        support_ok=support_ok,
        size_ok=norm <= bound * (1 + tol),
        cancellation_ok=mean <= tol * max(l1, 1e-300),
        size_slack=bound - norm,
        cancellation_slack=tol * l1 - mean,
        norm=norm,
        bound=bound,
    )


def random_atom(pg: ProductGrid, box, q: float, rng, kind: str = "spike") -> Atom:
    """A (1,q)-atom on the index box, normalized so that |a|_q = mu(R)^(1/q - 1).

    kind 'spike' puts most of the mass on one random cell with a flat
    compensating background; 'noise' uses Gaussian values; 'split' is a two-
    valued function on the two halves of the box.
    """
    w = pg.measures
    mask = box_mask(pg.shape, box)
    v = np.zeros(pg.shape)
    a0, a1, b0, b1 = box
    if mask.sum() < 2:
        raise ConfigError(f"box {tuple(box)} has one cell; no mean-zero atom lives there")
    if kind == "spike":
        i = rng.integers(a0, a1)
        j = rng.integers(b0, b1)
        v[mask] = -1.0
        v[i, j] = 0.0
        v[mask] *= w[i, j] / np.sum(w[mask & (v != 0)])
        v[i, j] = 1.0
    elif kind == "noise":
        v[mask] = rng.standard_normal(int(mask.sum()))
    elif kind == "split":
        m = (a0 + a1) // 2 if a1 - a0 > 1 else a0 + 1
        v[a0:m, b0:b1] = 1.0
        v[m:a1, b0:b1] = -1.0
    else:
        raise ConfigError(f"unknown atom kind {kind!r}")
    v[mask] -= np.sum(v[mask] * w[mask]) / np.sum(w[mask])
    mu = float(np.sum(w[mask]))
    bound = mu ** (1.0 / q - 1.0) if q != np.inf else 1.0 / mu
    norm = _lq(v, w, q)
    if not norm > 1e-14 * np.max(np.abs(v), initial=1.0):
        raise ConfigError(f"box {tuple(box)} admits no non-trivial {kind!r} atom")
    v *= bound / norm
    return Atom(box_rectangle(pg, box), GridFunction(pg, v), q, tuple(box))


# ---------------------------------------------------------------- Whitney cover


@dataclass
class WhitneyCover:
    squares: list
    boundary_cells: int
    overlap: int
    C_tilde: float
    checks: dict = field(default_factory=dict)


def whitney_cover(U, C_tilde: float = 3.0, pg: ProductGrid | None = None) -> WhitneyCover:
    """Maximal index-dyadic squares whose C_tilde-dilate stays inside U.

    Cells of U not reached by any such square (a thin layer along the boundary
    of U at grid resolution) are added as single-cell squares.
    """
    U = np.asarray(U, dtype=bool)
    n = U.shape[0]
    if U.shape[0] != U.shape[1] or n & (n - 1):
        raise ConfigError("Whitney covers need a square grid with 2^K cells per axis")
    if C_tilde < 1:
        raise ConfigError("C_tilde must be at least 1")
    if U.all():
        raise NoComplementError("the open set is the whole grid; no Whitney cover exists")
    covered = np.zeros_like(U)
    squares = []
    for q in dyadic_squares(n):
        a0, a1, b0, b1 = q
        if covered[a0:a1, b0:b1].any() or not U[a0:a1, b0:b1].all():
            continue
        d0, d1, e0, e1 = dilate_box(q, C_tilde, U.shape)
        if U[d0:d1, e0:e1].all():
            squares.append(q)
            covered[a0:a1, b0:b1] = True
    left = np.argwhere(U & ~covered)
    for i, j in left:
        squares.append((int(i), int(i) + 1, int(j), int(j) + 1))
    count = np.zeros(U.shape, dtype=int)
    escapes = True
    for q in squares:
        d0, d1, e0, e1 = dilate_box(q, C_tilde, U.shape)
        count[d0:d1, e0:e1] += 1
        f0, f1, g0, g1 = dilate_box(q, 3 * C_tilde, U.shape)
        escapes &= bool((~U[f0:f1, g0:g1]).any())
    union = np.zeros_like(U)
    for a0, a1, b0, b1 in squares:
        union[a0:a1, b0:b1] = True
    checks = {"covers": bool(np.array_equal(union, U)), "escapes": escapes,
              "disjoint": int(sum((a1 - a0) * (b1 - b0) for a0, a1, b0, b1 in squares)) == int(U.sum())}
    return WhitneyCover(squares, int(left.shape[0]), int(count.max()) if squares else 0, C_tilde, checks)


def calibrate_overlap(pg: ProductGrid, rng, trials: int = 40, C_tilde: float = 3.0) -> int:
    """Largest Whitney overlap over random open sets (smoothed-noise level sets and discs)."""
    n = _require_dyadic_square_grid(pg)
    worst = 0
    x = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    for t in range(trials):
        if t % 2 == 0:
            z = rng.standard_normal((n, n))
            for _ in range(3):
                z = 0.25 * (np.roll(z, 1, 0) + np.roll(z, -1, 0) + np.roll(z, 1, 1) + np.roll(z, -1, 1))
            U = z > np.quantile(z, rng.uniform(0.5, 0.95))
        else:
            c = rng.uniform(0.2, 0.8, 2)
            U = (X - c[0]) ** 2 / rng.uniform(0.01, 0.1) + (Y - c[1]) ** 2 / rng.uniform(0.01, 0.1) < 1
        if U.any() and not U.all():
            worst = max(worst, whitney_cover(U, C_tilde).overlap)
    return worst


# ---------------------------------------------------------------- level-set containment


def levelset_containment_check(f: GridFunction, box, alpha: float, p: float = 1.0) -> bool:
    """Whether {M_{s,p} f > alpha} lies inside the index triple of box."""
    M = strong_maximal(f, p).values
    outside = ~box_mask(f.grid.shape, dilate_box(box, 3, f.grid.shape))
    return not bool(np.any(M[outside] > alpha))


def containment_ratio(f: GridFunction, box) -> float:
    """Smallest C making {M_s f > C m_R0(|f|)} lie inside 3 R0."""
    pg = f.grid
    w = pg.measures
    mask = box_mask(pg.shape, box)
    mean = float(np.sum(np.abs(f.values[mask]) * w[mask]) / np.sum(w[mask]))
    M = strong_maximal(f, 1.0).values
    outside = ~box_mask(pg.shape, dilate_box(box, 3, pg.shape))
    return float(M[outside].max() / mean) if outside.any() and mean > 0 else 0.0


def calibrate_C1(pg: ProductGrid, rng, trials: int = 30, max_side: int | None = None) -> float:
    """Battery calibration of the containment constant: spikes, noise and flat bumps in random boxes."""
    n1, n2 = pg.shape
    max_side = max_side or max(1, min(n1, n2) // 3)
    worst = 0.0
    for t in range(trials):
        s1 = int(rng.integers(1, max_side + 1))
        s2 = int(rng.integers(1, max_side + 1))
        a0 = int(rng.integers(0, n1 - s1 + 1))
        b0 = int(rng.integers(0, n2 - s2 + 1))
        box = (a0, a0 + s1, b0, b0 + s2)
        v = np.zeros(pg.shape)
        kind = t % 3
        if kind == 0:
            v[rng.integers(a0, a0 + s1), rng.integers(b0, b0 + s2)] = 1.0
        elif kind == 1:
            v[a0:a0 + s1, b0:b0 + s2] = np.abs(rng.standard_normal((s1, s2)))
        else:
            v[a0:a0 + s1, b0:b0 + s2] = 1.0
        worst = max(worst, containment_ratio(GridFunction(pg, v), box))
    return worst


# ---------------------------------------------------------------- (1,q) -> (1,inf) decomposition


@dataclass
class AtomicDecomposition:
    terms: list
    residual: GridFunction
    residual_norm: float

    @property
    def coefficient_sum(self) -> float:
        return float(sum(abs(c) for c, _ in self.terms))

    def reconstruct(self) -> GridFunction:
        v = self.residual.values.copy()
        for c, a in self.terms:
            v += c * a.values.values
        return self.residual.with_values(v)


@dataclass
class CZDecomposition(AtomicDecomposition):
    alpha: float = 0.0
    p: float = 0.0
    q: float = 0.0
    constants: dict = field(default_factory=dict)
    levels: list = field(default_factory=list)
    stop_reason: str = ""


@dataclass(frozen=True)
class CZConstants:
    C_lambda: float
    C1: float
    M: int

    def thresholds(self, p: float, q: float) -> dict:
        return {
            "overlap": self.M ** (1.0 / (q - 1.0)),
            "containment": self.C1 ** (1.0 / p),
            "next-level containment": 2.0 * (self.C1 * self.C_lambda) ** (1.0 / p),
            "level-set nesting": 4.0 * self.C_lambda ** (1.0 / p),
            "two": 2.0,
        }

    def alpha(self, p: float, q: float, margin: float = 1.05) -> float:
        return margin * max(self.thresholds(p, q).values())


def calibrate_cz_constants(pg: ProductGrid, seed: int = 0, trials: int = 30) -> CZConstants:
    rng = np.random.default_rng(seed)
    return CZConstants(doubling_constant_9(pg), calibrate_C1(pg, rng, trials), calibrate_overlap(pg, rng, trials))


def _check(cond, prop, level, msg):
    if not cond:
        raise DecompositionInvariantError(f"property {prop} fails at level {level}: {msg}", prop=prop, level=level)


def cz_atomic_decomposition(a: Atom, p: float, alpha_growth: float | None = None, max_level: int = 6,
                            constants: CZConstants | None = None, tol: float = 1e-8,
                            check_tol: float = 1e-9, enforce_thresholds: bool = True) -> CZDecomposition:
    """Rewrite a (1,q)-atom as a sum of (1,inf)-atoms by iterated level sets of M_{s,p}.

    With b = mu(R0) a, level n replaces every pending piece h (supported in R)
    by a bounded part g, which becomes an atom on 3R with coefficient
    M C_lambda alpha^(n+1) mu(3R), and bad parts on the Whitney squares of
    {M_{s,p} h > alpha^(n+1)}. Properties (I)-(VII) are checked at every level.
    """
    q = a.q
    if not (1 < p < q):
        raise ConfigError("need 1 < p < q")
    rep = validate_atom(a)
    if not rep.ok:
        raise PreconditionError(f"input is not a valid (1,{q})-atom: {rep}")
    pg = a.values.grid
    _require_dyadic_square_grid(pg)
    consts = constants or calibrate_cz_constants(pg)
    Cl, C1, M = consts.C_lambda, consts.C1, consts.M
    thresholds = consts.thresholds(p, q)
    alpha = consts.alpha(p, q) if alpha_growth is None else float(alpha_growth)
    failing = {k: v for k, v in thresholds.items() if not alpha > v}
    if failing and enforce_thresholds:
        raise PreconditionError(f"alpha = {alpha} is below the thresholds {failing}")
    if enforce_thresholds and alpha ** (1 - q) * M >= 1:
        raise PreconditionError("alpha^(1-q) M must be below 1")
    w = pg.measures
    box0 = a.box
    mu0 = box_measure(pg, box0)
    b = mu0 * a.values.values
    l1b = float(np.sum(np.abs(b) * w))
    Msb = strong_maximal(GridFunction(pg, b), p).values
    Cp = Cl ** (1.0 / p)
    pending = [(b, box0)]
    terms = []
    levels = []
    stop = "max-level"
    for n in range(0, max_level):
        thr = alpha ** (n + 1)
        nxt = []
        level_coef = 0.0
        for h, box in pending:
            R3 = dilate_box(box, 3, pg.shape)
            hf = GridFunction(pg, h)
            Mh = strong_maximal(hf, p).values
            U = Mh > thr
            _check(not U[~box_mask(pg.shape, R3)].any(), "I", n, "level set escapes the triple of its rectangle")
            g = h.copy()
            children = []
            if U.any():
                cover = whitney_cover(U, 3.0)
                if cover.overlap > M:
                    raise PreconditionError(f"measured Whitney overlap {cover.overlap} exceeds the calibrated M = {M}")
                for q_box in cover.squares:
                    qa0, qa1, qb0, qb1 = q_box
                    blk = h[qa0:qa1, qb0:qb1]
                    ww = w[qa0:qa1, qb0:qb1]
                    m = float(np.sum(blk * ww) / np.sum(ww))
                    dev = blk - m
                    if np.sum(np.abs(dev) * ww) <= 1e-12 * np.sum(np.abs(blk) * ww):
                        continue  # flat up to rounding: leave it in the bounded part
                    g[qa0:qa1, qb0:qb1] = m
                    child = np.zeros(pg.shape)
                    child[qa0:qa1, qb0:qb1] = dev
                    children.append((child, q_box, float(np.sum(np.abs(blk) * ww))))
            mu3 = box_measure(pg, R3)
            coef = M * Cl * thr * mu3
            av = g / coef
            atom = Atom(box_rectangle(pg, R3), GridFunction(pg, av), np.inf, R3)
            r = validate_atom(atom, tol=check_tol)
            _check(r.support_ok and r.size_ok and r.cancellation_ok, "I", n + 1, f"bounded part is not an atom: {r}")
            terms.append((coef / mu0, atom))
            level_coef += coef / mu0
            nxt.extend(children)
        lvl = n + 1
        if nxt:
            cnt = np.zeros(pg.shape, dtype=int)
            for h, box, scale in nxt:
                d = dilate_box(box, 3, pg.shape)
                cnt[d[0]:d[1], d[2]:d[3]] += 1
                m = box_mask(pg.shape, box)
                _check(np.all(h[~m] == 0), "IV", lvl, "bad part leaks outside its square")
                _check(abs(float(np.sum(h * w))) <= check_tol * max(scale, 1e-300), "V", lvl, "bad part has nonzero mean")
                bound = np.abs(b) + 2 * Cp * alpha ** lvl * m
                _check(np.all(np.abs(h) <= bound * (1 + check_tol)), "VI", lvl, "pointwise bound")
                pm = (np.sum(np.abs(h[m]) ** p * w[m]) / np.sum(w[m])) ** (1.0 / p)
                _check(pm <= 2 * Cp * alpha ** lvl * (1 + check_tol), "VII", lvl, f"p-mean {pm} too large")
                _check(np.all(Msb[m] > alpha ** lvl / 2), "II", lvl, "square outside the half level set of b")
            _check(cnt.max() <= M ** lvl, "III", lvl, f"overlap {cnt.max()} exceeds M^{lvl}")
        nxt = [(h, box) for h, box, _ in nxt]
        resid = sum((h for h, _ in nxt), np.zeros(pg.shape))
        rnorm = float(np.sum(np.abs(resid) * w)) / mu0
        levels.append({"level": lvl, "atoms": len(pending), "pieces": len(nxt), "coefficient_sum": level_coef,
                       "residual_l1": rnorm})
        pending = nxt
        if not pending:
            stop = "empty-level-set"
            break
        if rnorm * mu0 <= tol * l1b:
            stop = "residual-tolerance"
            break
    resid = sum((h for h, _ in pending), np.zeros(pg.shape)) / mu0
    res = GridFunction(pg, resid)
    return CZDecomposition(terms, res, float(np.sum(np.abs(resid) * w)), alpha=alpha, p=p, q=q,
                           constants={"C_lambda": Cl, "C1": C1, "M": M, "thresholds": thresholds},
                           levels=levels, stop_reason=stop)


# ---------------------------------------------------------------- local tensor-grid functions


def _measures(lam, edges):
    edges = np.asarray(edges, dtype=float)
    return _mseg(2.0 * lam + 1.0, edges[:-1], edges[1:])


@dataclass(frozen=True, eq=False)
class BoxFunction:
    """Piecewise constant function on the cells of a tensor grid (bx x by)."""

    lam: float
    bx: np.ndarray
    by: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.bx) - 1, len(self.by) - 1):
            raise ConfigError("values do not match the cell layout")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "bx", np.asarray(self.bx, dtype=float))
        object.__setattr__(self, "by", np.asarray(self.by, dtype=float))

    @cached_property
    def weights(self):
        return np.outer(_measures(self.lam, self.bx), _measures(self.lam, self.by))

    @cached_property
    def nodes(self):
        return 0.5 * (self.bx[1:] + self.bx[:-1]), 0.5 * (self.by[1:] + self.by[:-1])

    @property
    def rect(self) -> Rectangle:
        return Rectangle(Interval(self.bx[0], self.bx[-1]), Interval(self.by[0], self.by[-1]))

    def integral(self) -> float:
        return float(np.sum(self.values * self.weights))

    def l1(self) -> float:
        return float(np.sum(np.abs(self.values) * self.weights))

    def l2(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2 * self.weights)))

    def linf(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def scaled(self, c) -> "BoxFunction":
        return BoxFunction(self.lam, self.bx, self.by, c * self.values)

    def sample(self, bx, by) -> np.ndarray:
        """Values on a tensor grid whose cells refine this one (zero outside)."""
        ix = _cell_index(self.bx, bx)
        iy = _cell_index(self.by, by)
        out = np.zeros((len(bx) - 1, len(by) - 1))
        ok = (ix >= 0)[:, None] & (iy >= 0)[None, :]
        out[ok] = self.values[np.ix_(np.maximum(ix, 0), np.maximum(iy, 0))][ok]
        return out

    @classmethod
    def from_grid_function(cls, f: GridFunction, box) -> "BoxFunction":
        pg = f.grid
        a0, a1, b0, b1 = box
        return cls(pg.lam, pg.g1.boundaries[a0:a1 + 1], pg.g2.boundaries[b0:b1 + 1], f.values[a0:a1, b0:b1])


def _cell_index(edges, new_edges):
    """Index of the cell of `edges` containing each cell midpoint of `new_edges`, -1 outside."""
    mid = 0.5 * (np.asarray(new_edges[1:]) + np.asarray(new_edges[:-1]))
    k = np.searchsorted(edges, mid, side="right") - 1
    return np.where((mid > edges[0]) & (mid < edges[-1]), k, -1)


def union_edges(*arrays) -> np.ndarray:
    e = np.unique(np.concatenate([np.asarray(a, dtype=float) for a in arrays]))
    keep = np.r_[True, np.diff(e) > 1e-13 * np.maximum(1.0, np.abs(e[1:]))]
    return e[keep]


def interval_edges(i: Interval):
    return np.array([i.left, i.right])


def indicator(lam, rect: Rectangle, bx, by) -> np.ndarray:
    ix = np.asarray(rect.i1.contains(0.5 * (bx[1:] + bx[:-1])), dtype=float)
    iy = np.asarray(rect.i2.contains(0.5 * (by[1:] + by[:-1])), dtype=float)
    return np.outer(ix, iy)


def rect_measure(lam, rect: Rectangle) -> float:
    return float(measure_between(lam, rect.i1.left, rect.i1.right) * measure_between(lam, rect.i2.left, rect.i2.right))


# ---------------------------------------------------------------- two-rectangle decomposition


class BoxAtom:
    """A (1,inf)-atom on a rectangle; the function is built on first access."""

    __slots__ = ("support", "_f", "_build")

    def __init__(self, support: Rectangle, f: BoxFunction | None = None, build=None):
        self.support = support
        self._f = f
        self._build = build

    @property
    def f(self) -> BoxFunction:
        if self._f is None:
            self._f = self._build()
            self._build = None
        return self._f


@dataclass
class TwoRectangleDecomposition:
    coefficients: np.ndarray
    builders: list
    i0: int
    log_sum: float
    bound_shape: float
    constants: tuple

    @property
    def terms(self) -> list:
        return [(float(c), b) for c, b in zip(self.coefficients, self.builders) if c != 0]

    @property
    def coefficient_sum(self) -> float:
        return float(np.sum(np.abs(self.coefficients)))

    @property
    def ratio(self) -> float:
        return self.coefficient_sum / self.bound_shape if self.bound_shape > 0 else 0.0

    def edges(self):
        terms = self.terms
        if not terms:
            return np.array([]), np.array([])
        return union_edges(*[a.f.bx for _, a in terms]), union_edges(*[a.f.by for _, a in terms])

    def reconstruct(self, bx, by) -> np.ndarray:
        out = np.zeros((len(bx) - 1, len(by) - 1))
        for c, a in self.terms:
            out += c * a.f.sample(bx, by)
        return out


def _mseg(s, a, b):
    """Measure of (a, b) for dm = x^(s-1) dx, vectorized and without cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    safe = np.where(a > 0, a, 1.0)
    return np.where(a > 0, safe ** s * np.expm1(s * np.log1p((b - a) / safe)), b ** s) / s


def _inside(A, B) -> bool:
    """Rectangle A (l1, r1, l2, r2) contained in B."""
    return B[0] <= A[0] and A[1] <= B[1] and B[2] <= A[2] and A[3] <= B[3]


def _piecewise_two(lam, A, B, cA, cB):
    """cA * 1_A + cB * 1_B on the tensor grid cut by both rectangles."""
    def build():
        bx = np.array(sorted({A[0], A[1], B[0], B[1]}))
        by = np.array(sorted({A[2], A[3], B[2], B[3]}))
        return BoxFunction(lam, bx, by, _cells(bx, by, A) * cA + _cells(bx, by, B) * cB)
    return build


def _as_rect(t) -> Rectangle:
    return Rectangle(Interval(t[0], t[1]), Interval(t[2], t[3]))


def two_rectangle_h1_bound(R: Rectangle, Rt: Rectangle, f1: BoxFunction, f2: BoxFunction,
                           mean_tol: float = 1e-9, mean_scale: float = 0.0) -> TwoRectangleDecomposition:
    """Telescoping atomic decomposition of f = f1 + f2 with f1 on R and f2 on Rt.

    For each piece the mass is moved outward through the dilates 2^i R,
    i = 1..i0, with i0 the smallest integer at least the log-separation sum; the
    two leftover constants cancel on the joint rectangle Rbar. Atom i lives on
    2^i R and the tail atom on 2^(i0+1) R, which contains Rbar. Coefficients
    are computed in closed form from the dilate measures; the atom functions
    are only built when accessed.
    """
    lam = f1.lam
    s = 2.0 * lam + 1.0
    (x1, r1), (x2, r2) = (R.i1.center, R.i1.radius), (R.i2.center, R.i2.radius)
    (y1, s1), (y2, s2) = (Rt.i1.center, Rt.i1.radius), (Rt.i2.center, Rt.i2.radius)
    if not (np.isclose(r1, s1, rtol=1e-12) and np.isclose(r2, s2, rtol=1e-12)):
        raise PreconditionError("congruent: the rectangles must have equal radii per axis")
    if not (r1 <= min(x1, y1) * (1 + 1e-12) and r2 <= min(x2, y2) * (1 + 1e-12)):
        raise PreconditionError("radius: need r_i <= min(x0_i, y0_i)")
    d1, d2 = abs(x1 - y1), abs(x2 - y2)
    if not (d1 >= 4 * r1 * (1 - 1e-9) and d2 >= 4 * r2 * (1 - 1e-9)):
        raise PreconditionError("separation: need |x0_i - y0_i| >= 4 r_i on both axes")
    for f, rect, name in ((f1, R, "R"), (f2, Rt, "Rt")):
        if f.bx[0] < rect.i1.left - 1e-12 * rect.i1.right or f.bx[-1] > rect.i1.right * (1 + 1e-12) \
                or f.by[0] < rect.i2.left - 1e-12 * rect.i2.right or f.by[-1] > rect.i2.right * (1 + 1e-12):
            inside = indicator(lam, rect, f.bx, f.by) > 0
            if np.any(f.values[~inside] != 0):
                raise PreconditionError(f"support: the piece for {name} leaks outside it")
    w1, w2 = f1.weights, f2.weights
    total = float(np.sum(f1.values * w1) + np.sum(f2.values * w2))
    scale = max(float(np.sum(np.abs(f1.values) * w1) + np.sum(np.abs(f2.values) * w2)), mean_scale)
    if abs(total) > mean_tol * max(scale, 1e-300):
        raise PreconditionError(f"mean-zero: integral {total:.3e} vs L1 {scale:.3e}")
    log_sum = math.log2(d1 / r1) + math.log2(d2 / r2)
    i0 = max(1, math.ceil(log_sum - 1e-12))
    m1, m2 = 0.5 * (x1 + y1), 0.5 * (x2 + y2)
    rb1, rb2 = (2 ** i0 + 1) * r1, (2 ** i0 + 1) * r2
    Rbar = (max(m1 - rb1, 0.0), m1 + rb1, max(m2 - rb2, 0.0), m2 + rb2)
    mu_bar = float(_mseg(s, Rbar[0], Rbar[1]) * _mseg(s, Rbar[2], Rbar[3]))
    fac = 2.0 ** np.arange(i0 + 2)
    coefs, builders = [], []
    for f, w, (c1, c2) in ((f1, w1, (x1, x2)), (f2, w2, (y1, y2))):
        c = float(np.sum(f.values * w))
        L1 = np.maximum(c1 - fac * r1, 0.0)
        U1 = c1 + fac * r1
        L2 = np.maximum(c2 - fac * r2, 0.0)
        U2 = c2 + fac * r2
        mu = _mseg(s, L1, U1) * _mseg(s, L2, U2)
        rects = [(L1[i], U1[i], L2[i], U2[i]) for i in range(i0 + 2)]
        top = rects[i0 + 1]
        if not _inside(Rbar, top):
            raise PreconditionError("tail support: Rbar is not inside 2^(i0+1) R")
        # first term: f - c 1_{2R} / mu(2R) on 2R
        sup1 = max(float(np.max(np.abs(f.values - c / mu[1]))), abs(c) / mu[1])
        a1 = sup1 * mu[1]
        coefs.append(a1)
        builders.append(BoxAtom(_as_rect(rects[1]), build=_first_term(f, rects[1], c / mu[1], a1)))
        # middle terms: c (1_{2^(i-1)R}/mu_(i-1) - 1_{2^i R}/mu_i)
        inner = 1.0 / mu[1:i0] - 1.0 / mu[2:i0 + 1]
        sup = np.abs(c) * np.maximum(inner, 1.0 / mu[2:i0 + 1])
        am = sup * mu[2:i0 + 1]
        for k, i in enumerate(range(2, i0 + 1)):
            coefs.append(am[k])
            builders.append(BoxAtom(_as_rect(rects[i]), build=_piecewise_two(
                lam, rects[i - 1], rects[i], c / mu[i - 1] / am[k], -c / mu[i] / am[k]) if am[k] else None))
        # tail: c (1_{2^i0 R}/mu_i0 - 1_Rbar/mu_bar) on 2^(i0+1) R
        A = rects[i0]
        vals = [abs(c / mu[i0] - c / mu_bar)]
        if not _inside(A, Rbar):
            vals.append(abs(c) / mu[i0])
        if not _inside(Rbar, A):
            vals.append(abs(c) / mu_bar)
        at = max(vals) * mu[i0 + 1]
        coefs.append(at)
        builders.append(BoxAtom(_as_rect(top), build=_piecewise_tail(lam, A, Rbar, top, c / mu[i0] / at if at else 0.0,
                                                                    -c / mu_bar / at if at else 0.0)))
    C1t = f1.linf()
    C2t = f2.linf()
    shape = log_sum * (C1t * rect_measure(lam, R) + C2t * rect_measure(lam, Rt))
    return TwoRectangleDecomposition(np.array(coefs), builders, i0, log_sum, shape, (C1t, C2t))


def _first_term(f: BoxFunction, outer, shift, alpha):
    def build():
        bx = union_edges(f.bx, outer[:2])
        by = union_edges(f.by, outer[2:])
        v = f.sample(bx, by) - shift
        return BoxFunction(f.lam, bx, by, v / alpha)
    return build


def _piecewise_tail(lam, A, B, top, cA, cB):
    def build():
        bx = np.array(sorted({A[0], A[1], B[0], B[1], top[0], top[1]}))
        by = np.array(sorted({A[2], A[3], B[2], B[3], top[2], top[3]}))
        return BoxFunction(lam, bx, by, _cells(bx, by, A) * cA + _cells(bx, by, B) * cB)
    return build


def _cells(bx, by, A):
    mx = 0.5 * (bx[1:] + bx[:-1])
    my = 0.5 * (by[1:] + by[:-1])
    return np.outer((mx > A[0]) & (mx < A[1]), (my > A[2]) & (my < A[3])).astype(float)


# ---------------------------------------------------------------- h^1 upper bounds


@dataclass
class H1Upper:
    value: float
    strategy: str
    decomposition: object = None


def h1_norm_upper(f: GridFunction, strategy: str = "auto", parts=None, p: float = 1.5,
                  constants: CZConstants | None = None, tol: float = 1e-9) -> H1Upper:
    """Upper bound on the h^1 norm from an explicit atomic decomposition.

    Strategies: 'direct' (f itself times a (1,inf)-atom on its bounding box),
    'cz' (f as a multiple of a (1,2)-atom on its bounding box, then the level-set
    decomposition), 'parts' (sum of bounds of the given summands), 'auto' (the
    smallest available).
    """
    w = f.weights
    v = f.values
    l1 = float(np.sum(np.abs(v) * w))
    if l1 == 0:
        return H1Upper(0.0, "zero", None)
    if abs(float(np.sum(v * w))) > tol * l1:
        raise NotInH1Error("function lacks cancellation; its h^1 norm is infinite")
    cands = []
    box = bounding_box(v != 0)
    mu = box_measure(f.grid, box)
    if strategy in ("direct", "auto"):
        val = float(np.max(np.abs(v))) * mu
        atom = Atom(box_rectangle(f.grid, box), f.with_values(v / val), np.inf, box)
        cands.append(H1Upper(val, "direct", AtomicDecomposition([(val, atom)], f.with_values(np.zeros_like(v)), 0.0)))
    if strategy in ("cz", "auto"):
        try:
            scale = float(np.sqrt(np.sum(v * v * w))) * mu ** 0.5
            atom = Atom(box_rectangle(f.grid, box), f.with_values(v / scale), 2.0, box)
            dec = cz_atomic_decomposition(atom, p, constants=constants)
            cands.append(H1Upper(scale * (dec.coefficient_sum + dec.residual_norm), "cz", dec))
        except (PreconditionError, ConfigError, DecompositionInvariantError, NoComplementError):
            if strategy == "cz":
                raise
    if parts is not None:
        vals = [h1_norm_upper(g, "auto", None, p, constants, tol) for g in parts]
        cands.append(H1Upper(float(sum(u.value for u in vals)), "parts", vals))
    if not cands:
        raise ConfigError(f"strategy {strategy!r} produced no decomposition")
    return min(cands, key=lambda u: u.value)
