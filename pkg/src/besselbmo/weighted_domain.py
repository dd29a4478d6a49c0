"""The weighted half-line (0, inf) with dm(x) = x^(2 lam) dx and its square.

Intervals, rectangles, dyadic children, discretized grids and the weighted
inner products used by every other module live here. Grids are immutable.
"""
from __future__ import annotations

from functools import cached_property
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GridMismatchError


@dataclass(frozen=True)
class LambdaParam:
    value: float

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value > 0):
            raise ConfigError(f"lambda must be positive, got {self.value}")

    def __float__(self):
        return float(self.value)


def as_lambda(lam) -> float:
    """Accept a float or LambdaParam and return a validated float."""
    if isinstance(lam, LambdaParam):
        return lam.value
    return LambdaParam(float(lam)).value


@dataclass(frozen=True)
class Interval:
    left: float
    right: float

    def __post_init__(self):
        if not (0.0 <= self.left < self.right) or not np.isfinite(self.right):
            raise ConfigError(f"invalid interval ({self.left}, {self.right})")

    @classmethod
    def ball(cls, x: float, t: float) -> "Interval":
        """(x - t, x + t) clipped to the half-line."""
        return cls(max(x - t, 0.0), x + t)

    @property
    def center(self) -> float:
        return 0.5 * (self.left + self.right)

    @property
    def radius(self) -> float:
        return 0.5 * (self.right - self.left)

    @property
    def length(self) -> float:
        return self.right - self.left

    def dilate(self, c: float) -> "Interval":
        """Concentric dilate by factor c, clipped to the half-line."""
        return Interval.ball(self.center, c * self.radius)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x >= self.left) & (x <= self.right)


@dataclass(frozen=True)
class Rectangle:
    i1: Interval
    i2: Interval

    def dilate(self, c: float) -> "Rectangle":
        return Rectangle(self.i1.dilate(c), self.i2.dilate(c))

    @property
    def center(self):
        return (self.i1.center, self.i2.center)

    @property
    def radii(self):
        return (self.i1.radius, self.i2.radius)


def _power_gap(a, b, s):
    """b**s - a**s without cancellation for narrow [a, b]."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    pos = a > 0
    safe = np.where(pos, a, 1.0)
    gap = safe ** s * np.expm1(s * np.log1p((b - a) / safe))
    return np.where(pos, gap, b ** s)


def measure_between(lam, a, b):
    """m_lam((a, b)) = (b^(2lam+1) - a^(2lam+1)) / (2lam+1), vectorized."""
    s = 2.0 * as_lambda(lam) + 1.0
    return _power_gap(a, b, s) / s


def measure_interval(lam, i: Interval) -> float:
    return float(measure_between(lam, i.left, i.right))


def measure_rectangle(lam, r: Rectangle) -> float:
    return measure_interval(lam, r.i1) * measure_interval(lam, r.i2)


def doubling_ratio(lam, i: Interval) -> float:
    """m(I(x, 2t)) / m(I(x, t)) reading i as the ball I(x, t)."""
    return measure_interval(lam, i.dilate(2.0)) / measure_interval(lam, i)


def dyadic_children(i: Interval):
    m = i.center
    return Interval(i.left, m), Interval(m, i.right)


@dataclass(frozen=True, eq=False)
class WeightedGrid:
    """Cells [x_k, x_{k+1}] of a truncated half-line with their weighted measures."""

    lam: float
    boundaries: np.ndarray
    nodes: np.ndarray = field(init=False, repr=False)
    measures: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lam = as_lambda(self.lam)
        b = np.array(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ConfigError("a grid needs at least one cell")
        if b[0] < 0 or not np.all(np.diff(b) > 0) or not np.all(np.isfinite(b)):
            raise ConfigError("cell boundaries must be finite, non-negative and strictly increasing")
        b.setflags(write=False)
        nodes = 0.5 * (b[1:] + b[:-1])
        nodes.setflags(write=False)
        w = measure_between(lam, b[:-1], b[1:])
        w.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "measures", w)

    @classmethod
    def uniform(cls, lam, x_min: float, x_max: float, cells: int) -> "WeightedGrid":
        return cls(lam, np.linspace(x_min, x_max, int(cells) + 1))

    @classmethod
    def geometric(cls, lam, x_min: float, x_max: float, cells: int) -> "WeightedGrid":
        if x_min <= 0:
            raise ConfigError("geometric spacing needs x_min > 0")
        return cls(lam, np.geomspace(x_min, x_max, int(cells) + 1))

    @classmethod
    def from_spec(cls, spec: dict) -> "WeightedGrid":
        try:
            lam = float(spec["lambda"])
            x_min = float(spec["x_min"])
            x_max = float(spec["x_max"])
            cells = int(spec["cells"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid spec {spec!r}: {exc}") from exc
        spacing = spec.get("spacing", "geometric")
        if cells < 1 or x_max <= x_min:
            raise ConfigError(f"bad grid spec {spec!r}")
        if spacing == "uniform":
            return cls.uniform(lam, x_min, x_max, cells)
        if spacing == "geometric":
            return cls.geometric(lam, x_min, x_max, cells)
        raise ConfigError(f"unknown spacing {spacing!r}")

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def shape(self):
        return (self.n,)

    @property
    def domain(self) -> Interval:
        return Interval(float(self.boundaries[0]), float(self.boundaries[-1]))

    def total_measure(self) -> float:
        return measure_interval(self.lam, self.domain)

    def cell_mask(self, i: Interval) -> np.ndarray:
        """Cells whose midpoint lies in the closed interval."""
        return i.contains(self.nodes)

    def cell_interval(self, lo: int, hi: int) -> Interval:
        """Interval spanned by cells lo..hi-1."""
        return Interval(float(self.boundaries[lo]), float(self.boundaries[hi]))

    def refine(self) -> "WeightedGrid":
        """Split every cell at its midpoint."""
        b = self.boundaries
        out = np.empty(2 * b.size - 1)
        out[0::2] = b
        out[1::2] = self.nodes
        return WeightedGrid(self.lam, out)

    def same_as(self, other) -> bool:
        return (
            isinstance(other, WeightedGrid)
            and self.lam == other.lam
            and self.boundaries.shape == other.boundaries.shape
            and np.array_equal(self.boundaries, other.boundaries)
        )


@dataclass(frozen=True, eq=False)
class ProductGrid:
    g1: WeightedGrid
    g2: WeightedGrid

    def __post_init__(self):
        if self.g1.lam != self.g2.lam:
            raise ConfigError("both factors must share lambda")

    @property
    def lam(self) -> float:
        return self.g1.lam

    @property
    def shape(self):
        return (self.g1.n, self.g2.n)

    @cached_property
    def measures(self) -> np.ndarray:
        w = np.outer(self.g1.measures, self.g2.measures)
        w.setflags(write=False)
        return w

    def total_measure(self) -> float:
        return self.g1.total_measure() * self.g2.total_measure()

    def cell_mask(self, r: Rectangle) -> np.ndarray:
        return np.outer(self.g1.cell_mask(r.i1), self.g2.cell_mask(r.i2))

    def refine(self) -> "ProductGrid":
        return ProductGrid(self.g1.refine(), self.g2.refine())

    def same_as(self, other) -> bool:
        return isinstance(other, ProductGrid) and self.g1.same_as(other.g1) and self.g2.same_as(other.g2)


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: object
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != tuple(self.grid.shape):
            raise GridMismatchError(f"values of shape {v.shape} on a grid of shape {self.grid.shape}")
        object.__setattr__(self, "values", v)

    @property
    def weights(self) -> np.ndarray:
        return self.grid.measures

    def integral(self) -> float:
        return float(np.sum(self.values * self.weights))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)


def _check_same(f: GridFunction, g: GridFunction):
    if not f.grid.same_as(g.grid):
        raise GridMismatchError("grid functions live on different grids")


def weighted_inner_product(f: GridFunction, g: GridFunction) -> float:
    _check_same(f, g)
    return float(np.sum(f.values * g.values * f.weights))


def lp_norm(f: GridFunction, p: float = 2.0) -> float:
    if p == np.inf:
        return float(np.max(np.abs(f.values))) if f.values.size else 0.0
    if p < 1:
        raise ConfigError("p must be at least 1")
    return float(np.sum(np.abs(f.values) ** p * f.weights) ** (1.0 / p))
