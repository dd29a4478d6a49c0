"""Matrix-free linear operators on weighted L^2 of the half-line and its square.

Convention for kernel tables: (T f)(x_j) = sum_k A[j, k] f(x_k) w_k with w_k the
cell measure. Under the weighted inner product the adjoint of such a table is
its transpose, so adjoints are exact.

Arrays passed to ``apply`` carry the operator's domain shape as trailing axes;
any leading axes are treated as a batch.
"""
from __future__ import annotations

import csv

import numpy as np

from .errors import ConfigError, GridMismatchError, NormConvergenceError, QuadratureConvergenceError
from .kernel import KernelConfig, kernel_integral, riesz_kernel_with_error
from .weighted_domain import GridFunction, ProductGrid, WeightedGrid

DIAGONAL_POLICIES = ("zero", "pair-cancellation", "cell-average")


class DiscreteOperator:
    """Base class. Subclasses define ``grid``, ``apply`` and ``adjoint``."""

    grid: WeightedGrid | ProductGrid

    @property
    def shape(self):
        return self.grid.shape

    def weights(self):
        return self.grid.measures

    def apply(self, f):
        raise NotImplementedError

    def adjoint(self) -> "DiscreteOperator":
        raise NotImplementedError

    def __call__(self, f):
        if isinstance(f, GridFunction):
            if not f.grid.same_as(self.grid):
                raise GridMismatchError("operator and function live on different grids")
            return f.with_values(self.apply(f.values))
        return self.apply(np.asarray(f, dtype=float))

    def __matmul__(self, other):
        return compose(self, other)

    def __add__(self, other):
        return LinComb([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return LinComb([(1.0, self), (-1.0, other)])

    def __mul__(self, c):
        return LinComb([(float(c), self)])

    __rmul__ = __mul__

    def __neg__(self):
        return LinComb([(-1.0, self)])

    def materialize(self) -> np.ndarray:
        """Dense matrix M acting on flattened node values: (Tf).ravel() = M @ f.ravel()."""
        n = int(np.prod(self.shape))
        basis = np.eye(n).reshape((n,) + tuple(self.shape))
        return self.apply(basis).reshape(n, n).T


def _check_same(a: DiscreteOperator, b: DiscreteOperator):
    if not a.grid.same_as(b.grid):
        raise GridMismatchError("operators act on different grids")


class KernelOperator(DiscreteOperator):
    """One-parameter kernel table with an explicit record of the diagonal policy."""

    def __init__(self, grid: WeightedGrid, table, diagonal_policy: str = "zero", est_error=None):
        table = np.asarray(table, dtype=float)
        if table.shape != (grid.n, grid.n):
            raise GridMismatchError(f"table shape {table.shape} does not match grid with {grid.n} cells")
        if not np.all(np.isfinite(table)):
            raise ConfigError("kernel table contains non-finite entries")
        self.grid = grid
        self.table = table
        self.diagonal_policy = diagonal_policy
        self.est_error = est_error

    def apply(self, f):
        return (f * self.grid.measures) @ self.table.T

    def adjoint(self):
        err = None if self.est_error is None else self.est_error.T
        return KernelOperator(self.grid, self.table.T, self.diagonal_policy, err)

    def materialize(self):
        return self.table * self.grid.measures


def build_riesz(grid: WeightedGrid, cfg: KernelConfig, diagonal_policy: str = "zero") -> KernelOperator:
    """Riesz transform table on the grid nodes.

    ``zero`` drops the diagonal (symmetric truncation of the principal value);
    ``pair-cancellation`` sets A[j, j] to minus the mean of the two neighbouring
    off-diagonal entries in row j. ``cell-average`` replaces every entry by the
    cell average (1/mu_k) int_{cell k} R(x_j, y) dm(y), a principal value on the
    diagonal; it costs n^2 adaptive integrals but recovers the near-diagonal mass
    the point tables drop.
    """
    if diagonal_policy not in DIAGONAL_POLICIES:
        raise ConfigError(f"unknown diagonal policy {diagonal_policy!r}; choose from {DIAGONAL_POLICIES}")
    if abs(grid.lam - cfg.lam) > 0:
        raise ConfigError("grid and kernel use different lambda")
    x = grid.nodes
    n = grid.n
    if diagonal_policy == "cell-average":
        return _cell_average_table(grid, cfg)
    J, K = np.nonzero(~np.eye(n, dtype=bool))
    try:
        vals, errs = riesz_kernel_with_error(cfg, x[J], x[K])
    except QuadratureConvergenceError as e:
        j, k = int(J[e.location]), int(K[e.location])
        raise QuadratureConvergenceError(f"{e} at table entry ({j}, {k})", residual=e.residual, location=(j, k)) from e
    table = np.zeros((n, n))
    err = np.zeros((n, n))
    table[J, K] = vals
    err[J, K] = errs
    if diagonal_policy == "pair-cancellation" and n > 1:
        left = np.r_[table[0, 1], table[np.arange(1, n), np.arange(0, n - 1)]]
        right = np.r_[table[np.arange(0, n - 1), np.arange(1, n)], table[n - 1, n - 2]]
        table[np.arange(n), np.arange(n)] = -0.5 * (left + right)
    return KernelOperator(grid, table, diagonal_policy, err)


def _cell_average_table(grid: WeightedGrid, cfg: KernelConfig) -> KernelOperator:
    b = grid.boundaries
    table = np.empty((grid.n, grid.n))
    for k in range(grid.n):
        table[:, k] = kernel_integral(cfg, grid.nodes, b[k], b[k + 1]) / grid.measures[k]
    return KernelOperator(grid, table, "cell-average")


class Identity(DiscreteOperator):
    def __init__(self, grid):
        self.grid = grid

    def apply(self, f):
        return np.array(f, dtype=float, copy=True)

    def adjoint(self):
        return self


class Multiplication(DiscreteOperator):
    def __init__(self, grid, symbol):
        symbol = symbol.values if isinstance(symbol, GridFunction) else np.asarray(symbol, dtype=float)
        if symbol.shape != tuple(grid.shape):
            raise GridMismatchError(f"symbol shape {symbol.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(symbol)):
            raise ConfigError("symbol has non-finite values")
        self.grid = grid
        self.symbol = symbol

    def apply(self, f):
        return f * self.symbol

    def adjoint(self):
        return self


def multiplication_operator(b: GridFunction) -> Multiplication:
    return Multiplication(b.grid, b.values)


class Lifted(DiscreteOperator):
    """A one-parameter operator acting on one variable of the product grid."""

    def __init__(self, op: DiscreteOperator, axis: int, pgrid: ProductGrid):
        if axis not in (1, 2):
            raise ConfigError("axis must be 1 or 2")
        factor = pgrid.g1 if axis == 1 else pgrid.g2
        if not op.grid.same_as(factor):
            raise GridMismatchError("lifted operator grid does not match the product factor")
        self.op = op
        self.axis = axis
        self.grid = pgrid

    def apply(self, f):
        if self.axis == 2:
            return self.op.apply(f)
        return np.swapaxes(self.op.apply(np.swapaxes(f, -1, -2)), -1, -2)

    def adjoint(self):
        return Lifted(self.op.adjoint(), self.axis, self.grid)


def tensor_lift(op: DiscreteOperator, axis: int, pgrid: ProductGrid) -> Lifted:
    return Lifted(op, axis, pgrid)


class Compose(DiscreteOperator):
    """ops[0] o ops[1] o ... (the last one is applied first)."""

    def __init__(self, ops):
        for o in ops[1:]:
            _check_same(ops[0], o)
        self.ops = list(ops)
        self.grid = ops[0].grid

    def apply(self, f):
        for o in reversed(self.ops):
            f = o.apply(f)
        return f

    def adjoint(self):
        return Compose([o.adjoint() for o in reversed(self.ops)])


class LinComb(DiscreteOperator):
    def __init__(self, terms):
        for _, o in terms[1:]:
            _check_same(terms[0][1], o)
        self.terms = [(float(c), o) for c, o in terms]
        self.grid = terms[0][1].grid

    def apply(self, f):
        out = None
        for c, o in self.terms:
            v = c * o.apply(f)
            out = v if out is None else out + v
        return out

    def adjoint(self):
        return LinComb([(c, o.adjoint()) for c, o in self.terms])


def compose(*ops) -> Compose:
    flat = []
    for o in ops:
        flat.extend(o.ops if isinstance(o, Compose) else [o])
    return Compose(flat)


def _as_mult(b, grid) -> Multiplication:
    if isinstance(b, Multiplication):
        return b
    if isinstance(b, GridFunction):
        return Multiplication(b.grid, b.values)
    return Multiplication(grid, b)


def operator_commutator(A: DiscreteOperator, B: DiscreteOperator) -> LinComb:
    """[A, B] = AB - BA."""
    return LinComb([(1.0, compose(A, B)), (-1.0, compose(B, A))])


def commutator(b, op: DiscreteOperator) -> LinComb:
    """[b, T] = M_b T - T M_b."""
    return operator_commutator(_as_mult(b, op.grid), op)


def iterated_commutator(b, op1: DiscreteOperator, op2: DiscreteOperator) -> LinComb:
    """[[b, T1], T2]."""
    return operator_commutator(commutator(b, op1), op2)


def weighted_norm(v, w):
    return float(np.sqrt(np.sum(v * v * w)))


def operator_norm(op: DiscreteOperator, tol: float = 1e-8, max_iter: int = 20000, seed: int = 0) -> float:
    """Largest singular value on weighted L^2 by power iteration on T*T.

    With v of unit weighted norm and rho = |Tv|^2 the Rayleigh quotient, the
    iteration stops once |T*T v - rho v| <= tol * rho. Raises
    NormConvergenceError carrying the last estimate if max_iter is reached.
    """
    w = op.weights()
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.shape)
    v /= weighted_norm(v, w)
    adj = op.adjoint()
    rho = 0.0
    for _ in range(max_iter):
        tv = op.apply(v)
        rho = float(np.sum(tv * tv * w))
        if rho == 0.0:
            return 0.0
        u = adj.apply(tv)
        if weighted_norm(u - rho * v, w) <= tol * rho:
            return float(np.sqrt(rho))
        v = u / weighted_norm(u, w)
    raise NormConvergenceError(f"power iteration did not settle within {max_iter} steps", last_estimate=float(np.sqrt(rho)))


def operator_norm_lanczos(op: DiscreteOperator, tol: float = 1e-10, seed: int = 0) -> float:
    """Largest singular value on weighted L^2 via Lanczos on W^(1/2) T*T W^(-1/2).

    The symmetrised form is self-adjoint in the Euclidean inner product, so
    ARPACK's symmetric driver applies. Independent of ``operator_norm``.
    """
    from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

    shape = tuple(op.shape)
    n = int(np.prod(shape))
    sw = np.sqrt(op.weights()).ravel()
    adj = op.adjoint()

    def mv(v):
        u = (np.ravel(v) / sw).reshape(shape)
        return (adj.apply(op.apply(u)).ravel()) * sw

    if n <= 2:
        M = np.column_stack([mv(e) for e in np.eye(n)])
        return float(np.sqrt(max(np.linalg.eigvalsh(0.5 * (M + M.T)).max(), 0.0)))
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        ev = eigsh(LinearOperator((n, n), matvec=mv, dtype=float), k=1, which="LA", tol=tol, v0=v0,
                   return_eigenvectors=False)
    except ArpackNoConvergence as e:
        last = float(np.sqrt(max(e.eigenvalues.max(), 0.0))) if len(e.eigenvalues) else None
        raise NormConvergenceError("Lanczos iteration did not converge", last_estimate=last) from e
    return float(np.sqrt(max(float(ev[0]), 0.0)))


def export_table_csv(op: KernelOperator, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["row", "col", "entry"])
        for j in range(op.table.shape[0]):
            for k in range(op.table.shape[1]):
                wr.writerow([j, k, repr(float(op.table[j, k]))])
