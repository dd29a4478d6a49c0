import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from besselbmo.errors import ConfigError, GridMismatchError, NormConvergenceError
from besselbmo.kernel import KernelConfig, riesz_kernel
from besselbmo.operators import (Identity, KernelOperator, Multiplication, build_riesz, commutator,
                                 export_table_csv, iterated_commutator, operator_commutator, operator_norm,
                                 operator_norm_lanczos, tensor_lift)
from besselbmo.weighted_domain import GridFunction, ProductGrid, WeightedGrid


def grid(n=12, lam=1.0):
    return WeightedGrid.geometric(lam, 0.3, 3.0, n)


def wip(u, v, w):
    return float(np.sum(u * v * w))


def dense_norm(op):
    """Oracle: SVD of W^(1/2) M W^(-1/2)."""
    sw = np.sqrt(op.weights()).ravel()
    M = op.materialize()
    return float(np.linalg.svd(sw[:, None] * M / sw[None, :], compute_uv=False)[0])


def random_table(rng, n):
    return rng.standard_normal((n, n))


@pytest.mark.parametrize("policy", ["zero", "pair-cancellation", "cell-average"])
def test_riesz_adjoint_identity(policy, rng):
    g = grid(10)
    T = build_riesz(g, KernelConfig(1.0), policy)
    f, h = rng.standard_normal(10), rng.standard_normal(10)
    w = g.measures
    assert wip(T(f), h, w) == pytest.approx(wip(f, T.adjoint()(h), w), rel=1e-12)


def test_zero_policy_entries_are_kernel_values():
    g = grid(6)
    cfg = KernelConfig(1.0)
    T = build_riesz(g, cfg, "zero")
    x = g.nodes
    assert T.table[1, 4] == pytest.approx(riesz_kernel(cfg, x[1], x[4]), rel=1e-14)
    assert np.all(np.diag(T.table) == 0)


def test_pair_cancellation_diagonal():
    g = grid(6)
    T = build_riesz(g, KernelConfig(1.0), "pair-cancellation")
    A = T.table
    assert A[2, 2] == pytest.approx(-0.5 * (A[2, 1] + A[2, 3]))


def test_cell_average_matches_kernel_far_from_diagonal():
    # for cells far from row j the cell average is close to the point value
    g = WeightedGrid.geometric(1.0, 0.1, 10.0, 40)
    cfg = KernelConfig(1.0)
    C = build_riesz(g, cfg, "cell-average").table
    Z = build_riesz(g, cfg, "zero").table
    assert C[0, 39] == pytest.approx(Z[0, 39], rel=0.05)
    assert np.all(np.isfinite(C))


def test_cell_average_on_constants():
    # T applied to the indicator of the grid domain equals the Riesz transform of that indicator at the nodes
    from besselbmo.kernel import riesz_of_indicator
    g = grid(16)
    cfg = KernelConfig(1.0)
    T = build_riesz(g, cfg, "cell-average")
    ref = np.array([riesz_of_indicator(cfg, x, g.boundaries[0], g.boundaries[-1]) for x in g.nodes])
    np.testing.assert_allclose(T(np.ones(16)), ref, rtol=1e-8, atol=1e-10)


def test_bad_policy_and_lambda():
    with pytest.raises(ConfigError):
        build_riesz(grid(4), KernelConfig(1.0), "nearest")
    with pytest.raises(ConfigError):
        build_riesz(grid(4), KernelConfig(2.0))


def test_table_shape_and_finiteness_checked():
    g = grid(4)
    with pytest.raises(GridMismatchError):
        KernelOperator(g, np.zeros((3, 3)))
    with pytest.raises(ConfigError):
        KernelOperator(g, np.full((4, 4), np.nan))


def test_grid_mismatch_on_apply():
    g = grid(4)
    T = KernelOperator(g, np.eye(4))
    with pytest.raises(GridMismatchError):
        T(GridFunction(grid(5), np.ones(5)))


@given(st.integers(0, 2 ** 31 - 1))
def test_commutator_leibniz_identity(seed):
    # [ab, T] = a[b, T] + [a, T]b
    rng = np.random.default_rng(seed)
    g = grid(7)
    T = KernelOperator(g, random_table(rng, 7))
    a, b, f = rng.standard_normal((3, 7))
    lhs = commutator(a * b, T)(f)
    rhs = a * commutator(b, T)(f) + commutator(a, T)(b * f)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * (1 + np.abs(lhs).max()))


@given(st.integers(0, 2 ** 31 - 1))
def test_iterated_commutator_expansion(seed):
    # [[b, T1], T2] = b T1 T2 - T1 b T2 - T2 b T1 + T2 T1 b
    rng = np.random.default_rng(seed)
    g = grid(6)
    T1, T2 = (KernelOperator(g, random_table(rng, 6)) for _ in range(2))
    b, f = rng.standard_normal((2, 6))
    got = iterated_commutator(b, T1, T2)(f)
    ref = b * T1(T2(f)) - T1(b * T2(f)) - T2(b * T1(f)) + T2(T1(b * f))
    np.testing.assert_allclose(got, ref, atol=1e-11 * (1 + np.abs(ref).max()))


def test_commutator_with_constant_vanishes(rng):
    g = grid(8)
    T = build_riesz(g, KernelConfig(1.0), "zero")
    f = rng.standard_normal(8)
    assert np.abs(commutator(np.full(8, 3.0), T)(f)).max() < 1e-12


def test_lifted_operators_commute(rng):
    g1, g2 = grid(5), grid(6)
    pg = ProductGrid(g1, g2)
    T1 = tensor_lift(KernelOperator(g1, random_table(rng, 5)), 1, pg)
    T2 = tensor_lift(KernelOperator(g2, random_table(rng, 6)), 2, pg)
    f = rng.standard_normal(pg.shape)
    assert np.abs(operator_commutator(T1, T2)(f)).max() < 1e-11
    h = rng.standard_normal(pg.shape)
    w = pg.measures
    assert wip(T1(f), h, w) == pytest.approx(wip(f, T1.adjoint()(h), w), rel=1e-12)


def test_lifted_acts_along_axis(rng):
    g1, g2 = grid(4), grid(3)
    pg = ProductGrid(g1, g2)
    A = KernelOperator(g1, random_table(rng, 4))
    f = rng.standard_normal(pg.shape)
    got = tensor_lift(A, 1, pg)(f)
    for j in range(3):
        np.testing.assert_allclose(got[:, j], A(f[:, j]), rtol=1e-13)


def test_algebra_and_materialize(rng):
    g = grid(5)
    A = KernelOperator(g, random_table(rng, 5))
    B = Multiplication(g, rng.standard_normal(5))
    f = rng.standard_normal(5)
    np.testing.assert_allclose((A @ B)(f), A(B(f)))
    np.testing.assert_allclose((2 * A - B)(f), 2 * A(f) - B(f))
    np.testing.assert_allclose((-A)(f), -A(f))
    np.testing.assert_allclose(A.materialize() @ f, A(f))
    np.testing.assert_allclose((A + Identity(g))(f), A(f) + f)


@given(st.integers(0, 2 ** 31 - 1), st.integers(3, 14))
def test_norm_routes_agree(seed, n):
    # dual route: power iteration and Lanczos, both checked against a dense SVD
    rng = np.random.default_rng(seed)
    g = WeightedGrid.geometric(1.0, 0.5, 4.0, n)
    op = KernelOperator(g, random_table(rng, n))
    ref = dense_norm(op)
    assert operator_norm_lanczos(op, seed=seed % 97) == pytest.approx(ref, rel=1e-8)
    assert operator_norm(op, tol=1e-12, max_iter=200000, seed=seed % 97) == pytest.approx(ref, rel=1e-5)


def test_norm_of_riesz_commutator_routes(rng):
    g = grid(16)
    T = build_riesz(g, KernelConfig(1.0), "cell-average")
    C = commutator(np.log(g.nodes), T)
    a, b = operator_norm(C, tol=1e-11), operator_norm_lanczos(C)
    assert a == pytest.approx(b, rel=1e-6)
    assert b == pytest.approx(dense_norm(C), rel=1e-8)


def test_norm_small_and_zero():
    g = grid(2)
    op = KernelOperator(g, np.diag([1.0, 3.0]) / g.measures)
    assert operator_norm_lanczos(op) == pytest.approx(dense_norm(op), rel=1e-12)
    assert operator_norm(KernelOperator(g, np.zeros((2, 2)))) == 0.0


def test_norm_convergence_error(rng):
    g = grid(10)
    op = KernelOperator(g, random_table(rng, 10))
    with pytest.raises(NormConvergenceError) as e:
        operator_norm(op, tol=1e-15, max_iter=2)
    assert e.value.last_estimate > 0


def test_export_table_csv(tmp_path):
    g = grid(3)
    op = build_riesz(g, KernelConfig(1.0), "zero")
    p = tmp_path / "t.csv"
    export_table_csv(op, p)
    text = p.read_text()
    assert len(text.strip().splitlines()) >= 9
