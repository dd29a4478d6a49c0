import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from besselbmo.errors import ConfigError, GridMismatchError
from besselbmo.weighted_domain import (GridFunction, Interval, LambdaParam, ProductGrid, Rectangle, WeightedGrid,
                                       doubling_ratio, lp_norm, measure_between, measure_interval,
                                       measure_rectangle, weighted_inner_product)

lams = st.floats(0.05, 4.0)
pos = st.floats(1e-3, 50.0)


def test_lambda_must_be_positive():
    for bad in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(ConfigError):
            LambdaParam(bad)


def test_measure_closed_form():
    # m((a, b)) = (b^3 - a^3) / 3 for lambda = 1
    assert measure_between(1.0, 1.0, 2.0) == pytest.approx(7.0 / 3.0, rel=1e-15)
    assert measure_between(0.5, 0.0, 3.0) == pytest.approx(4.5, rel=1e-15)


def test_measure_narrow_interval_no_cancellation():
    a = 1e4
    b = a + 1e-9
    h = b - a  # the representable width
    assert float(measure_between(1.5, a, b)) == pytest.approx(a ** 3 * h, rel=1e-8)


@given(lams, pos, pos, pos)
def test_measure_additive(lam, a, d1, d2):
    b, c = a + d1, a + d1 + d2
    total = measure_between(lam, a, c)
    assert measure_between(lam, a, b) + measure_between(lam, b, c) == pytest.approx(total, rel=1e-11)


@given(lams, pos, st.floats(0.1, 20.0))
def test_measure_scaling(lam, x, t):
    i = Interval(x, 2 * x)
    j = Interval(t * x, 2 * t * x)
    assert measure_interval(lam, j) == pytest.approx(t ** (2 * lam + 1) * measure_interval(lam, i), rel=1e-11)


@given(lams, pos, pos)
def test_doubling_ratio_bounds(lam, x, t):
    r = doubling_ratio(lam, Interval.ball(x, t))
    # balls are clipped at 0, so only r >= 1 holds from below
    assert 1.0 <= r <= 2.0 ** (2 * lam + 1) * (1 + 1e-9)


def test_interval_rejects_bad_endpoints():
    with pytest.raises(ConfigError):
        Interval(2.0, 1.0)
    with pytest.raises(ConfigError):
        Interval(-1.0, 1.0)


def test_rectangle_measure_is_product():
    r = Rectangle(Interval(1, 2), Interval(0, 1))
    assert measure_rectangle(1.0, r) == pytest.approx(7.0 / 3.0 * 1.0 / 3.0)


def test_grid_measures_sum_to_total():
    g = WeightedGrid.geometric(2.0, 0.1, 7.0, 37)
    assert g.measures.sum() == pytest.approx(g.total_measure(), rel=1e-13)
    assert np.all(g.measures > 0)


def test_grid_refine_splits_cells():
    g = WeightedGrid.uniform(1.0, 0.0, 2.0, 8)
    r = g.refine()
    assert r.n == 16
    np.testing.assert_allclose(r.measures[0::2] + r.measures[1::2], g.measures, rtol=1e-14)


def test_grid_from_spec_errors():
    with pytest.raises(ConfigError):
        WeightedGrid.from_spec({"lambda": 1, "x_min": 0.0, "x_max": 1, "cells": 4, "spacing": "geometric"})
    with pytest.raises(ConfigError):
        WeightedGrid.from_spec({"lambda": 1, "x_min": 1.0, "x_max": 2, "cells": 4, "spacing": "spiral"})
    with pytest.raises(ConfigError):
        WeightedGrid.from_spec({"lambda": 1, "x_min": 1.0})


def test_grids_are_immutable():
    g = WeightedGrid.uniform(1.0, 0.0, 1.0, 4)
    with pytest.raises(ValueError):
        g.measures[0] = 1.0


def test_inner_product_and_norm(rng):
    g = WeightedGrid.uniform(1.0, 0.5, 2.0, 9)
    pg = ProductGrid(g, g)
    f = GridFunction(pg, rng.standard_normal(pg.shape))
    assert weighted_inner_product(f, f) == pytest.approx(lp_norm(f, 2) ** 2, rel=1e-13)
    one = GridFunction(pg, np.ones(pg.shape))
    assert lp_norm(one, 1) == pytest.approx(pg.total_measure(), rel=1e-13)


def test_mismatched_grids_rejected():
    a = WeightedGrid.uniform(1.0, 0.5, 2.0, 4)
    b = WeightedGrid.uniform(1.0, 0.5, 2.0, 5)
    with pytest.raises(GridMismatchError):
        weighted_inner_product(GridFunction(a, np.ones(4)), GridFunction(b, np.ones(5)))
    with pytest.raises(GridMismatchError):
        GridFunction(a, np.ones(5))
