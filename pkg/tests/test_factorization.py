import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from besselbmo.errors import ConfigError, NonContractionError, UsageError
from besselbmo.experiments import split_atom
from besselbmo.factorization import (approximation_errors, atom_approximation, bmo_lower_via_pairing, default_K0,
                                     duality_defect, initial_M_tilde, pi_form, product_riesz, weak_factorize)
from besselbmo.kernel import KernelConfig, calibrate_bound_constants
from besselbmo.weighted_domain import GridFunction, ProductGrid, WeightedGrid, weighted_inner_product

seeds = st.integers(0, 2 ** 31 - 1)
CFG = KernelConfig(1.0)
CONSTS = calibrate_bound_constants(CFG)


@pytest.fixture(scope="module")
def T_pg():
    g = WeightedGrid.geometric(1.0, 0.3, 3.0, 8)
    pg = ProductGrid(g, g)
    return product_riesz(pg, CFG, "zero"), pg


@given(seeds)
def test_pi_duality(T_pg, seed):
    # <b, Pi(g, h)> = <[b, T] h, g>
    T, pg = T_pg
    rng = np.random.default_rng(seed)
    b, g, h = (GridFunction(pg, rng.standard_normal(pg.shape)) for _ in range(3))
    assert duality_defect(b, g, h, T) < 1e-11


@given(seeds)
def test_pi_has_zero_integral(T_pg, seed):
    T, pg = T_pg
    rng = np.random.default_rng(seed)
    g, h = (GridFunction(pg, rng.standard_normal(pg.shape)) for _ in range(2))
    p = pi_form(g, h, T)
    scale = np.sum(np.abs(p.values) * p.weights)
    assert abs(p.integral()) <= 1e-12 * scale


def test_product_riesz_adjoint(T_pg, rng):
    T, pg = T_pg
    f, h = (GridFunction(pg, rng.standard_normal(pg.shape)) for _ in range(2))
    lhs = weighted_inner_product(f.with_values(T.apply(f.values)), h)
    rhs = weighted_inner_product(f, h.with_values(T.adjoint().apply(h.values)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@given(st.floats(1e-3, 0.9), st.floats(2.5, 10))
def test_initial_M_tilde(eps, K0):
    M = initial_M_tilde(eps, K0)
    assert M >= 100 * K0 and math.log2(M) / M < eps
    assert M == 100 * K0 or math.log2(M / 2) / (M / 2) >= eps


def test_K0_floor():
    assert default_K0(CONSTS) > max(1 / CONSTS.K2, 1 / CONSTS.K3) + 1
    with pytest.raises(ConfigError):
        atom_approximation(split_atom(1.0, (1, 1), (0.1, 0.1)), CFG, CONSTS, 0.5, K0=1.0)
    with pytest.raises(ConfigError):
        atom_approximation(split_atom(1.0, (1, 1), (0.1, 0.1)), CFG, CONSTS, 0.0)


@pytest.mark.parametrize("center,radius,case", [((1, 1), (0.01, 0.01), "a"), ((1, 0.001), (1e-4, 1e-4), "b"),
                                                ((0.001, 1), (1e-4, 1e-4), "c"), ((1, 1), (1e-4, 1e-4), "d")])
def test_far_rectangle_cases(center, radius, case):
    ap = atom_approximation(split_atom(1.0, center, radius), CFG, CONSTS, 0.5)
    # the placement at the initial M; doubling may later move an inward rectangle outward
    assert ap.attempts[0]["case"] == case
    assert ap.error_upper <= 0.5
    assert ap.residual_l1 <= ap.error_upper * (1 + 1e-9)


def test_residual_mean_matches_atom_mean():
    a = split_atom(1.0, (1, 1), (0.01, 0.01))
    ap = atom_approximation(a, CFG, CONSTS, 0.5)
    # the residual is a - Pi(g, h); both are mean zero, so the decomposed pieces integrate to zero
    d = ap.decomposition
    bx, by = d.edges()
    tot = 0.0
    for c, t in d.terms:
        tot += c * t.f.integral()
    assert abs(tot) <= 1e-9 * d.coefficient_sum


def test_error_decreases_with_M():
    a = split_atom(1.0, (1, 1), (0.01, 0.01))
    errs = [atom_approximation(a, CFG, CONSTS, 0.5, M_tilde=M, adapt=False).error_upper for M in (400, 800, 1600, 3200)]
    assert all(x > y for x, y in zip(errs, errs[1:]))


def test_inward_placement_error_decreases():
    a = split_atom(1.0, (1, 1), (1e-7, 1e-7))
    errs = []
    for M in (400, 1600, 6400, 25600):
        ap = atom_approximation(a, CFG, CONSTS, 0.5, M_tilde=M, adapt=False)
        assert ap.pair.case == "d"
        errs.append(ap.error_upper)
    assert all(x > y for x, y in zip(errs, errs[1:]))


def test_adaptive_doubling_reaches_eps():
    a = split_atom(1.0, (1, 1), (0.5, 0.5))
    ap = atom_approximation(a, CFG, CONSTS, 1e-6)
    assert ap.error_upper <= 1e-6
    assert len(ap.attempts) >= 1 and ap.attempts[-1]["error_upper"] == ap.error_upper
    with pytest.raises(NonContractionError):
        atom_approximation(a, CFG, CONSTS, 1e-30, M_tilde=400, max_doublings=1)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_batch_route_matches_single_route(lam):
    cfg = KernelConfig(lam)
    consts = calibrate_bound_constants(cfg)
    atoms = [split_atom(lam, c, r) for c, r in [((1, 1), (0.01, 0.01)), ((2, 0.5), (0.1, 0.05)),
                                                ((1, 1), (1e-4, 1e-4)), ((10, 3), (1.0, 0.5))]]
    res = approximation_errors(atoms, cfg, consts, 0.5)
    for k, a in enumerate(atoms):
        ap = atom_approximation(a, cfg, consts, 0.5)
        assert res["case"][k] == ap.pair.case
        assert res["M_tilde"][k] == ap.pair.M_tilde
        assert res["error"][k] == pytest.approx(ap.error_upper, rel=1e-4, abs=1e-9 * a.f.l1())
        assert res["G0"][k] == pytest.approx(ap.pair.G0, rel=1e-6)


def test_weak_factorize_two_levels():
    atoms = [(1.0, split_atom(1.0, (1, 1), (0.01, 0.01))), (0.5, split_atom(1.0, (2, 3), (0.1, 0.1)))]
    res = weak_factorize(atoms, CFG, CONSTS, 0.5, C0=1.0, K=2)
    assert res.certified
    assert len(res.levels) == 2
    assert res.input_upper == pytest.approx(1.5)
    assert res.certificate == pytest.approx(0.25 * 1.5)
    for lv in res.levels:
        assert lv["ratio"] <= 0.5 * (1 + 1e-9)


def test_weak_factorize_rejects_non_contraction():
    atoms = [(1.0, split_atom(1.0, (1, 1), (0.01, 0.01)))]
    with pytest.raises(NonContractionError):
        weak_factorize(atoms, CFG, CONSTS, 1.0, C0=1.0)
    with pytest.raises(ConfigError):
        weak_factorize(atoms, CFG, CONSTS, 0.5, C0=0.5)


def test_pairing_lower_bound(rng):
    g = WeightedGrid.uniform(1.0, 1.0, 2.0, 4)
    pg = ProductGrid(g, g)
    b = GridFunction(pg, rng.standard_normal(pg.shape))
    fs = [GridFunction(pg, rng.standard_normal(pg.shape)) for _ in range(3)]
    battery = [(f, 2.0) for f in fs] + [(fs[0], 0.0)]
    out = bmo_lower_via_pairing(b, battery)
    ref = max(abs(weighted_inner_product(b, f)) / 2.0 for f in fs)
    assert out["lower_bound"] == pytest.approx(ref)
    assert out["battery_size"] == 4
    with pytest.raises(UsageError):
        bmo_lower_via_pairing(b, [])
