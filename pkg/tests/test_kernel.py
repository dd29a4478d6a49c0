import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from besselbmo.errors import ConfigError, DiagonalSingularityError, QuadratureConvergenceError
from besselbmo.kernel import (KernelConfig, adjoint_kernel, calibrate_bound_constants, homogeneity_deviation,
                              kernel_integral, riesz_kernel, riesz_kernel_with_error, riesz_of_indicator)

LAMBDAS = (0.5, 1.0, 2.0)


def theta_quad(lam, x, y):
    """Independent route: scipy quad on the theta integral, split at small angles."""
    def f(t):
        # x^2 + y^2 - 2xy cos t written without cancellation
        h = 2 * math.sin(t / 2) ** 2
        return ((x - y) + y * h) * math.sin(t) ** (2 * lam - 1) / ((x - y) ** 2 + 2 * x * y * h) ** (lam + 1)
    s = abs(x - y) / math.sqrt(x * y)
    pts = sorted({min(math.pi, s * 2.0 ** k) for k in range(0, 40) if s * 2.0 ** k < math.pi})
    edges = [0.0] + pts + [math.pi]
    tot = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            tot += integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=400)[0]
    return -(2 * lam / math.pi) * tot


def S(lam):
    return math.sqrt(math.pi) * special.gamma(lam) / special.gamma(lam + 0.5)


@pytest.mark.parametrize("lam", LAMBDAS + (0.75, 1.5))
@pytest.mark.parametrize("x,y", [(1.0, 3.0), (2.0, 0.5), (1.0, 1.01), (0.3, 0.2999), (5.0, 50.0)])
def test_kernel_matches_scipy_quad(lam, x, y):
    cfg = KernelConfig(lam)
    assert riesz_kernel(cfg, x, y) == pytest.approx(theta_quad(lam, x, y), rel=3e-10)


@pytest.mark.parametrize("lam", LAMBDAS)
def test_origin_limit_closed_form(lam):
    # y << x: R x^(2 lam + 1) -> -(2 lam / pi) S(lam)
    cfg = KernelConfig(lam)
    x = 2.0
    v = riesz_kernel(cfg, x, x * 1e-7) * x ** (2 * lam + 1)
    assert v == pytest.approx(-(2 * lam / math.pi) * S(lam), rel=1e-5)


@pytest.mark.parametrize("lam", LAMBDAS)
def test_far_limit_closed_form(lam):
    # y >> x: R y^(2 lam + 2) / x -> (2 lam / pi) S(lam) / (2 lam + 1)
    cfg = KernelConfig(lam)
    x, y = 1.0, 1e4
    v = riesz_kernel(cfg, x, y) * y ** (2 * lam + 2) / x
    assert v == pytest.approx((2 * lam / math.pi) * S(lam) / (2 * lam + 1), rel=1e-3)


@pytest.mark.parametrize("lam", LAMBDAS)
def test_diagonal_limit(lam):
    cfg = KernelConfig(lam)
    x = 1.7
    devs = []
    for eps in (1e-3, 1e-4, 1e-5, 1e-6):
        for sgn in (1, -1):
            y = x * (1 + sgn * eps)
            devs.append(abs(riesz_kernel(cfg, x, y) * (y - x) * x ** lam * y ** lam * math.pi - 1))
    pairs = np.maximum(devs[0::2], devs[1::2])
    assert np.all(np.diff(pairs) < 0)
    assert pairs[-1] < 1e-4


@given(st.sampled_from(LAMBDAS), st.floats(0.05, 20), st.floats(0.01, 100), st.floats(0.05, 20))
def test_homogeneity_property(lam, x, ratio, t):
    y = x * ratio
    if abs(y - x) < 1e-6 * x:
        return
    cfg = KernelConfig(lam)
    a = riesz_kernel(cfg, t * x, t * y) * t ** (2 * lam + 1)
    b = riesz_kernel(cfg, x, y)
    assert a == pytest.approx(b, rel=1e-8, abs=1e-300)


def test_homogeneity_deviation_helper():
    cfg = KernelConfig(1.0)
    x = np.array([0.5, 1.0, 2.0])
    y = np.array([3.0, 0.2, 2.2])
    assert homogeneity_deviation(cfg, x, y, [0.5, 3.0]) < 1e-9


def test_adjoint_kernel_is_transpose():
    cfg = KernelConfig(1.5)
    assert adjoint_kernel(cfg, 1.0, 2.0) == riesz_kernel(cfg, 2.0, 1.0)


def test_errors():
    cfg = KernelConfig(1.0)
    with pytest.raises(DiagonalSingularityError):
        riesz_kernel(cfg, 1.0, 1.0)
    with pytest.raises(ConfigError):
        riesz_kernel(cfg, -1.0, 1.0)
    with pytest.raises(ConfigError):
        KernelConfig(1.0, rel_tol=0.0)
    tight = KernelConfig(1.0, max_subdivisions=1, rel_tol=1e-15)
    with pytest.raises(QuadratureConvergenceError) as e:
        riesz_kernel(tight, 1.0, 1.0 + 1e-9)
    assert e.value.residual is not None


def test_error_estimate_reported():
    v, e = riesz_kernel_with_error(KernelConfig(1.0), np.array([1.0, 2.0]), np.array([3.0, 1.0]))
    assert np.all(e >= 0) and np.all(e <= 1e-9 * np.abs(v))


@pytest.mark.parametrize("lam", LAMBDAS)
def test_calibration_signs_and_ranges(lam):
    c = calibrate_bound_constants(KernelConfig(lam))
    assert c.K1 > 2 and 0 < c.K2 < 1 and 0 < c.K3 < 0.5
    assert min(c.C_K1, c.C_K2, c.C_K3) > 0


def _fold_oracle(lam, x, a, b, adjoint=False):
    """PV by folding: int_0^h [f(x+t) + f(x-t)] dt plus the one-sided remainder."""
    cfg = KernelConfig(lam)

    def k(y):
        return (riesz_kernel(cfg, y, x) if adjoint else riesz_kernel(cfg, x, y)) * y ** (2 * lam)
    h = min(x - a, b - x)
    sym = integrate.quad(lambda t: k(x + t) + k(x - t), 0, h, epsrel=1e-12, limit=400)[0]
    lo, hi = (x + h, b) if x - a < b - x else (a, x - h)
    rest = integrate.quad(k, lo, hi, epsrel=1e-12, limit=400)[0] if hi > lo else 0.0
    return sym + rest


@pytest.mark.parametrize("lam", (0.5, 1.0, 2.0))
@pytest.mark.parametrize("x", (1.3, 1.9))
@pytest.mark.parametrize("adjoint", (False, True))
def test_kernel_integral_principal_value(lam, x, adjoint):
    cfg = KernelConfig(lam)
    got = kernel_integral(cfg, x, 1.0, 2.0, adjoint=adjoint)
    assert got == pytest.approx(_fold_oracle(lam, x, 1.0, 2.0, adjoint), rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("lam", (0.5, 2.0))
def test_kernel_integral_outside(lam):
    cfg = KernelConfig(lam)
    for x in (0.4, 3.5):
        ref = integrate.quad(lambda y: riesz_kernel(cfg, x, y) * y ** (2 * lam), 1.0, 2.0, epsrel=1e-13)[0]
        assert riesz_of_indicator(cfg, x, 1.0, 2.0) == pytest.approx(ref, rel=1e-10)
