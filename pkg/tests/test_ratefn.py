import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from fracheat import errors
from fracheat.kernel import KernelSpec, build_kernel
from fracheat.ratefn import Cumulant, LargeDeviations, RateFunction, k_v, k_v_numeric
from fracheat.special import FracParams


@pytest.fixture(scope="module")
def rate(gauss):
    return RateFunction(Cumulant(gauss))


@pytest.fixture(scope="module")
def ld(rate):
    return LargeDeviations(rate, 0.5)


def phi_oracle(v):
    """Legendre transform of exp(g^2/4) - 1: stationary point solves v = (g/2) exp(g^2/4)."""
    with mp.workdps(40):
        g = mp.findroot(lambda g: g / 2 * mp.e ** (g**2 / 4) - v, mp.mpf(min(v, 1.5)))
        return float(g * v - mp.expm1(g**2 / 4))


def test_cumulant_of_the_gaussian_kernel(rate):
    cum = rate.cumulant
    for g in (0.0, 0.7, -2.0, 5.0):
        assert cum(np.array([g])) == pytest.approx(g * g / 4, abs=1e-12)
    assert cum.sigma == pytest.approx(np.array([[0.5]]), abs=1e-13)


@pytest.mark.parametrize("v", [0.0, 0.3, 1.0, -2.0, 3.5])
def test_rate_is_quadratic(rate, v):
    value, gamma = rate.legendre(v)
    assert value == pytest.approx(v * v, rel=1e-10, abs=1e-14)
    assert gamma[0] == pytest.approx(2 * v, rel=1e-9, abs=1e-13)


def test_rate_outside_hull(rate):
    assert not rate.in_domain(8.5)
    with pytest.raises(errors.ParameterOutOfRange):
        rate(9.0)
    with pytest.raises(errors.ValidationError):
        rate(np.array([1.0, 2.0]))


@pytest.mark.parametrize("v", [0.1, 0.5, 1.0, 2.0])
def test_phi_against_oracle(ld, v):
    assert ld.phi(v) == pytest.approx(phi_oracle(v), rel=1e-10)
    assert ld.phi_direct(v) == pytest.approx(phi_oracle(v), rel=1e-8)


@pytest.mark.parametrize("v", [0.2, 1.0, 3.0])
def test_xi_solves_its_fixed_point(ld, v):
    # Gaussian case: log xi + xi^2 v^2 = 0
    expected = optimize.brentq(lambda x: math.log(x) + x * x * v * v, 1e-9, 1.0, xtol=1e-15)
    assert ld.xi_v(v) == pytest.approx(expected, rel=1e-11)


def test_phi_gradient(ld):
    v, eps = 0.8, 1e-6
    fd = (ld.phi(v + eps) - ld.phi(v - eps)) / (2 * eps)
    assert ld.phi_grad(v)[0] == pytest.approx(fd, rel=1e-6)


def test_big_f_frozen_and_cross_checked(ld):
    value, eta = ld.big_f(0.5)
    assert value == pytest.approx(0.42540343502342803, rel=1e-9)
    assert ld.big_f_direct(0.5) == pytest.approx(value, rel=1e-7)
    assert ld.f_v_prime(0.5, eta) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(errors.ValidationError):
        ld.big_f(0.0)


def test_k_v_closed_form():
    # alpha = 1/2, sigma = 1/2, v = 1: (1/2) v^2 / sigma = 1 so K_v = c3
    assert k_v(0.5, 0.75, 0.5, 1.0) == pytest.approx(1.5 * 0.5 ** (1 / 3), rel=1e-14)
    assert k_v(0.5, 0.75, 0.5, 1.0) == pytest.approx(FracParams(0.5).c3)
    for a, b, s, v in [(0.3, 0.5, 0.5, 2.0), (0.7, 0.9, 1.3, 0.4), (0.5, 0.75, np.eye(2) * 0.5, [1.0, 1.0])]:
        assert k_v_numeric(a, b, s, v, t=37.0) == pytest.approx(k_v(a, b, s, v), rel=1e-10)
    with pytest.raises(errors.ParameterOutOfRange):
        k_v(0.5, 0.2, 0.5, 1.0)


def test_two_dimensional_rate():
    kern = build_kernel(KernelSpec(d=2, h=0.25, R=6.0))
    rate = RateFunction(Cumulant(kern))
    value, gamma = rate.legendre([0.5, -0.25])
    assert value == pytest.approx(0.25 + 0.0625, rel=1e-6)
    assert gamma == pytest.approx(np.array([1.0, -0.5]), rel=1e-5)


@settings(max_examples=40, deadline=None)
@given(v1=st.floats(-4.0, 4.0), v2=st.floats(-4.0, 4.0), lam=st.floats(0.0, 1.0))
def test_rate_and_phi_are_convex(rate, ld, v1, v2, lam):
    mid = lam * v1 + (1 - lam) * v2
    assert rate(mid) <= lam * rate(v1) + (1 - lam) * rate(v2) + 1e-9
    if abs(v1) > 1e-3 and abs(v2) > 1e-3 and abs(mid) > 1e-3:
        assert ld.phi(mid) <= lam * ld.phi(v1) + (1 - lam) * ld.phi(v2) + 1e-9
