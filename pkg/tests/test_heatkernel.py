import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gammaln, logsumexp

from fracheat import errors
from fracheat.heatkernel import HeatKernelEvaluator, log_poisson, poisson_lower_tail, poisson_upper_tail


def log_q_oracle(x, t, k_max=4000):
    """Poisson mixture of exact normals N(0, k/2): the powers of this lattice kernel."""
    k = np.arange(1, k_max + 1)
    lp = k * math.log(t) - t - gammaln(k + 1)
    return float(logsumexp(lp - x * x / k - 0.5 * np.log(math.pi * k)))


@pytest.mark.parametrize("t", [0.5, 5.0, 30.0, 200.0])
@pytest.mark.parametrize("x", [0.0, 1.0, 4.0])
def test_q_matches_poisson_mixture_of_normals(heat, t, x):
    assert math.log(heat.q_eval(x, t)) == pytest.approx(log_q_oracle(x, t), abs=1e-8)


@pytest.mark.parametrize("x, t", [(60.0, 20.0), (400.0, 20.0), (150.0, 100.0)])
def test_far_tail_in_log_domain(heat, x, t):
    assert heat.q_log_eval(x, t) == pytest.approx(log_q_oracle(x, t), rel=1e-10)


def test_frozen_far_value(heat):
    assert heat.q_log_eval(400.0, 20.0) == pytest.approx(-1045.6454639156, rel=1e-11)


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0, 150.0])
def test_mass_is_one_minus_atom(heat, t):
    assert heat.mass(t) == pytest.approx(-math.expm1(-t), abs=1e-10)


def test_window_tail_bounds(heat):
    for t in (10.0, 99.0):
        w = heat.window(t)
        assert w.k_lo == 1 and w.tail_bound < 1e-14
    w = heat.window(1000.0)
    assert w.k_lo > 1 and w.tail_bound <= 1e-10
    with pytest.raises(errors.WindowTooSmall):
        HeatKernelEvaluator(heat.kernel, window_multiplier=0.5).window(1000.0)
    with pytest.raises(errors.NonPositiveArgument):
        heat.window(0.0)


def test_poisson_helpers():
    assert poisson_upper_tail(0, 3.0) == pytest.approx(1.0)
    assert poisson_lower_tail(0, 3.0) == pytest.approx(math.exp(-3.0))
    assert math.exp(log_poisson(2, 3.0)) == pytest.approx(4.5 * math.exp(-3.0))


def test_chapman_kolmogorov(heat):
    assert heat.chapman_kolmogorov(2.0, 3.0) < 1e-12


def test_local_limit_at_the_origin(heat):
    # sqrt(t) q(0, t) -> 1/sqrt(pi) for variance 1/2
    assert math.sqrt(400.0) * heat.q_eval(0.0, 400.0) == pytest.approx(0.5647, abs=5e-4)


def test_gaussian_band(heat):
    fit = heat.gaussian_band_check([100.0, 300.0, 1000.0])
    assert fit.passed and fit.c2 >= fit.c4 > 0
    assert fit.c4 == pytest.approx(1.0, rel=0.25)
    with pytest.raises(errors.RegionViolation):
        heat.gaussian_band_check([4.0], x_values=[5.0])


def test_off_lattice_point_is_rejected(heat):
    with pytest.raises(errors.ValidationError):
        heat.q_eval(0.01, 1.0)


def test_grid_is_symmetric_and_positive(heat):
    g = heat.q_grid(10.0)
    assert np.all(g.values >= 0) and g.is_symmetric()
    assert g.meta["atom"] == pytest.approx(math.exp(-10.0))


@settings(max_examples=25, deadline=None)
@given(t=st.floats(0.2, 60.0), j=st.integers(0, 800))
def test_q_against_oracle_property(heat, t, j):
    x = j / 16.0
    assert heat.q_log_eval(x, t) == pytest.approx(log_q_oracle(x, t), rel=1e-8, abs=1e-8)
