import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc, erfcx

from fracheat import errors, special
from fracheat.special import FracParams, MLWeights

ALPHAS = [0.3, 0.5, 0.7, 0.9]


def _fsum(term, n0=0, n_terms=400):
    """Plain partial sum at high precision (series acceleration misfires here)."""
    return mp.fsum(term(n) for n in range(n0, n0 + n_terms))


def mp_wright(alpha, s):
    """M-Wright series, exact at these s once the working precision is high."""
    with mp.workdps(120):
        a, s = mp.mpf(alpha), mp.mpf(s)
        return float(_fsum(lambda n: (-s) ** n * mp.rgamma(1 - a - a * n) / mp.factorial(n)))


def mp_stable(alpha, x):
    with mp.workdps(120):
        a, x = mp.mpf(alpha), mp.mpf(x)
        term = lambda k: (-1) ** (k + 1) / mp.factorial(k) * mp.gamma(a * k + 1) * mp.sin(mp.pi * a * k) * x ** (-a * k - 1)
        return float(_fsum(term, 1, 600) / mp.pi)


def mp_ml(alpha, z):
    with mp.workdps(120):
        a = mp.mpf(alpha)
        return float(_fsum(lambda n: mp.mpf(z) ** n * mp.rgamma(a * n + 1), 0, 800))


def mp_ml_weight(alpha, k, t):
    """t^{ak} E^{(k)}(-t^a)/k! from the differentiated power series."""
    with mp.workdps(120):
        a = mp.mpf(alpha)
        T = mp.mpf(t) ** a
        s = _fsum(lambda n: mp.factorial(n) / mp.factorial(n - k) * (-T) ** (n - k) * mp.rgamma(a * n + 1), k)
        return float(T**k / mp.factorial(k) * s)


WRIGHT_POINTS = [(a, s) for a in (0.3, 0.5, 0.7) for s in (0.0, 0.4, 1.5, 3.0, 5.0)]
WRIGHT_POINTS += [(0.9, s) for s in (0.0, 0.4, 1.0, 1.5)]


@pytest.mark.parametrize("alpha, s", WRIGHT_POINTS)
def test_wright_density_against_high_precision_series(alpha, s):
    got = float(special.log_wright_density(alpha, np.array([s]))[0])
    assert got == pytest.approx(math.log(mp_wright(alpha, s)), rel=1e-9, abs=1e-9)


def test_wright_far_tail():
    # the Zolotarev integral must keep its peak where A_min * y is large
    s = np.array([50.0, 105.0, 110.0, 200.0, 1000.0])
    exact = -s**2 / 4 - 0.5 * math.log(math.pi)
    assert np.allclose(special.log_wright_density(0.5, s), exact, rtol=1e-13)
    for a in (0.3, 0.7):
        s = np.array([100.0, 300.0])
        rel = np.abs(special.log_wright_density(a, s) / special.log_wright_asymptotic(a, s) - 1)
        assert np.all(rel < 1e-5)


@pytest.mark.parametrize("alpha", ALPHAS)
@pytest.mark.parametrize("x", [0.3, 1.0, 4.0, 50.0])
def test_stable_density_against_high_precision_series(alpha, x):
    if alpha == 0.9 and x == 0.3:
        pytest.skip("the power series in x^-alpha needs thousands of terms here")
    assert float(special.stable_density(alpha, np.array([x]))[0]) == pytest.approx(mp_stable(alpha, x), rel=1e-9)


# the power series needs many terms as z^(1/alpha) grows; keep z where 800 suffice
ML_POINTS = [(0.3, z) for z in (0.0, 1.0, 2.0)] + [(0.5, z) for z in (0.0, 1.0, 5.0)]
ML_POINTS += [(a, z) for a in (0.7, 0.9) for z in (0.0, 1.0, 5.0, 20.0)]


@pytest.mark.parametrize("alpha, z", ML_POINTS)
def test_mittag_leffler_against_high_precision_series(alpha, z):
    assert special.mittag_leffler(alpha, -z) == pytest.approx(mp_ml(alpha, -z), rel=1e-10, abs=1e-300)


def test_half_closed_forms():
    s = np.linspace(0, 12, 49)
    assert np.allclose(special.wright_density(0.5, s), np.exp(-s**2 / 4) / math.sqrt(math.pi), rtol=1e-10)
    x = np.logspace(-2, 4, 40)
    assert np.allclose(special.stable_density(0.5, x), x**-1.5 * np.exp(-1 / (4 * x)) / (2 * math.sqrt(math.pi)),
                       rtol=1e-9)
    assert np.allclose(special.stable_cdf(0.5, x), erfc(1 / (2 * np.sqrt(x))), rtol=1e-9)
    z = np.logspace(-3, 3, 50)
    assert np.allclose(special.mittag_leffler(0.5, -z), erfcx(z), rtol=1e-10)


def test_atom_at_unit_time():
    assert special.mittag_leffler(0.5, -1.0) == pytest.approx(0.42758357615580705, rel=1e-13)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_ml_weights_against_series_derivatives(alpha):
    w = MLWeights(alpha, 1.0, k_max=8)
    for k in range(9):
        assert w.weight(k) == pytest.approx(mp_ml_weight(alpha, k, 1.0), rel=1e-9)


@pytest.mark.parametrize("alpha, t", [(0.5, 0.1), (0.5, 10.0), (0.3, 100.0), (0.8, 1000.0)])
def test_ml_weights_sum_to_one(alpha, t):
    lw = MLWeights(alpha, t, k_max=64).log_weights(4096)
    assert math.exp(lw[0]) == pytest.approx(special.mittag_leffler(alpha, -(t**alpha)), rel=1e-10)
    assert float(np.exp(lw).sum()) == pytest.approx(1.0, abs=1e-10)


def test_large_k_weights_stay_finite():
    # the log integrand cancels terms of size k log k; the rtol floor absorbs it
    lw = MLWeights(0.5, 1e4, k_max=64).log_weights(20000)
    assert np.all(np.isfinite(lw)) and lw[-1] < lw.max() - 50


def test_frac_params_constants():
    fp = FracParams(0.5)
    assert fp.c2 == pytest.approx(0.25)
    assert fp.K == pytest.approx(math.sqrt(2 / math.pi))
    assert fp.c3 == pytest.approx(1.5 * 0.5 ** (1 / 3))
    with pytest.raises(errors.ParameterOutOfRange):
        FracParams(1.0)


def test_domain_errors():
    with pytest.raises(errors.NonPositiveArgument):
        special.wright_density(0.5, np.array([-1.0]))
    with pytest.raises(errors.NonPositiveArgument):
        special.stable_density(0.5, np.array([0.0]))
    with pytest.raises(errors.ParameterOutOfRange):
        special.mittag_leffler(0.5, 1.0)
    with pytest.raises(errors.NonPositiveArgument):
        special.inverse_subordinator_density(0.5, 0.0, np.array([1.0]))


def test_log_trapezoid_gaussian_and_strictness():
    val, err = special.log_trapezoid(lambda u: (-np.exp(2 * u) + u)[None, :], -40.0, 4.0, 0.1)
    assert math.exp(val[0]) == pytest.approx(math.sqrt(math.pi) / 2, rel=1e-11)
    with pytest.raises(errors.QuadratureNotConverged):
        special.log_trapezoid(lambda u: (-np.exp(2 * u) + u)[None, :], -40.0, 4.0, 2.0, max_levels=1,
                              min_levels=1, rtol=1e-15)


@pytest.mark.parametrize("alpha", ALPHAS)
def test_switch_overlap_agrees(alpha):
    pol = special.series_policy(alpha)
    ov = np.linspace((1 - pol.overlap) * pol.wright_switch, pol.wright_switch, 7)
    ser = special.wright_series(alpha, ov)[0]
    assert np.allclose(ser, special.wright_via_stable(alpha, ov), rtol=1e-8)


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.2, 0.9), t=st.floats(0.1, 50.0), r=st.floats(0.05, 5.0))
def test_inverse_density_self_similarity(alpha, t, r):
    rr = np.array([r * t**alpha])
    lhs = special.inverse_subordinator_density(alpha, t, rr)
    rhs = special.inverse_subordinator_density_scaled(alpha, t, rr)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-300)


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.2, 0.95), z=st.floats(0.0, 80.0), dz=st.floats(1e-3, 10.0))
def test_mittag_leffler_decreasing_and_positive(alpha, z, dz):
    e1 = special.mittag_leffler(alpha, -z)
    e2 = special.mittag_leffler(alpha, -(z + dz))
    assert 0 < e2 < e1 <= 1


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.2, 0.9), t=st.floats(0.2, 5.0))
def test_inverse_cdf_matches_laplace_atom(alpha, t):
    # P(V_t <= r) is a CDF: 0 near 0, 1 far out, nondecreasing
    r = np.array([1e-6, 0.5, 1.0, 2.0, 50.0]) * t**alpha
    c = special.inverse_subordinator_cdf(alpha, t, r)
    assert np.all(np.diff(c) >= -1e-14) and c[0] < 1e-3 and c[-1] > 1 - 1e-9
