import functools
import math

import mpmath as mp
import numpy as np
import pytest
from scipy.special import erfcx

from fracheat import errors
from fracheat.kernel import DensityGrid
from fracheat.subordination import FracKernelEvaluator, FracSolution


@functools.lru_cache(maxsize=None)
def half_weights(T, k_max):
    """m_k for alpha = 1/2 in closed form through parabolic cylinder functions.

    With W(s) = exp(-s^2/4)/sqrt(pi), integrating s^k exp(-s^2/4 - T s) gives
    m_k = T^k 2^{(k+1)/2} exp(T^2/2) D_{-k-1}(sqrt(2) T) / sqrt(pi).
    """
    with mp.workdps(30):
        T = mp.mpf(T)
        c = mp.e ** (T**2 / 2) / mp.sqrt(mp.pi)
        return tuple(mp.log(c * T**k * mp.mpf(2) ** (mp.mpf(k + 1) / 2) * mp.pcfd(-k - 1, mp.sqrt(2) * T))
                     for k in range(k_max + 1))


def log_p_half(x, t, k_max):
    lw = half_weights(math.sqrt(t), k_max)
    with mp.workdps(30):
        x = mp.mpf(x)
        terms = [lw[k] - x**2 / k - mp.log(mp.pi * k) / 2 for k in range(1, k_max + 1)]
        return float(mp.log(mp.fsum(mp.e**v for v in terms)))


CASES = [(1.0, 0.0, 150), (1.0, 3.0, 150), (1.0, 20.0, 150), (4.0, 1.5, 150), (4.0, 40.0, 150),
         (100.0, 0.0, 300), (100.0, 31.625, 300), (100.0, 150.0, 300)]


@pytest.mark.parametrize("t, x, k_max", CASES)
def test_series_matches_closed_form_weights(frac_half, t, x, k_max):
    assert frac_half.p_ml_series_log(x, t)[0] == pytest.approx(log_p_half(x, t, k_max), rel=1e-8, abs=1e-8)


@pytest.mark.parametrize("t, x, k_max", CASES[:5])
def test_quadrature_matches_closed_form_weights(frac_half, t, x, k_max):
    assert frac_half.p_log_eval(x, t)[0] == pytest.approx(log_p_half(x, t, k_max), rel=1e-7, abs=1e-7)


def test_routes_agree(frac_half):
    for x in (0.0, 2.5, 12.0):
        assert frac_half.cross_check(x, 10.0)["rel_discrepancy"] < 1e-6


@pytest.mark.parametrize("t", [0.5, 1.0, 10.0])
def test_atom_is_scaled_erfc(frac_half, t):
    # E_{1/2}(-z) = erfcx(z)
    assert frac_half.atom(t) == pytest.approx(erfcx(math.sqrt(t)), rel=1e-12)


@pytest.mark.parametrize("t", [1.0, 10.0])
def test_mass_identity(frac_half, t):
    sol = frac_half.assemble_solution(t)
    assert abs(sol.atom + sol.p.mass - 1.0) < 1e-8
    assert sol.total_mass == pytest.approx(1.0, abs=1e-8)
    assert sol.value_at(0.0) == pytest.approx(frac_half.p_ml_series(0.0, t), rel=1e-8)


def test_quadrature_grid_matches_series_grid(frac_half):
    a = frac_half.p_ml_series_grid(2.0)
    b = frac_half.p_quadrature_grid(2.0)
    big = a.values > 1e-6 * a.values.max()
    assert np.max(np.abs(b.values[big] / a.values[big] - 1)) < 1e-6


def test_alpha_near_one_approaches_poisson(gauss, heat):
    ev = FracKernelEvaluator(gauss, 0.999, heat=heat)
    for x in (0.0, 1.0, 2.0):
        assert ev.p_ml_series(x, 3.0) == pytest.approx(heat.q_eval(x, 3.0), rel=5e-3)


def test_series_cutoff_bound(frac_half):
    K, bound = frac_half.series_cutoff(10.0)
    assert K >= 1 and bound < 1e-12


def test_invalid_inputs(gauss, frac_half):
    with pytest.raises(errors.ValidationError):
        FracKernelEvaluator(gauss, 1.0)
    with pytest.raises(errors.NonPositiveArgument):
        frac_half.atom(0.0)
    with pytest.raises(errors.ValidationError):
        frac_half.p_ml_series(0.03, 1.0)
    grid = DensityGrid.from_values(np.array([0.1, 0.2, 0.1]), 1.0)
    with pytest.raises(errors.ComputationError):
        FracSolution(0.5, 1.0, 0.9, grid, gauss)
