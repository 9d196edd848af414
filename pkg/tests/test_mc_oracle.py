import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import erfc, erfcx

from fracheat import errors
from fracheat.mc_oracle import (EmpiricalDensity, RngStream, ks_test, lattice_bin_probabilities, lattice_density,
                                laplace_mean, proportion, sample_inverse_subordinator, sample_stable,
                                sample_timechanged)
from fracheat.special import mittag_leffler

SEED = 2026


def test_streams_are_reproducible_and_distinct():
    a = RngStream(SEED).generator().random(5)
    assert np.array_equal(a, RngStream(SEED).generator().random(5))
    assert not np.array_equal(a, RngStream(SEED).spawn(0).generator().random(5))
    assert not np.array_equal(a, RngStream(SEED).advanced(1).generator().random(5))
    assert np.array_equal(sample_stable(0.4, 100, SEED), sample_stable(0.4, 100, RngStream(SEED)))


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
def test_stable_laplace_transform(alpha):
    m, se = laplace_mean(sample_stable(alpha, 200_000, RngStream(SEED, 1)))
    assert abs(m - math.exp(-1.0)) < 4 * se


def test_half_stable_matches_levy_law():
    s = sample_stable(0.5, 100_000, RngStream(SEED, 2))
    _, pval = ks_test(s, lambda x: erfc(0.5 / np.sqrt(x)))
    assert pval > 1e-3


def test_inverse_subordinator_half_normal():
    # V_t = t^{1/2} |N(0, 2)| when alpha = 1/2
    v = sample_inverse_subordinator(0.5, 4.0, 100_000, RngStream(SEED, 3))
    _, pval = ks_test(v / 2.0, stats.halfnorm(scale=math.sqrt(2)).cdf)
    assert pval > 1e-3


@pytest.mark.parametrize("alpha", [0.3, 0.7])
def test_inverse_subordinator_laplace_is_mittag_leffler(alpha):
    m, se = laplace_mean(sample_inverse_subordinator(alpha, 1.0, 200_000, RngStream(SEED, 4)))
    assert abs(m - mittag_leffler(alpha, -1.0)) < 4 * se


def test_timechanged_atom_and_histogram(gauss, frac_half):
    smp = sample_timechanged(0.5, 1.0, 200_000, RngStream(SEED, 5), gauss)
    p, se = proportion(smp.atom, smp.n)
    assert abs(p - erfcx(1.0)) < 4 * se
    dens = lattice_density(smp, 64, 8)
    grid = frac_half.p_ml_series_grid(1.0)
    z = dens.z_scores(lattice_bin_probabilities(grid, dens.edges))
    assert np.max(np.abs(z)) < 4.5
    assert dens.mass == pytest.approx(1 - p, abs=0.01)


def test_timechanged_2d_shapes():
    from fracheat.kernel import KernelSpec, build_kernel
    kern = build_kernel(KernelSpec(d=2, h=0.5, R=6.0))
    smp = sample_timechanged(0.6, 2.0, 1000, SEED, kern)
    assert smp.points.shape == (1000, 2) and np.all(smp.points[smp.atom] == 0)


def test_empirical_density():
    d = EmpiricalDensity.from_samples([0.1, 0.2, 0.7, 5.0], [0.0, 0.5, 1.0])
    assert d.heights == pytest.approx([4 / 3, 2 / 3])
    assert d.mass == 0.75 and d.centres.tolist() == [0.25, 0.75]
    assert len(d.to_rows()) == 2
    with pytest.raises(errors.InsufficientSamples):
        EmpiricalDensity.from_samples([5.0], [0.0, 1.0])


def test_validation():
    with pytest.raises(errors.ValidationError):
        sample_stable(0.5, 0, SEED)
    with pytest.raises(errors.ParameterOutOfRange):
        sample_stable(1.2, 10, SEED)
    with pytest.raises(errors.NonPositiveArgument):
        sample_inverse_subordinator(0.5, -1.0, 10, SEED)
