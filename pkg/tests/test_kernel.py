import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracheat import errors
from fracheat.kernel import (DensityGrid, KernelSpec, build_kernel, convolution_power, convolve,
                             covariance, log_mgf, tilt, tilted_convolution_power)

from conftest import gaussian_power


def test_kernel_is_normalised_and_symmetric(gauss):
    assert gauss.mass == pytest.approx(1.0, abs=1e-14)
    assert gauss.is_symmetric()
    assert gauss.values.shape == (257,)


def test_lattice_variance_matches_continuum(gauss):
    # theta-function identity: the lattice sum differs from 1/2 by ~exp(-pi^2/h^2)
    assert covariance(gauss).sigma[0, 0] == pytest.approx(0.5, abs=1e-13)


def test_log_mgf_is_gaussian(gauss):
    for g in (0.0, 1.0, 3.0):
        assert log_mgf(gauss, g) == pytest.approx(g * g / 4, abs=1e-12)


def test_square_matches_direct_convolution(gauss):
    direct = np.convolve(gauss.values, gauss.values) * gauss.h
    two = convolution_power(gauss, 2)
    assert np.max(np.abs(two.values - direct)) < 1e-15


def test_power_matches_gaussian_law(gauss):
    a8 = convolution_power(gauss, 8)
    x = a8.axis_coords(0)
    assert np.max(np.abs(a8.values - gaussian_power(x, 8))) < 1e-13


def test_windowed_power_tracks_discarded_mass(gauss):
    full = convolution_power(gauss, 16)
    win = convolution_power(gauss, 16, extent=400, max_discard=1e-6)
    n = win.half_extent[0]
    m = full.half_extent[0]
    assert np.max(np.abs(win.values - full.values[m - n:m + n + 1])) < 1e-13
    assert win.discarded_mass < 1e-6
    with pytest.raises(errors.GridExtentInsufficient):
        convolution_power(gauss, 16, extent=40, max_discard=1e-12)


def test_tilted_power_in_log_domain(gauss):
    k = 8
    lg = tilted_convolution_power(gauss, k, 2.0)
    x = lg.axis_coords(0)
    exact = -x**2 / k - 0.5 * math.log(math.pi * k)
    ok = np.isfinite(lg.values)
    assert ok.sum() > 100
    assert np.max(np.abs(lg.values[ok] - exact[ok])) < 1e-6


def test_tilt_invariance_and_zero_tilt(gauss):
    k = 12
    plain = convolution_power(gauss, k)
    zero = tilted_convolution_power(gauss, k, 0.0)
    # roundoff is ~1e-16 of the maximum, so 1e-9 holds where values exceed 1e-6 of it
    ok = plain.values > 1e-6 * plain.values.max()
    assert np.max(np.abs(zero.values[ok] - np.log(plain.values[ok]))) < 1e-9
    g1 = tilted_convolution_power(gauss, k, 1.0)
    g2 = tilted_convolution_power(gauss, k, 1.6)
    both = np.isfinite(g1.values) & np.isfinite(g2.values)
    assert both.sum() > 50
    assert np.max(np.abs(g1.values[both] - g2.values[both])) < 1e-6


def test_cramer_scale_far_out(gauss):
    # a^{*200} is normal with variance 100, so log a^{*200}(100) is -k I(0.5)
    # plus the prefactor -log sqrt(200 pi), a 6.4% shift at this k
    lg = tilted_convolution_power(gauss, 200, 1.0).value_at(100.0)
    assert lg == pytest.approx(-200 * 0.25 - 0.5 * math.log(200 * math.pi), rel=1e-9)
    assert lg / (-200 * 0.25) == pytest.approx(1.0644, abs=1e-4)


def test_tilt_has_shifted_mean(gauss):
    at, L = tilt(gauss, 1.0)
    assert L == pytest.approx(0.25, abs=1e-12)
    mean = float((at.values * at.axis_coords(0)).sum() * at.h)
    assert mean == pytest.approx(0.5, abs=1e-12)  # L'(1) = 1/2


def test_separable_factors_in_two_dimensions():
    a = build_kernel(KernelSpec(d=2, h=0.5))
    f = a.axis_factors()
    assert f is not None and len(f) == 2
    assert np.allclose(np.outer(f[0], f[1]) / a.h**2, a.values, rtol=1e-12)


def test_roundtrip_binary_and_csv(tmp_path, gauss):
    path, sidecar = gauss.save(tmp_path / "a.bin")
    back = DensityGrid.load(path)
    assert np.array_equal(back.values, gauss.values) and back.h == gauss.h
    assert '"mass"' in sidecar.read_text()
    gauss.to_csv(tmp_path / "a.csv")
    rows = np.loadtxt(tmp_path / "a.csv", delimiter=",", skiprows=1)
    assert rows.shape == (257, 2)


@pytest.mark.parametrize("kw, exc", [
    ({"R": 2.0}, errors.CutoffTooSmall),
    ({"h": 1.0, "R": 7.0}, errors.SpacingTooCoarse),
    ({"p": 1.0}, errors.ParameterOutOfRange),
    ({"h": 0.3}, errors.ParameterOutOfRange),
])
def test_invalid_specs(kw, exc):
    with pytest.raises(exc):
        build_kernel(KernelSpec(**kw))


def test_grid_rejects_bad_values():
    with pytest.raises(errors.ValidationError):
        DensityGrid.from_values(np.ones(4), 0.5)
    with pytest.raises(errors.ValidationError):
        DensityGrid.from_values(np.array([1.0, -1.0, 1.0]), 0.5)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 40))
def test_powers_keep_unit_mass(gauss, k):
    ak = convolution_power(gauss, k)
    assert ak.mass == pytest.approx(1.0, abs=1e-12)
    assert ak.is_symmetric(rtol=1e-12)


@settings(max_examples=15, deadline=None)
@given(j=st.integers(1, 6), k=st.integers(1, 6))
def test_powers_compose(gauss, j, k):
    lhs = convolve(convolution_power(gauss, j), convolution_power(gauss, k))
    rhs = convolution_power(gauss, j + k)
    assert np.max(np.abs(lhs.values - rhs.values)) < 1e-14
