import numpy as np
import pytest

from fracheat.kernel import KernelSpec, build_kernel
from fracheat.heatkernel import HeatKernelEvaluator
from fracheat.subordination import FracKernelEvaluator


@pytest.fixture(scope="session")
def gauss():
    """The default lattice kernel: exp(-x^2), h = 1/16, cut at |x| = 8."""
    return build_kernel(KernelSpec())


@pytest.fixture(scope="session")
def heat(gauss):
    return HeatKernelEvaluator(gauss)


@pytest.fixture(scope="session")
def frac_half(gauss, heat):
    return FracKernelEvaluator(gauss, 0.5, heat=heat)


def gaussian_power(x, k):
    """Continuum a^{*k} for a = exp(-x^2)/sqrt(pi): centred normal, variance k/2."""
    return np.exp(-np.asarray(x) ** 2 / k) / np.sqrt(np.pi * k)
