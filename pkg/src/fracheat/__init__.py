"""Fundamental solution of a time-fractional nonlocal heat equation on a lattice."""

from .kernel import DensityGrid, KernelSpec, build_kernel
from .heatkernel import HeatKernelEvaluator
from .subordination import FracKernelEvaluator, FracSolution

__all__ = ["DensityGrid", "KernelSpec", "build_kernel", "HeatKernelEvaluator",
           "FracKernelEvaluator", "FracSolution"]
__version__ = "0.1.0"
