"""Monte Carlo reference for the subordinator, its inverse and the time-changed walk."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import errors
from .kernel import DensityGrid
from .special import FracParams

CHUNK = 1 << 20


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: ``(seed, stream, counter)`` fixes every draw."""

    seed: int
    stream: int = 0
    counter: int = 0

    def generator(self) -> np.random.Generator:
        key = np.random.SeedSequence(self.seed, spawn_key=(self.stream,)).generate_state(2, np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=self.counter))

    def spawn(self, index: int) -> RngStream:
        """An independent stream derived from this one."""
        return RngStream(self.seed, self.stream * 1_000_003 + index + 1, 0)

    def advanced(self, blocks: int) -> RngStream:
        return RngStream(self.seed, self.stream, self.counter + int(blocks))


def _rng(stream) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, RngStream):
        return stream.generator()
    return RngStream(int(stream)).generator()


def _check_n(n: int) -> int:
    if int(n) != n or n < 1:
        raise errors.ValidationError("n must be a positive integer")
    return int(n)


def sample_stable(alpha: float, n: int, stream) -> np.ndarray:
    """One-sided stable draws with ``E exp(-lam S) = exp(-lam^alpha)`` (Kanter's method)."""
    FracParams(alpha)
    n = _check_n(n)
    rng = _rng(stream)
    phi = math.pi * rng.random(n)
    e = rng.standard_exponential(n)
    log_a = (alpha / (1 - alpha) * np.log(np.sin(alpha * phi)) + np.log(np.sin((1 - alpha) * phi))
             - np.log(np.sin(phi)) / (1 - alpha))
    return np.exp((1 - alpha) / alpha * (log_a - np.log(e)))


def sample_inverse_subordinator(alpha: float, t: float, n: int, stream) -> np.ndarray:
    """Draws of ``V_t = (t / S_1)^alpha``."""
    if t <= 0:
        raise errors.NonPositiveArgument("t must be positive")
    return (t / sample_stable(alpha, n, stream)) ** alpha


@dataclass
class TimeChangedSample:
    points: np.ndarray  # (n, d) integer lattice coordinates
    atom: np.ndarray  # (n,) True where no jump happened
    h: float

    @property
    def atom_frequency(self) -> float:
        return float(self.atom.mean())

    @property
    def n(self) -> int:
        return self.atom.size


def sample_timechanged(alpha: float, t: float, n: int, stream, kernel: DensityGrid) -> TimeChangedSample:
    """``Y_t`` = sum of ``N ~ Poisson(V_t)`` kernel steps, drawn exactly on the lattice."""
    n = _check_n(n)
    rng = _rng(stream)
    cdf = np.cumsum(kernel.values.ravel())
    cdf /= cdf[-1]
    shape = kernel.values.shape
    centre = np.array([(s - 1) // 2 for s in shape])
    d = kernel.d
    out = np.zeros((n, d), dtype=np.int64)
    jumps = np.empty(n, dtype=np.int64)
    for lo in range(0, n, CHUNK):
        m = min(CHUNK, n - lo)
        r = sample_inverse_subordinator(alpha, t, m, rng)
        k = rng.poisson(r)
        jumps[lo:lo + m] = k
        total = int(k.sum())
        if total == 0:
            continue
        flat = np.searchsorted(cdf, rng.random(total), side="right")
        flat = np.minimum(flat, cdf.size - 1)
        steps = np.stack(np.unravel_index(flat, shape), axis=-1) - centre
        owner = np.repeat(np.arange(m), k)
        for i in range(d):
            out[lo:lo + m, i] = np.bincount(owner, weights=steps[:, i], minlength=m).astype(np.int64)
    return TimeChangedSample(out, jumps == 0, kernel.h)


# -- empirical densities and tests ---------------------------------------------

@dataclass
class EmpiricalDensity:
    """Histogram normalised to unit integral; ``mass`` is the sample fraction it represents."""

    edges: np.ndarray
    counts: np.ndarray
    n_total: int
    heights: np.ndarray = field(init=False)
    stderr: np.ndarray = field(init=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        widths = np.diff(self.edges)
        kept = int(self.counts.sum())
        if kept == 0:
            raise errors.InsufficientSamples("no samples fall in the bins")
        frac = self.counts / kept
        self.heights = frac / widths
        self.stderr = np.sqrt(frac * (1 - frac) / kept) / widths

    @property
    def mass(self) -> float:
        return float(self.counts.sum()) / self.n_total

    @property
    def centres(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @classmethod
    def from_samples(cls, samples, edges, n_total: int | None = None) -> EmpiricalDensity:
        samples = np.asarray(samples, dtype=float)
        counts, edges = np.histogram(samples, bins=edges)
        return cls(edges, counts, int(n_total if n_total is not None else samples.size))

    def z_scores(self, bin_probabilities) -> np.ndarray:
        """Per-bin z statistics against unconditional reference probabilities."""
        pi = np.asarray(bin_probabilities, dtype=float)
        se = np.sqrt(pi * (1 - pi) / self.n_total)
        return (self.counts / self.n_total - pi) / np.where(se > 0, se, np.inf)

    def to_rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.centres.tolist(), self.heights.tolist(), self.stderr.tolist()))


def lattice_density(sample: TimeChangedSample, half_width: int, bin_nodes: int = 1,
                    axis: int = 0) -> EmpiricalDensity:
    """Histogram of non-atom draws along one axis in lattice bins of ``bin_nodes`` nodes.

    The bin edges sit halfway between lattice points; the bin straddling the
    origin includes ``x = 0`` draws that had at least one jump.
    """
    pts = sample.points[~sample.atom, axis]
    nb = int(math.ceil((2 * half_width + 1) / bin_nodes))
    lo = -(nb * bin_nodes) // 2
    edges = (lo + bin_nodes * np.arange(nb + 1) - 0.5) * sample.h
    return EmpiricalDensity.from_samples(pts * sample.h, edges, sample.n)


def lattice_bin_probabilities(grid: DensityGrid, edges: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum ``h^d p`` over the lattice points inside each bin (marginal along ``axis``)."""
    vals = grid.values
    other = tuple(i for i in range(grid.d) if i != axis)
    marg = vals.sum(axis=other) if other else vals
    x = grid.axis_coords(axis)
    idx = np.searchsorted(edges, x, side="right") - 1
    keep = (idx >= 0) & (idx < edges.size - 1)
    return np.bincount(idx[keep], weights=marg[keep], minlength=edges.size - 1) * grid.h**grid.d


def ks_test(samples, cdf) -> tuple[float, float]:
    """Kolmogorov-Smirnov statistic and p-value against a vectorised CDF."""
    res = stats.kstest(np.asarray(samples, dtype=float), cdf)
    return float(res.statistic), float(res.pvalue)


def laplace_mean(samples, lam: float = 1.0) -> tuple[float, float]:
    """Sample mean of ``exp(-lam X)`` and its standard error."""
    v = np.exp(-lam * np.asarray(samples, dtype=float))
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def proportion(hits, n: int) -> tuple[float, float]:
    p = float(np.sum(hits)) / n
    return p, math.sqrt(p * (1 - p) / n)
