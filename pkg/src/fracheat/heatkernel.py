"""Regular part of the classical nonlocal heat kernel.

``u(., t) = e^{-t} delta_0 + q(., t)`` with ``q = sum_{k>=1} e^{-t} t^k/k! a^{*k}``.
The atom is a scalar and never touches the grid. The Poisson sum is cut to a
window of ``k`` whose discarded mass has a Chernoff bound below the tolerance.
The windowed series is accumulated through the tilted compound-sum engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from . import errors
from ._compound import CompoundSums
from .kernel import DensityGrid
from .ratefn import Cumulant

SMALL_T = 100.0  # m=3 windows reach the 1e-10 tail only from here on


def log_poisson(k, t: float) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    t = np.asarray(t, dtype=float)
    return k * np.log(t) - t - gammaln(k + 1)


def poisson_upper_tail(k: int, t: float) -> float:
    """Chernoff bound on ``P(N >= k)`` for ``N ~ Poisson(t)``, ``k > t``."""
    if k <= t:
        return 1.0
    return math.exp(-t + k - k * math.log(k / t))


def poisson_lower_tail(k: int, t: float) -> float:
    """Chernoff bound on ``P(N <= k)``, ``k < t``."""
    if k >= t:
        return 1.0
    if k <= 0:
        return math.exp(-t)
    return math.exp(-t + k - k * math.log(k / t))


@dataclass(frozen=True)
class Window:
    k_lo: int
    k_hi: int
    tail_bound: float

    @property
    def size(self) -> int:
        return self.k_hi - self.k_lo + 1


@dataclass(frozen=True)
class BandFit:
    c1: float
    c2: float
    c3: float
    c4: float
    passed: bool
    onset: float | None
    samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class HeatKernelEvaluator:
    """``q(x, t)`` at lattice points, on grids, and in log domain."""

    kernel: DensityGrid
    window_multiplier: float = 3.0
    tolerance: float = 1e-10
    rel_tol: float = 1e-6
    cumulant: Cumulant | None = None
    engine: CompoundSums = field(init=False, repr=False)

    def __post_init__(self):
        if self.window_multiplier <= 0 or self.tolerance <= 0:
            raise errors.ValidationError("window multiplier and tolerance must be positive")
        if self.cumulant is None:
            self.cumulant = Cumulant(self.kernel)
        self.engine = CompoundSums(self.kernel, self.cumulant)

    # -- window ---------------------------------------------------------

    def window(self, t: float) -> Window:
        if t <= 0:
            raise errors.NonPositiveArgument("t must be positive")
        if t < SMALL_T:
            k = max(1, int(math.ceil(t)))
            while poisson_upper_tail(k + 1, t) >= 1e-14:
                k += 1
            return Window(1, k, poisson_upper_tail(k + 1, t))
        half = self.window_multiplier * t**0.75
        lo = max(1, int(math.floor(t - half)))
        hi = int(math.ceil(t + half))
        bound = poisson_upper_tail(hi + 1, t) + (poisson_lower_tail(lo - 1, t) if lo > 1 else 0.0)
        if bound > self.tolerance:
            raise errors.WindowTooSmall(
                f"Poisson tail outside the window is {bound:.2e} > {self.tolerance:.2e}; raise the multiplier"
            )
        return Window(lo, hi, bound)

    def log_weights(self, t: float, window: Window | None = None) -> tuple[np.ndarray, int]:
        w = window or self.window(t)
        return log_poisson(np.arange(w.k_lo, w.k_hi + 1), t), w.k_lo

    # -- lattice helpers ---------------------------------------------------

    def lattice_index(self, x) -> np.ndarray:
        """Integer lattice coordinates of real points ``x`` (shape ``(P, d)`` or ``(P,)`` for d=1)."""
        x = np.asarray(x, dtype=float)
        if self.kernel.d == 1:
            x = x.reshape(-1, 1)
        x = np.atleast_2d(x)
        if x.shape[1] != self.kernel.d:
            raise errors.ValidationError(f"points must have {self.kernel.d} coordinates")
        j = np.rint(x / self.kernel.h)
        if np.any(np.abs(j * self.kernel.h - x) > 1e-9 * np.maximum(1.0, np.abs(x))):
            raise errors.ValidationError("x must lie on the lattice h Z^d")
        return j.astype(np.int64)

    # -- evaluation ------------------------------------------------------------

    def saddle_tilt(self, x, t: float) -> np.ndarray:
        """Minimiser of ``t (e^{L(g)} - 1) - g.x``: the tilt whose Poisson mixture has mean ``x``.

        Near the bulk this is ``grad L(g) = x/t``; far out it also moves the
        dominant ``k`` to ``t e^{L(g)}``, which keeps the point reachable.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        g = np.zeros(self.kernel.d)
        if not np.any(x):
            return g

        def parts(g):
            L, m, H = self.cumulant.derivatives(g)
            lam = t * math.exp(L)
            return lam - t - g @ x, lam * m - x, lam * (H + np.outer(m, m))

        f, grad, hess = parts(g)
        for _ in range(200):
            if np.linalg.norm(grad) <= 1e-11 * max(1.0, np.linalg.norm(x)):
                return g
            step = -np.linalg.solve(hess, grad)
            # L moves by at most 1 per step so e^L cannot overshoot
            reach = float(np.abs(step) @ self.cumulant.reach)
            if reach > 1.0:
                step /= reach
            lam = 1.0
            while lam > 1e-12:
                trial = parts(g + lam * step)
                if trial[0] <= f:
                    break
                lam *= 0.5
            g = g + lam * step
            f, grad, hess = trial
        if np.linalg.norm(grad) <= 1e-7 * max(1.0, np.linalg.norm(x)):
            return g
        raise errors.TiltOutOfRange(f"no Poisson saddle for x={x}, t={t}")

    def _weights_for(self, t: float, window: Window):
        """Log Poisson weights from the window start, long enough for a given tilt."""
        def weights(gamma):
            k_hi = window.k_hi
            if gamma is not None:
                lam = t * math.exp(self.cumulant(np.asarray(gamma, dtype=float)))
                k_hi = max(k_hi, int(math.ceil(lam + 10.0 * math.sqrt(lam) + 30.0)))
            return log_poisson(np.arange(window.k_lo, k_hi + 1), t)
        return weights

    def q_log_values(self, x, t: float, window: Window | None = None) -> np.ndarray:
        """``log q(x, t)`` for many lattice points (multi-tilt covering)."""
        w = window or self.window(t)
        lv, _ = self.engine.log_values(self._weights_for(t, w), w.k_lo, self.lattice_index(x),
                                       self.rel_tol, tilt_for=lambda p: self.saddle_tilt(p, t))
        return lv

    def q_eval(self, x, t: float, window: Window | None = None):
        """``q(x, t)``; scalar in, scalar out."""
        scalar = np.ndim(x) == 0 or (self.kernel.d > 1 and np.ndim(x) == 1)
        val = np.exp(self.q_log_values(x, t, window))
        return float(val[0]) if scalar else val

    def q_log_eval(self, x, t: float) -> float:
        """``log q(x, t)`` at one point, normally with the single saddle tilt.

        The ``k`` range runs from the Poisson window start to well past the
        tilted mixture's peak, so far-tail points keep their dominant terms.
        Covering takes over if one tilt cannot resolve the point.
        """
        j = self.lattice_index(x)
        if j.shape[0] != 1:
            raise errors.ValidationError("q_log_eval takes a single point")
        w = self.window(t)
        gamma = self.saddle_tilt(j[0] * self.kernel.h, t)
        lw = self._weights_for(t, w)(gamma)
        batch = self.engine.tilted_batch(lw[None, :], w.k_lo, gamma, j)
        lv, ok = batch.log_values(self.rel_tol)
        if ok[0, 0]:
            return float(lv[0, 0])
        return float(self.q_log_values(j * self.kernel.h, t, w)[0])

    def q_grid(self, t: float, half_extent=None) -> DensityGrid:
        """``q(., t)`` on a centred grid (default: the box holding all but 1e-24 of the mass)."""
        lw, k0 = self.log_weights(t)
        batch = self.engine.tilted_batch(lw[None, :], k0, None, None)
        lo_b, hi_b = batch.box
        shape = tuple(int(hi - lo + 1) for lo, hi in zip(lo_b, hi_b))
        vals = np.exp(batch.log_scale[0] + batch.log_offset) * batch.values[0]
        vals = np.maximum(vals.reshape(shape), 0.0)
        grid = _recentre(vals, lo_b, hi_b, half_extent)
        if self.engine.symmetric:
            grid = _symmetrise(grid)
        return DensityGrid.from_values(grid, self.kernel.h, discarded_mass=self.window(t).tail_bound,
                                       meta={"t": t, "atom": math.exp(-t)})

    def mass(self, t: float) -> float:
        return self.q_grid(t).mass

    # -- checks ----------------------------------------------------------

    def chapman_kolmogorov(self, t: float, s: float) -> float:
        """Max pointwise gap between ``q(t+s)`` and the product rule with the atoms carried algebraically."""
        qt, qs, qts = self.q_grid(t), self.q_grid(s), self.q_grid(t + s)
        from .kernel import convolve
        conv = convolve(qt, qs).values
        half = max(qt.half_extent[0] + qs.half_extent[0], qts.half_extent[0])
        pred = (_pad(conv, half, self.kernel.d) + math.exp(-t) * _pad(qs.values, half, self.kernel.d)
                + math.exp(-s) * _pad(qt.values, half, self.kernel.d))
        return float(np.max(np.abs(pred - _pad(qts.values, half, self.kernel.d))))

    def gaussian_band_check(self, s_values, x_values=None, span: float = 3.0) -> BandFit:
        """Fit ``c1 s^{-d/2} e^{-c2 |x|^2/s} <= q(x,s) <= c3 s^{-d/2} e^{-c4 |x|^2/s}``.

        ``x_values`` are real lattice points along the first axis (default: up
        to ``span*sqrt(s)`` for each ``s``). Both lines are L1-tightest among
        those valid on every sample; ``onset`` is the smallest ``s`` from
        which the band holds on all larger ``s`` with ``c2 >= c4``.
        """
        d = self.kernel.d
        rows = []
        for s in s_values:
            if x_values is None:
                n = int(span * math.sqrt(s) / self.kernel.h)
                xs = np.unique(np.linspace(0, n, 25).astype(int)) * self.kernel.h
            else:
                xs = np.asarray(x_values, dtype=float)
            if np.any(np.abs(xs) > s):
                raise errors.RegionViolation("band check needs |x| <= s")
            pts = np.zeros((xs.size, d))
            pts[:, 0] = xs
            lq = self.q_log_values(pts if d > 1 else xs, float(s))
            for x, v in zip(xs, lq):
                rows.append((float(s), x * x / s, v + 0.5 * d * math.log(s)))
        arr = np.array(rows)
        fit = _band(arr[:, 1], arr[:, 2])
        onset = None
        svals = np.unique(arr[:, 0])
        for s0 in svals:
            sub = arr[arr[:, 0] >= s0]
            f = _band(sub[:, 1], sub[:, 2])
            if f is not None and f[1] >= f[3]:
                onset = float(s0)
                break
        if fit is None:
            return BandFit(math.nan, math.nan, math.nan, math.nan, False, onset, len(rows))
        c1, c2, c3, c4 = fit
        ok = all(np.isfinite([c1, c2, c3, c4])) and min(c1, c2, c3, c4) > 0 and c2 >= c4
        return BandFit(c1, c2, c3, c4, bool(ok), onset, len(rows))


def _band(r: np.ndarray, y: np.ndarray):
    """L1-tightest lines ``y >= log c1 - c2 r`` and ``y <= log c3 - c4 r``."""
    n = r.size
    if n < 2:
        return None
    # upper: minimise sum(b - a r_i - y_i) with b - a r_i >= y_i; variables (b, a)
    up = optimize.linprog([n, -r.sum()], A_ub=np.c_[-np.ones(n), r], b_ub=-y,
                          bounds=[(None, None), (None, None)], method="highs")
    lo = optimize.linprog([-n, r.sum()], A_ub=np.c_[np.ones(n), -r], b_ub=y,
                          bounds=[(None, None), (None, None)], method="highs")
    if up.status != 0 or lo.status != 0:
        return None
    b3, a4 = up.x
    b1, a2 = lo.x
    return math.exp(b1), a2, math.exp(b3), a4


def _recentre(vals: np.ndarray, lo_b, hi_b, half_extent=None) -> np.ndarray:
    """Place box values on a grid centred at the origin."""
    d = vals.ndim
    if half_extent is None:
        half = [int(max(-lo, hi)) for lo, hi in zip(lo_b, hi_b)]
    else:
        half = [int(half_extent)] * d if np.ndim(half_extent) == 0 else [int(x) for x in half_extent]
    out = np.zeros(tuple(2 * hh + 1 for hh in half))
    src, dst = [], []
    for i in range(d):
        a = max(lo_b[i], -half[i])
        b = min(hi_b[i], half[i])
        src.append(slice(int(a - lo_b[i]), int(b - lo_b[i] + 1)))
        dst.append(slice(int(a + half[i]), int(b + half[i] + 1)))
    out[tuple(dst)] = vals[tuple(src)]
    return out


def _symmetrise(vals: np.ndarray) -> np.ndarray:
    out = vals.copy()
    for ax in range(vals.ndim):
        out = 0.5 * (out + np.flip(out, axis=ax))
    return out


def _pad(vals: np.ndarray, half: int, d: int) -> np.ndarray:
    cur = (vals.shape[0] - 1) // 2
    if cur == half:
        return vals
    if cur > half:
        sl = tuple(slice(cur - half, cur + half + 1) for _ in range(d))
        return vals[sl]
    return np.pad(vals, [(half - cur, half - cur)] * d)
