"""Regular part of the time-fractional kernel.

``w(., t) = E_alpha(-t^alpha) delta_0 + p(., t)``. Two routes give ``p``:

* series: ``p = sum_{k>=1} m_k(t) a^{*k}`` with Mittag-Leffler weights ``m_k``;
* quadrature: ``p(x, t) = int_0^inf W_alpha(s) q(x, t^alpha s) ds``.

Both run through the tilted compound-sum engine, so far-tail values are
available in log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from . import errors
from .heatkernel import HeatKernelEvaluator, log_poisson
from .kernel import DensityGrid
from .special import FracParams, log_wright_density, mittag_leffler, ml_weights

SERIES_TAIL = 1e-12
ROW_BLOCK = 1 << 22
QUAD_RTOL = 5e-9  # complex entries per batch of quadrature rows


@dataclass(frozen=True)
class FracSolution:
    """``w(., t) = atom * delta_0 + p``."""

    alpha: float
    t: float
    atom: float
    p: DensityGrid
    kernel: DensityGrid = field(repr=False)

    def __post_init__(self):
        if not 0.0 < self.atom <= 1.0:
            raise errors.ComputationError(f"atom {self.atom} outside (0, 1]")
        gap = abs(self.atom + self.p.mass - 1.0)
        if gap > 1e-7:
            raise errors.ComputationError(f"atom + mass(p) differs from 1 by {gap:.2e}")

    @property
    def total_mass(self) -> float:
        return self.atom + self.p.mass

    def value_at(self, x) -> float:
        """Regular part at ``x``; the atom is not a point value."""
        return self.p.value_at(x)


class FracKernelEvaluator:
    """``p(x, t)`` for one kernel and one ``alpha``."""

    def __init__(self, kernel: DensityGrid, alpha: float, heat: HeatKernelEvaluator | None = None,
                 rel_tol: float = 1e-6):
        FracParams(alpha)
        self.alpha = float(alpha)
        self.kernel = kernel
        self.heat = heat or HeatKernelEvaluator(kernel, rel_tol=rel_tol)
        self.engine = self.heat.engine
        self.cumulant = self.heat.cumulant
        self.rel_tol = rel_tol
        self.a_max = float(kernel.values.max())
        self._separable = kernel.d >= 2 and kernel.axis_factors() is not None

    # -- series ------------------------------------------------------------

    def atom(self, t: float) -> float:
        if t <= 0:
            raise errors.NonPositiveArgument("t must be positive")
        return float(mittag_leffler(self.alpha, -(t**self.alpha)))

    def series_cutoff(self, t: float) -> tuple[int, float]:
        """Smallest ``K`` with ``max a * sum_{k>K} m_k(t) < 1e-12``, and that bound."""
        table = ml_weights(self.alpha, float(t))
        k_max = table.k_max
        while True:
            lw = table.log_weights(k_max)
            # past the peak and far below it: the rest is a geometric-or-faster tail
            if lw[-1] < lw.max() - 80.0 and lw[-1] < lw[-2]:
                break
            k_max *= 2
        tail = np.cumsum(np.exp(lw[::-1]))[::-1]  # tail[k] = sum_{j>=k} m_j
        bound = self.a_max * np.append(tail[1:], 0.0)
        ok = np.where(bound < SERIES_TAIL)[0]
        if ok.size == 0 or ok[0] >= lw.size - 1:
            raise errors.SeriesNotConverged("series truncation bound not reached")
        K = max(1, int(ok[0]))
        return K, float(bound[K])

    def _series_weights(self, t: float):
        """``gamma -> log m_k(t)`` for ``k = 1..K(gamma)``, extended while tilted terms matter."""
        table = ml_weights(self.alpha, float(t))
        K, _ = self.series_cutoff(t)

        def weights(gamma):
            if gamma is None:
                return table.log_weights(K)[1:]
            L = float(self.cumulant(np.asarray(gamma, dtype=float)))
            k_hi = K
            while True:
                lw = table.log_weights(k_hi)
                lc = lw[1:] + np.arange(1, k_hi + 1) * L
                if lc[-1] < lc.max() - 60.0 and lc[-1] < lc[-2]:
                    return lw[1:]
                k_hi *= 2
        return weights

    def series_tilt(self, x, t: float) -> np.ndarray:
        """Tilt whose ``m_k``-mixture has mean ``x``, with the ``k`` range grown to fit."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not np.any(x):
            return np.zeros(self.kernel.d)
        table = ml_weights(self.alpha, float(t))
        weights = self._series_weights(t)
        need = int(np.max(np.abs(x) / self.cumulant.reach)) + 2
        lw = table.log_weights(max(need * 2, table.k_max))[1:]
        gamma = None
        for _ in range(40):
            gamma = self.engine.solve_tilt(lw, 1, x)
            grown = weights(gamma)
            if grown.size <= lw.size:
                return gamma
            lw = grown
        raise errors.TiltOutOfRange(f"series tilt for x={x} did not settle")

    def p_ml_series_log(self, x, t: float) -> np.ndarray:
        """``log p(x, t)`` from the series at lattice points.

        Tensor-product kernels in ``d >= 2`` first try per-axis power tables,
        which never build a d-dimensional box; points those cannot resolve go
        through the tilted engine.
        """
        j = self.heat.lattice_index(x)
        if self.kernel.d >= 2 and self._separable:
            lv, ok = self.engine.separable_log_values(self._series_weights(t)(None), 1, j, self.rel_tol)
            if ok.all():
                return lv
            rest = self.engine.log_values(self._series_weights(t), 1, j[~ok], self.rel_tol,
                                          tilt_for=lambda p: self.series_tilt(p, t))[0]
            lv[~ok] = rest
            return lv
        lv, _ = self.engine.log_values(self._series_weights(t), 1, j, self.rel_tol,
                                       tilt_for=lambda p: self.series_tilt(p, t))
        return lv

    def p_ml_series(self, x, t: float):
        scalar = np.ndim(x) == 0 or (self.kernel.d > 1 and np.ndim(x) == 1)
        val = np.exp(self.p_ml_series_log(x, t))
        return float(val[0]) if scalar else val

    def p_ml_series_grid(self, t: float) -> DensityGrid:
        lw = self._series_weights(t)(None)
        batch = self.engine.tilted_batch(lw[None, :], 1, None, None)
        return _box_grid(batch, self.kernel.h, self.engine.symmetric,
                         meta={"t": t, "alpha": self.alpha, "route": "series"})

    # -- quadrature ------------------------------------------------------------

    def _quadrature(self, t: float, gamma, targets, screen: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """``log int W(s) q(x, T s) ds`` at integer ``targets`` with one tilt.

        Every node's ``q`` row is evaluated at the common tilt together with its
        absolute error bound; a target is trusted when the integrated bound
        stays below ``rel_tol`` of its value.
        """
        a, T = self.alpha, t**self.alpha
        gamma = np.zeros(self.kernel.d) if gamma is None else np.asarray(gamma, dtype=float)
        L = float(self.cumulant(gamma))
        growth = T * math.expm1(L)
        targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
        u_lo, u_hi, s_peak = self._u_range(growth, -20.0 - max(0.0, math.log(T)))
        lam_max = T * math.exp(u_hi) * math.exp(L)
        k_hi = int(math.ceil(lam_max + 10.0 * math.sqrt(lam_max) + 30.0))
        ks = np.arange(1, k_hi + 1)
        rel_sd = math.sqrt(max(2 * math.gamma(1 + a) ** 2 / math.gamma(1 + 2 * a) - 1, 1e-12))
        du = min(0.05, 0.3 * rel_sd, 0.3 / math.sqrt(1.0 + growth * s_peak))
        # screen: a tilt that cannot resolve the dominant row will not serve the target
        peak_row = log_poisson(ks, T * s_peak)[None, :]
        _, ok_peak = self.engine.tilted_batch(peak_row, 1, gamma, targets).log_values(self.rel_tol)
        live = ok_peak[0] if screen else np.ones(targets.shape[0], bool)
        est_all = np.full(targets.shape[0], -np.inf)
        if not live.any():
            return est_all, live
        targets = targets[live]
        n_freq = self._freq_size(ks, gamma)
        block = max(1, ROW_BLOCK // n_freq)
        def rows_at(u, pts):
            """Integrand ``(len(pts), len(u))`` and the log of its summed absolute error per target."""
            out = np.empty((pts.shape[0], u.size))
            bound = np.full(pts.shape[0], -np.inf)
            lwu = log_wright_density(a, np.exp(u)) + u
            taus = T * np.exp(u)
            for s in range(0, u.size, block):
                sl = slice(s, s + block)
                batch = self.engine.tilted_batch(log_poisson(ks[None, :], taus[sl, None]), 1, gamma, pts)
                with np.errstate(divide="ignore"):
                    # outside a block's box the value is bounded by the alias term of err
                    lv = np.log(np.where(batch.inside[None, :], np.maximum(batch.values, 0.0), 0.0))
                    le = np.log(batch.err)
                base = batch.log_scale[:, None] + batch.log_offset[None, :] + lwu[sl, None]
                out[:, sl] = (lv + base).T
                bound = np.logaddexp(bound, logsumexp(le[:, None] + base, axis=0))
            return out, bound

        # step-halving trapezoid in u; a target leaves the active set once it
        # converges or once the row errors could matter at rel_tol
        n = max(2, int(math.ceil((u_hi - u_lo) / du)))
        step = (u_hi - u_lo) / n
        nodes = u_lo + step * np.arange(n + 1)
        vals, bnd = rows_at(nodes, targets)
        acc = logsumexp(vals, axis=1)
        est = acc + math.log(step)
        log_tol = math.log(self.rel_tol)
        result = np.full(targets.shape[0], -np.inf)
        good = np.zeros(targets.shape[0], bool)
        active = np.arange(targets.shape[0])
        for level in range(10):
            mid = nodes[:-1] + 0.5 * step
            v_mid, b_mid = rows_at(mid, targets[active])
            acc[active] = np.logaddexp(acc[active], logsumexp(v_mid, axis=1))
            bnd[active] = np.logaddexp(bnd[active], b_mid)
            step *= 0.5
            nodes = np.sort(np.concatenate([nodes, mid]))
            new = acc[active] + math.log(step)
            with np.errstate(invalid="ignore"):
                err = np.abs(np.expm1(new - est[active]))
            est[active] = new
            hopeless = ~np.isfinite(new) | (bnd[active] + math.log(step) > new + log_tol)
            noise = 2.0 * np.exp(bnd[active] + math.log(step) - new)
            # the W branch seam sits near 1e-9, so ask for half the 1e-8 target
            done = (err <= np.maximum(QUAD_RTOL, noise)) & ~hopeless & (level >= 1)
            result[active[done]] = new[done]
            good[active[done]] = True
            active = active[~(done | (hopeless & (level >= 1)))]
            if active.size == 0:
                break
        est_all[live] = result
        live[live] = good
        return est_all, live

    def _u_range(self, growth: float, u_floor: float) -> tuple[float, float, float]:
        """Range of ``log s`` where ``W(s) s e^{growth s}`` is within ``e^-80`` of its peak.

        That envelope is the tilted mass of each quadrature row; the lower end
        never goes below ``u_floor`` and never above it when untilted, since
        near the origin the rows themselves vanish like ``s``.
        """
        u = np.arange(u_floor, 6.0, 0.02)
        while True:
            s = np.exp(u)
            lv = log_wright_density(self.alpha, s) + u + growth * s
            peak = int(np.argmax(lv))
            idx = np.arange(u.size)
            below = np.where((lv < lv[peak] - 80.0) & (idx > peak))[0]
            if below.size:
                lo = u_floor
                if growth > 0:
                    under = np.where((lv < lv[peak] - 80.0) & (idx < peak))[0]
                    lo = float(u[under[-1]]) if under.size else u_floor
                return lo, float(u[below[0]]), float(s[peak])
            u = np.arange(u[0], u[-1] + 3.0, 0.02)

    def _freq_size(self, ks, gamma) -> int:
        probe = self.engine.tilted_batch(log_poisson(ks, float(ks[-1]))[None, :], 1, gamma,
                                         np.zeros((1, self.kernel.d), dtype=np.int64))
        width = np.asarray(probe.box[1]) - np.asarray(probe.box[0]) + 1
        return int(np.prod(width))

    def p_log_eval(self, x, t: float) -> np.ndarray:
        """``log p(x, t)`` by quadrature over the subordinator, covering tilts as needed."""
        if t <= 0:
            raise errors.NonPositiveArgument("t must be positive")
        j = self.heat.lattice_index(x)

        def evaluate(gamma, pts):
            return self._quadrature(t, gamma, pts)

        lv, _ = self.engine.cover(evaluate, lambda p: self.series_tilt(p, t), j)
        return lv

    def p_quadrature(self, x, t: float):
        scalar = np.ndim(x) == 0 or (self.kernel.d > 1 and np.ndim(x) == 1)
        val = np.exp(self.p_log_eval(x, t))
        return float(val[0]) if scalar else val

    def p_quadrature_grid(self, t: float) -> DensityGrid:
        """Quadrature route on the series grid's box (untilted)."""
        ref = self.p_ml_series_grid(t)
        half = ref.half_extent
        axes = [np.arange(-n, n + 1) for n in half]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
        lv, ok = self._quadrature(t, None, pts, screen=False)
        vals = np.where(ok, np.exp(lv), 0.0).reshape(ref.values.shape)
        return DensityGrid.from_values(vals, self.kernel.h,
                                       meta={"t": t, "alpha": self.alpha, "route": "quadrature"})

    def cross_check(self, x, t: float) -> dict:
        """Both routes at ``x`` and their relative discrepancy."""
        ser = float(self.p_ml_series_log(x, t)[0])
        quad = float(self.p_log_eval(x, t)[0])
        rel = abs(math.expm1(quad - ser)) if math.isfinite(ser) else math.inf
        return {"series": math.exp(ser), "quadrature": math.exp(quad), "log_series": ser,
                "log_quadrature": quad, "rel_discrepancy": rel}

    def assemble_solution(self, t: float) -> FracSolution:
        return FracSolution(self.alpha, float(t), self.atom(t), self.p_ml_series_grid(t), self.kernel)


def _box_grid(batch, h: float, symmetric: bool, meta: dict) -> DensityGrid:
    from .heatkernel import _recentre, _symmetrise
    lo_b, hi_b = batch.box
    shape = tuple(int(hi - lo + 1) for lo, hi in zip(lo_b, hi_b))
    vals = np.exp(batch.log_scale[0] + batch.log_offset) * batch.values[0]
    grid = _recentre(np.maximum(vals.reshape(shape), 0.0), lo_b, hi_b)
    if symmetric:
        grid = _symmetrise(grid)
    return DensityGrid.from_values(grid, h, meta=meta)
