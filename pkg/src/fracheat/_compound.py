"""Weighted sums of convolution powers, ``S(x) = sum_k w_k a^{*k}(x)``.

Everything is done in an exponentially tilted frame. With the lattice pmf
``pi = h^d a`` and ``pi_g(j) = pi(j) exp(g.x_j - L(g))``,

    a^{*k}(x) = h^-d exp(k L(g) - g.x) pi_g^{*k}(x),

so ``S(x) = h^-d exp(-g.x) sum_k w_k e^{k L(g)} pi_g^{*k}(x)``. The tilted sum
is an FFT power series on a periodic box. The box is sized from a Chernoff
bound on the tilted mixture, which caps wrap-around at ``ALIAS_MASS``. Values
are trusted only where they exceed the roundoff bound by ``1/rel_tol``.
Different tilts cover different parts of space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import optimize
from scipy.special import logsumexp

from . import errors
from .kernel import MEMORY_BUDGET, DensityGrid
from .ratefn import Cumulant

ALIAS_MASS = 1e-24
EPS = np.finfo(float).eps
_THETA = np.geomspace(1e-4, 200.0, 120)


@dataclass
class TiltedBatch:
    """Tilted-frame values for several rows of weights at a common tilt.

    ``S_r(x) = exp(log_scale[r] + log_offset) * values[r]`` with an absolute
    error of at most ``err[r]`` on ``values[r]``.
    """

    gamma: np.ndarray
    log_scale: np.ndarray  # (rows,)
    values: np.ndarray  # (rows, P)
    err: np.ndarray  # (rows,)
    log_offset: np.ndarray  # (P,)
    inside: np.ndarray  # (P,) target within the box
    box: tuple[np.ndarray, np.ndarray]  # lattice bounds per axis

    def log_values(self, rel_tol: float = 1e-6):
        """Per-row log values and a trust mask."""
        with np.errstate(divide="ignore", invalid="ignore"):
            lv = np.log(np.where(self.values > 0, self.values, np.nan))
        ok = self.inside[None, :] & (self.values > self.err[:, None] / rel_tol)
        out = self.log_scale[:, None] + self.log_offset[None, :] + lv
        return np.where(ok, out, -np.inf), ok


class CompoundSums:
    """Evaluator for ``sum_k w_k a^{*k}`` at lattice points (integer coordinates)."""

    def __init__(self, kernel: DensityGrid, cumulant: Cumulant | None = None,
                 budget: int = MEMORY_BUDGET // 4):
        self.kernel = kernel
        self.h = kernel.h
        self.d = kernel.d
        self.cum = cumulant if cumulant is not None else Cumulant(kernel)
        self.offsets = np.rint(self.cum.points / self.h).astype(np.int64)  # (n, d)
        self.log_pmf = self.cum.log_pmf
        self.half = np.asarray(kernel.half_extent)
        self.reach_nodes = np.abs(self.offsets).max(axis=0)
        self.budget = int(budget)
        self.symmetric = kernel.is_symmetric(1e-13)

    # -- mixture statistics -------------------------------------------

    def _normalise(self, log_w: np.ndarray, k0: int, gamma: np.ndarray):
        """Log coefficients ``log w_k + k L`` normalised per row, trimmed in k."""
        log_w = np.atleast_2d(np.asarray(log_w, dtype=float))
        ks = k0 + np.arange(log_w.shape[1])
        L = self.cum(gamma)
        lc = log_w + ks[None, :] * L
        scale = np.max(lc, axis=1)
        if np.any(~np.isfinite(scale)):
            raise errors.ValidationError("every row needs at least one finite weight")
        lcn = lc - scale[:, None]
        keep = np.any(lcn > -60.0, axis=0)
        idx = np.where(keep)[0]
        lo, hi = idx[0], idx[-1] + 1
        return lcn[:, lo:hi], ks[lo:hi], scale, L

    def _log_agg(self, lcn: np.ndarray) -> np.ndarray:
        agg = logsumexp(lcn, axis=0)
        return agg - logsumexp(agg)

    def _box(self, lcn, ks, gamma, L):
        """Lattice box per axis holding all but ``ALIAS_MASS`` of every row."""
        agg = self._log_agg(lcn)
        lo_b, hi_b = np.empty(self.d, np.int64), np.empty(self.d, np.int64)
        lthr = math.log(ALIAS_MASS)
        k_top = int(ks[-1])
        for i in range(self.d):
            bounds = []
            for sign in (1.0, -1.0):
                th = sign * _THETA
                g = np.tile(gamma, (th.size, 1))
                g[:, i] += th
                dl = self.cum.values(g) - L
                kap = logsumexp(agg[:, None] + ks[:, None] * dl[None, :], axis=0)
                bounds.append(np.min((kap - lthr) / _THETA) * sign)
            top = min(bounds[0] / self.h, k_top * self.reach_nodes[i])
            bot = max(bounds[1] / self.h, -k_top * self.reach_nodes[i])
            lo_b[i] = int(math.floor(bot)) - 1
            hi_b[i] = int(math.ceil(top)) + 1
        return lo_b, hi_b

    def mixture_moments(self, log_w_row, k0: int, gamma):
        """Mean and covariance of the tilted, normalised mixture in real units."""
        gamma = self._gamma(gamma)
        lcn, ks, _, _ = self._normalise(log_w_row, k0, gamma)
        w = np.exp(self._log_agg(lcn))
        ek = w @ ks
        vk = w @ (ks - ek) ** 2
        _, m, V = self.cum.derivatives(gamma)
        return ek * m, ek * V + vk * np.outer(m, m)

    def _gamma(self, gamma) -> np.ndarray:
        if gamma is None:
            return np.zeros(self.d)
        g = np.atleast_1d(np.asarray(gamma, dtype=float))
        if g.shape != (self.d,):
            raise errors.ValidationError(f"gamma must have {self.d} components")
        return g

    # -- one tilt -------------------------------------------------------

    def tilted_batch(self, log_w, k0: int, gamma=None, targets=None) -> TiltedBatch:
        """Evaluate every row of ``log_w`` (weights for ``k = k0, k0+1, ...``) at one tilt.

        ``targets`` is an integer array ``(P, d)``; ``None`` returns the whole box
        flattened in C order.
        """
        if k0 < 1:
            raise errors.ValidationError("k0 must be at least 1; the atom is carried separately")
        gamma = self._gamma(gamma)
        lcn, ks, scale, L = self._normalise(log_w, k0, gamma)
        lo_b, hi_b = self._box(lcn, ks, gamma, L)
        width = hi_b - lo_b + 1
        shape = tuple(int(sfft.next_fast_len(int(max(w, 2 * hh + 1)), real=True))
                      for w, hh in zip(width, self.reach_nodes))
        n_tot = int(np.prod(shape))
        if n_tot > self.budget:
            raise errors.ExtentOverflow(f"periodic box {shape} exceeds the memory budget")
        # tilted pmf on the periodic box
        lt = self.log_pmf + self.cum.points @ gamma - L
        arr = np.zeros(shape)
        idx = tuple(np.mod(self.offsets[:, i], shape[i]) for i in range(self.d))
        np.add.at(arr, idx, np.exp(lt))
        spec = sfft.rfftn(arr)
        sflat = spec.ravel()
        with np.errstate(divide="ignore"):
            logf = np.log(sflat.astype(complex))
        rows = lcn.shape[0]
        acc = np.zeros((rows, sflat.size), dtype=complex)
        coef = np.exp(lcn)
        blk = max(1, self.budget // max(sflat.size, 1) // 2)
        for s in range(0, ks.size, blk):
            kk = ks[s:s + blk].astype(float)
            with np.errstate(invalid="ignore", under="ignore"):
                power = np.exp(kk[:, None] * logf[None, :])
            power[:, sflat == 0] = 0.0
            acc += coef[:, s:s + blk] @ power
        vals = sfft.irfftn(acc.reshape((rows,) + spec.shape), s=shape, axes=tuple(range(1, self.d + 1)))
        vals = vals.reshape(rows, -1)
        # roundoff: k-fold powers plus the inverse transform; aliasing mass on top
        mag = np.abs(acc).sum(axis=1) * 2.0 / n_tot
        err = EPS * (2.0 * ks[-1] + 8.0 * math.log2(n_tot) + 16.0) * mag + ALIAS_MASS * coef.sum(axis=1)
        if targets is None:
            axes = [np.arange(lo_b[i], hi_b[i] + 1) for i in range(self.d)]
            mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
            targets = mesh
        targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
        inside = np.all((targets >= lo_b) & (targets <= hi_b), axis=1)
        pos = np.ravel_multi_index(tuple(np.mod(targets[:, i], shape[i]) for i in range(self.d)), shape)
        out = vals[:, pos]
        log_offset = -(targets * self.h) @ gamma - self.d * math.log(self.h)
        return TiltedBatch(gamma, scale, out, err, log_offset, inside, (lo_b, hi_b))

    # -- tilt selection --------------------------------------------------

    def solve_tilt(self, log_w_row, k0: int, x_target) -> np.ndarray:
        """Tilt whose mixture mean ``E[k] grad L(g)`` equals ``x_target`` (real units)."""
        x = np.atleast_1d(np.asarray(x_target, dtype=float))
        lw = np.asarray(log_w_row, dtype=float).ravel()
        ks = k0 + np.arange(lw.size)
        fin = np.isfinite(lw)
        lw, ks = lw[fin], ks[fin]
        k_top = ks.max()
        if np.any(np.abs(x) >= k_top * self.cum.reach):
            raise errors.TiltOutOfRange(f"target {x} is outside the reach of {k_top} steps")
        if not np.any(x):
            return np.zeros(self.d)

        def parts(g):
            L, m, V = self.cum.derivatives(g)
            lc = lw + ks * L
            kap = logsumexp(lc)
            w = np.exp(lc - kap)
            ek = w @ ks
            vk = w @ (ks - ek) ** 2
            return kap, ek * m, ek * V + vk * np.outer(m, m)

        reach = self.cum.reach

        def capped(step):
            # L(g) moves by at most about 1 per step, so the mixture cannot saturate
            size = float(np.abs(step) @ reach)
            return step / size if size > 1.0 else step

        g = capped(np.linalg.solve(self.cum.hessian(np.zeros(self.d)), x)
                   / max(float(np.exp(lw - logsumexp(lw)) @ ks), 1.0))
        kap, grad, hess = parts(g)
        obj = g @ x - kap
        for _ in range(200):
            res = x - grad
            if np.linalg.norm(res) <= 1e-10 * max(1.0, np.linalg.norm(x)):
                return g
            step = capped(np.linalg.solve(hess, res))
            lam = 1.0
            while True:
                g_new = g + lam * step
                kap_n, grad_n, hess_n = parts(g_new)
                obj_n = g_new @ x - kap_n
                if obj_n >= obj - 1e-14 * abs(obj) or lam < 1e-10:
                    break
                lam *= 0.5
            g, kap, grad, hess, obj = g_new, kap_n, grad_n, hess_n, obj_n
        if np.linalg.norm(x - grad) <= 1e-6 * max(1.0, np.linalg.norm(x)):
            return g
        raise errors.TiltOutOfRange(f"tilt solve for target {x} did not converge")

    # -- covering ---------------------------------------------------------

    def cover(self, evaluate, choose_tilt, targets, k_top: int | None = None, max_tilts: int = 200):
        """Resolve every target by greedily adding tilts.

        ``evaluate(gamma, pts)`` returns ``(log_values, trusted)`` for integer
        points ``pts``; ``choose_tilt(x)`` maps a real-space point to a tilt.
        Targets farther than ``k_top`` steps are exactly zero. Returns
        ``(log_values, tilts_used)``.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
        work = np.abs(targets) if self.symmetric else targets
        uniq, inv = np.unique(work, axis=0, return_inverse=True)
        inv = inv.ravel()
        out = np.full(uniq.shape[0], -np.inf)
        done = np.zeros(uniq.shape[0], bool)
        if k_top is not None:
            done |= np.any(np.abs(uniq) > k_top * self.reach_nodes, axis=1)
        tilts = []
        gamma = np.zeros(self.d)
        radius = None
        for _ in range(max_tilts):
            if done.all():
                break
            pending = np.where(~done)[0]
            nearest = uniq[pending][np.argmin(np.linalg.norm(uniq[pending], axis=1))] * self.h
            if tilts:
                nx = np.linalg.norm(nearest)
                push = 0.0 if radius is None or nx == 0 else 0.6 * radius / nx
                try:
                    gamma = choose_tilt(nearest * (1 + push))
                except errors.TiltOutOfRange:
                    gamma = choose_tilt(nearest)
            lv, ok = evaluate(gamma, uniq[pending])
            if not ok.any():
                # untilted pass or pushed tilt missed: aim straight at the nearest target
                gamma = choose_tilt(nearest)
                lv, ok = evaluate(gamma, uniq[pending])
            if not ok.any():
                raise errors.AliasingDetected(f"no target resolved at tilt {gamma}")
            out[pending[ok]] = lv[ok]
            done[pending[ok]] = True
            covered = uniq[pending[ok]] * self.h
            centre = covered.mean(axis=0)
            radius = float(np.max(np.linalg.norm(covered - centre, axis=1)))
            tilts.append(np.asarray(gamma).tolist())
        if not done.all():
            raise errors.AliasingDetected(f"{int((~done).sum())} targets unresolved after {max_tilts} tilts")
        return out[inv], tilts

    def log_values(self, weights, k0: int, targets, rel_tol: float = 1e-6, max_tilts: int = 200,
                   tilt_for=None):
        """``log S(x)`` at integer lattice ``targets``.

        ``weights`` is a 1-D array of ``log w_k`` for ``k = k0, k0+1, ...`` or a
        callable ``gamma -> array`` when the needed range of ``k`` depends on the
        tilt (``gamma=None`` asks for the untilted range). ``tilt_for`` replaces
        the mixture-mean tilt solve. Returns ``(log_values, info)``.
        """
        fixed = not callable(weights)
        if fixed:
            lw0 = np.asarray(weights, dtype=float).ravel()
            fin = np.where(np.isfinite(lw0))[0]
            if fin.size == 0:
                return np.full(np.atleast_2d(targets).shape[0], -np.inf), {"tilts": []}
            k_top = k0 + int(fin[-1])
        else:
            k_top = None

        def get(gamma):
            return lw0 if fixed else np.asarray(weights(gamma), dtype=float).ravel()

        def evaluate(gamma, pts):
            batch = self.tilted_batch(get(gamma)[None, :], k0, gamma, pts)
            lv, ok = batch.log_values(rel_tol)
            return lv[0], ok[0]

        def choose(x):
            if tilt_for is not None:
                return tilt_for(x)
            g = self.solve_tilt(get(np.zeros(self.d)) if fixed else get(None), k0, x)
            if not fixed:
                # weights extended for this tilt may move the mixture; re-solve once
                g = self.solve_tilt(get(g), k0, x)
            return g

        lv, tilts = self.cover(evaluate, choose, targets, k_top, max_tilts)
        return lv, {"tilts": tilts}

    # -- separable kernels, untilted point values -------------------------

    def separable_log_values(self, log_w_row, k0: int, targets, rel_tol: float = 1e-6):
        """Point values for a tensor-product kernel without any d-dimensional grid.

        ``a^{*k}(x) = prod_i h^-1 pi_1^{*k}(x_i)``; each axis uses a 1-D power
        table evaluated only at the requested coordinates.
        """
        factors = self.kernel.axis_factors()
        if factors is None:
            raise errors.ValidationError("kernel is not a tensor product")
        targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
        lw = np.asarray(log_w_row, dtype=float).ravel()
        ks = k0 + np.arange(lw.size)
        fin = np.isfinite(lw)
        scale = float(np.max(lw[fin]))
        keep = fin & (lw - scale > -60.0)
        lo, hi = np.where(keep)[0][[0, -1]]
        ks, coef = ks[lo:hi + 1], np.where(keep[lo:hi + 1], np.exp(lw[lo:hi + 1] - scale), 0.0)
        with np.errstate(divide="ignore"):
            log_coef = np.log(coef)
        tables = []
        for i, f in enumerate(factors):
            kern1 = DensityGrid(f / self.h, self.h, 1.0)
            eng = CompoundSums(kern1, budget=self.budget)
            lcn, kk, _, L = eng._normalise(log_coef[None, :], int(ks[0]), np.zeros(1))
            lo_b, hi_b = eng._box(lcn, kk, np.zeros(1), L)
            n = int(sfft.next_fast_len(int(max(hi_b[0] - lo_b[0] + 1, 2 * eng.reach_nodes[0] + 1))))
            arr = np.zeros(n)
            np.add.at(arr, np.mod(eng.offsets[:, 0], n), np.exp(eng.log_pmf))
            spec = np.fft.fft(arr)
            if self.symmetric:
                spec = spec.real
            coords = np.unique(targets[:, i])
            phase = np.exp(2j * np.pi * np.outer(np.arange(n), np.mod(coords, n)) / n)
            tab = np.empty((ks.size, coords.size))
            blk = max(1, self.budget // n // 2)
            with np.errstate(divide="ignore"):
                logf = np.log(spec.astype(complex))
            for s in range(0, ks.size, blk):
                p = np.exp(ks[s:s + blk, None].astype(float) * logf[None, :])
                p[:, spec == 0] = 0
                tab[s:s + blk] = (p @ phase).real / n
            tables.append((coords, tab))
        prod = np.ones((ks.size, targets.shape[0]))
        for i, (coords, tab) in enumerate(tables):
            prod *= tab[:, np.searchsorted(coords, targets[:, i])] / self.h
        total = coef @ prod
        err = EPS * (2.0 * ks[-1] + 64.0) * coef.sum() * self.h ** -self.d + ALIAS_MASS
        with np.errstate(divide="ignore"):
            lv = np.where(total > err / rel_tol, scale + np.log(np.where(total > 0, total, 1.0)), -np.inf)
        return lv, total > err / rel_tol
