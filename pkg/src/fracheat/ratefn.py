"""Large-deviation functions of the lattice kernel.

The cumulant ``L`` is a finite lattice sum, so every quantity here is
evaluated against exactly the kernel used by the heat-kernel and
subordination modules.

Two identities keep the solvers simple. At the Legendre maximiser
``gamma = grad I(w)`` one has ``I(w) - w.grad I(w) = -L(gamma)``, so the
fixed point for ``xi_v`` reads ``log xi = -L(gamma*(xi v))``. The same
envelope argument gives ``F_v'(eta) = c2/(1-alpha) eta^{alpha/(1-alpha)}
+ 1 - 1/xi(v/eta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from . import errors
from .kernel import DensityGrid, covariance
from .special import FracParams


class Cumulant:
    """``L(gamma) = log(h^d sum_x exp(gamma.x) a(x))`` with gradient and Hessian."""

    def __init__(self, kernel: DensityGrid):
        self.kernel = kernel
        self.d = kernel.d
        mask = kernel.values > 0
        grids = np.meshgrid(*[kernel.axis_coords(i) for i in range(self.d)], indexing="ij")
        self.points = np.stack([g[mask] for g in grids], axis=-1)  # (n, d)
        self.log_pmf = np.log(kernel.values[mask]) + self.d * math.log(kernel.h)
        self.log_pmf -= logsumexp(self.log_pmf)
        # support half-width per axis; the mean of a tilt stays strictly inside
        self.reach = np.abs(self.points).max(axis=0)

    def _weights(self, gamma):
        g = np.atleast_1d(np.asarray(gamma, dtype=float))
        if g.shape[-1] != self.d:
            raise errors.ValidationError(f"gamma must have {self.d} components")
        return self.log_pmf + self.points @ g

    def __call__(self, gamma) -> float:
        return float(logsumexp(self._weights(gamma)))

    def values(self, gammas) -> np.ndarray:
        """Vectorised ``L`` over an array of shape ``(m, d)`` (or ``(m,)`` for d=1)."""
        g = np.asarray(gammas, dtype=float).reshape(-1, self.d)
        return logsumexp(self.log_pmf[None, :] + g @ self.points.T, axis=1)

    def derivatives(self, gamma):
        """``(L, grad L, Hess L)`` at one ``gamma``."""
        expo = self._weights(gamma)
        L = logsumexp(expo)
        w = np.exp(expo - L)
        mean = w @ self.points
        cen = self.points - mean
        hess = (cen * w[:, None]).T @ cen
        return float(L), mean, hess

    def grad(self, gamma) -> np.ndarray:
        return self.derivatives(gamma)[1]

    def hessian(self, gamma) -> np.ndarray:
        return self.derivatives(gamma)[2]

    @property
    def sigma(self) -> np.ndarray:
        return covariance(self.kernel).sigma


@dataclass
class RateFunction:
    """Legendre transform ``I(v) = max_gamma (gamma.v - L(gamma))``."""

    cumulant: Cumulant
    tolerance: float = 1e-12
    max_iter: int = 100
    _sigma_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._sigma_inv = np.linalg.inv(self.cumulant.hessian(np.zeros(self.cumulant.d)))

    def _vec(self, v) -> np.ndarray:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.shape != (self.cumulant.d,) or not np.all(np.isfinite(v)):
            raise errors.ValidationError(f"v must be a finite {self.cumulant.d}-vector")
        return v

    def in_domain(self, v) -> bool:
        """``I(v) < inf`` exactly when ``v`` lies inside the support hull."""
        v = self._vec(v)
        return bool(np.all(np.abs(v) < self.cumulant.reach))

    def legendre(self, v, gamma0=None):
        """``(I(v), gamma*)`` by damped Newton on the concave objective."""
        v = self._vec(v)
        if not self.in_domain(v):
            raise errors.ParameterOutOfRange(f"v={v} lies outside the kernel support hull; I(v) is infinite")
        if not np.any(v):
            return 0.0, np.zeros_like(v)
        cum = self.cumulant
        g = self._sigma_inv @ v if gamma0 is None else np.array(gamma0, dtype=float)
        L, grad, hess = cum.derivatives(g)
        obj = g @ v - L
        if not np.isfinite(obj):
            g = np.zeros_like(v)
            L, grad, hess = cum.derivatives(g)
            obj = 0.0
        for _ in range(self.max_iter):
            res = v - grad
            if np.linalg.norm(res) <= self.tolerance * max(1.0, np.linalg.norm(v)):
                return float(obj), g
            step = np.linalg.solve(hess, res)
            lam = 1.0
            while True:
                g_new = g + lam * step
                L_new, grad_new, hess_new = cum.derivatives(g_new)
                obj_new = g_new @ v - L_new
                if obj_new >= obj - 1e-15 * abs(obj) or lam < 1e-12:
                    break
                lam *= 0.5
            g, L, grad, hess, obj = g_new, L_new, grad_new, hess_new, obj_new
        res = np.linalg.norm(v - grad)
        if res <= 1e3 * self.tolerance * max(1.0, np.linalg.norm(v)):
            return float(obj), g
        raise errors.NoConvergence(f"Legendre solve at v={v}: last gamma={g}, gradient residual {res:.3e}")

    def __call__(self, v) -> float:
        return self.legendre(v)[0]

    def grad(self, v) -> np.ndarray:
        """``grad I(v) = gamma*(v)`` (envelope theorem)."""
        return self.legendre(v)[1]


class LargeDeviations:
    """``xi_v``, ``Phi``, ``F_v``, ``eta(v)`` and ``bigF(v)`` for one alpha."""

    def __init__(self, rate: RateFunction, alpha: float):
        self.rate = rate
        self.cumulant = rate.cumulant
        self.frac = FracParams(alpha)
        self.alpha = float(alpha)

    # -- xi_v ---------------------------------------------------------

    def _fixed_point(self, xi: float, v: np.ndarray) -> float:
        w = xi * v
        if not self.rate.in_domain(w):
            return math.inf
        _, gamma = self.rate.legendre(w)
        return math.log(xi) + self.cumulant(gamma)

    def xi_v(self, v, bracket=(0.5, 2.0)) -> float:
        v = self.rate._vec(v)
        if not np.any(v):
            raise errors.ValidationError("xi_v needs v != 0")
        lo, hi = bracket
        f_lo, f_hi = self._fixed_point(lo, v), self._fixed_point(hi, v)
        while f_lo > 0 or f_hi < 0:
            if f_lo > 0:
                lo /= 4
                f_lo = self._fixed_point(lo, v)
            if f_hi < 0:
                hi *= 4
                f_hi = self._fixed_point(hi, v)
            if lo < 1e-8 or hi > 1e8:
                raise errors.BracketNotFound(f"no sign change for xi_v within [1e-8, 1e8] at v={v}")
        # beyond the hull the function is +inf; pull hi back inside first
        while not math.isfinite(f_hi):
            mid = math.sqrt(lo * hi) if lo > 0 else hi / 2
            f_mid = self._fixed_point(mid, v)
            if f_mid < 0:
                lo, f_lo = mid, f_mid
            else:
                hi, f_hi = mid, f_mid
        return optimize.brentq(self._fixed_point, lo, hi, args=(v,), xtol=1e-15, rtol=1e-14, maxiter=200)

    # -- Phi ----------------------------------------------------------

    def phi(self, v) -> float:
        v = self.rate._vec(v)
        if not np.any(v):
            return 0.0
        xi = self.xi_v(v)
        return 1.0 - (1.0 + math.log(xi) - self.rate(xi * v)) / xi

    def phi_grad(self, v) -> np.ndarray:
        """``grad Phi(v) = gamma*(xi_v v)``."""
        v = self.rate._vec(v)
        if not np.any(v):
            return np.zeros_like(v)
        return self.rate.grad(self.xi_v(v) * v)

    # -- F_v -----------------------------------------------------------

    def f_v(self, v, eta: float) -> float:
        if eta <= 0:
            raise errors.NonPositiveArgument("eta must be positive")
        v = self.rate._vec(v)
        return self.frac.c2 * eta ** (1 / (1 - self.alpha)) + eta * self.phi(v / eta)

    def f_v_prime(self, v, eta: float) -> float:
        v = self.rate._vec(v)
        a = self.alpha
        return self.frac.c2 / (1 - a) * eta ** (a / (1 - a)) + 1.0 - 1.0 / self.xi_v(v / eta)

    def big_f(self, v) -> tuple[float, float]:
        """``(bigF(v), eta(v))``: golden-section bracket, then bisection on ``F_v'``."""
        v = self.rate._vec(v)
        if not np.any(v):
            raise errors.ValidationError("bigF is defined for v != 0")
        # eta must keep v/eta inside the hull
        eta_min = float(np.max(np.abs(v) / self.cumulant.reach)) * (1 + 1e-9)
        lo = max(eta_min * 1.0001, 1e-8)

        def fun(log_eta):
            return self.f_v(v, math.exp(log_eta))

        a, c = math.log(lo), math.log(lo) + 1.0
        while fun(c) < fun(0.5 * (a + c)):
            c += 2.0
            if c > math.log(1e8):
                raise errors.MinimizerAtBoundary("F_v decreases up to eta=1e8")
        res = optimize.minimize_scalar(fun, bracket=(a, 0.5 * (a + c), c), method="golden", tol=1e-6)
        eta0 = math.exp(res.x)
        if eta0 <= lo * 1.0001:
            raise errors.MinimizerAtBoundary("minimiser of F_v sits at the hull boundary")
        left, right = eta0 / 1.5, eta0 * 1.5
        left = max(left, lo)
        while self.f_v_prime(v, left) > 0:
            left = max(lo, left / 1.5)
            if left == lo:
                raise errors.MinimizerAtBoundary("F_v' positive at the lower end")
        while self.f_v_prime(v, right) < 0:
            right *= 1.5
        eta = optimize.bisect(lambda e: self.f_v_prime(v, e), left, right, xtol=1e-14, rtol=1e-14, maxiter=300)
        return self.f_v(v, eta), eta

    # -- independent routes used for cross-checks ---------------------

    def phi_direct(self, v) -> float:
        """``Phi(v) = sup_gamma [gamma.v - (e^{L(gamma)} - 1)]`` by a generic optimiser."""
        v = self.rate._vec(v)

        def neg(g):
            return -(g @ v - math.expm1(self.cumulant(g)))

        res = optimize.minimize(neg, x0=np.zeros_like(v), method="BFGS",
                                options={"gtol": 1e-13, "maxiter": 1000})
        return float(-res.fun)

    def big_f_direct(self, v) -> float:
        """Minimum of ``F_v`` from ``phi_direct`` and bounded Brent search in ``log eta``."""
        v = self.rate._vec(v)
        a = self.alpha
        c2 = self.frac.c2

        def fun(le):
            eta = math.exp(le)
            return c2 * eta ** (1 / (1 - a)) + eta * self.phi_direct(v / eta)

        eta_min = float(np.max(np.abs(v) / self.cumulant.reach))
        lo = math.log(max(eta_min, 1e-8)) + 1e-6
        res = optimize.minimize_scalar(fun, bounds=(lo, lo + 12.0), method="bounded",
                                       options={"xatol": 1e-10})
        return float(res.fun)


def _sigma_matrix(sigma, d: int) -> np.ndarray:
    s = np.atleast_2d(np.asarray(sigma, dtype=float))
    if s.shape == (1, 1) and d > 1:
        s = s[0, 0] * np.eye(d)
    if s.shape != (d, d):
        raise errors.ValidationError("sigma must be a scalar or a d x d matrix")
    return s


def k_v(alpha: float, beta: float, sigma, v) -> float:
    """Moderate-deviation constant ``c3(alpha) ((1/2) sigma^-1 v.v)^{1/(2-alpha)}``."""
    fp = FracParams(alpha)
    if not alpha / 2 < beta < 1:
        raise errors.ParameterOutOfRange(f"beta must lie in (alpha/2, 1), got {beta}")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.any(v):
        raise errors.ValidationError("K_v needs v != 0")
    s = _sigma_matrix(sigma, v.size)
    quad = 0.5 * float(v @ np.linalg.solve(s, v))
    return fp.c3 * quad ** (1 / (2 - alpha))


def k_v_numeric(alpha: float, beta: float, sigma, v, t: float = 1.0) -> float:
    """``min_s f(s, t) / t^{(2 beta - alpha)/(2 - alpha)}`` with
    ``f(s,t) = (1/2)(sigma^-1 v, v) t^{2 beta - alpha} / s + c2 s^{1/(1-alpha)}``."""
    fp = FracParams(alpha)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    s_mat = _sigma_matrix(sigma, v.size)
    quad = 0.5 * float(v @ np.linalg.solve(s_mat, v))
    scale = t ** (2 * beta - alpha)

    def f(ls):
        s = math.exp(ls)
        return quad * scale / s + fp.c2 * s ** (1 / (1 - alpha))

    s_guess = (quad * scale * (1 - alpha) / fp.c2) ** ((1 - alpha) / (2 - alpha))
    c = math.log(s_guess)
    res = optimize.minimize_scalar(f, bracket=(c - 1, c, c + 1), method="brent", tol=1e-14)
    return float(res.fun) / t ** ((2 * beta - alpha) / (2 - alpha))
