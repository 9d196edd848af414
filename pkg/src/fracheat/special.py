"""Special functions of the one-sided alpha-stable family.

Three representations are used and cross-checked:

* convergent power series (``g`` in powers of ``s^-alpha``; M-Wright in powers
  of ``s``), accurate where the terms do not cancel;
* Zolotarev's integral over ``phi in (0, pi)`` with the positive integrand
  ``A(phi) exp(-A(phi) y)``, accurate in log domain arbitrarily deep into the
  exponentially small tails;
* the leading-order asymptotics, used for tail bounds and diagnostics.

The Mittag-Leffler function on the negative axis uses an extended-precision
Taylor series below a switchover and the algebraic asymptotic series above it.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy.special import gammaln, gammasgn, logsumexp

from . import errors

LOG_TINY = -745.0  # log of the smallest subnormal double


@dataclass(frozen=True)
class FracParams:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise errors.ParameterOutOfRange(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def K(self) -> float:
        a = self.alpha
        return (2 * math.pi * a * (1 - a)) ** -0.5

    @property
    def c1(self) -> float:
        a = self.alpha
        return self.K * a ** (a / (2 * (1 - a)))

    @property
    def c2(self) -> float:
        a = self.alpha
        return (1 - a) * a ** (a / (1 - a))

    @property
    def c3(self) -> float:
        a = self.alpha
        return (2 - a) * a ** (a / (2 - a))


@dataclass(frozen=True)
class SeriesPolicy:
    """Branch switchover for one alpha.

    ``wright_switch``: M-Wright series used for ``s <= wright_switch``;
    ``stable_switch``: stable series used for ``s >= stable_switch``;
    ``ml_switch``: Mittag-Leffler asymptotic series used for ``|z| >= ml_switch``.
    Each switchover has a 20%-wide overlap on which both branches were
    compared at construction.
    """

    alpha: float
    wright_switch: float
    stable_switch: float
    ml_switch: float
    tolerance: float = 1e-9
    series_terms: int = 400
    overlap: float = 0.2

    def __post_init__(self):
        if self.tolerance <= 0:
            raise errors.ValidationError("tolerance must be positive")


# -- Zolotarev integral ---------------------------------------------


def _phi_nodes(levels_lo: int = 26, levels_hi: int = 14, order: int = 16, split: int = 1):
    """Gauss-Legendre nodes on (0, pi), geometrically graded into both ends."""
    half = math.pi / 2
    brk = [0.0] + [half * 2.0**-j for j in range(levels_lo, 0, -1)] + [half]
    brk += [math.pi - half * 2.0**-j for j in range(1, levels_hi + 1)] + [math.pi]
    if split > 1:
        brk = np.concatenate([np.linspace(lo, hi, split + 1)[:-1] for lo, hi in zip(brk[:-1], brk[1:])]
                             + [np.array([math.pi])]).tolist()
    xg, wg = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi in zip(brk[:-1], brk[1:]):
        nodes.append(0.5 * (hi - lo) * xg + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * wg)
    return np.concatenate(nodes), np.concatenate(weights)


@lru_cache(maxsize=64)
def _log_zolotarev_A(alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """``log A(phi)`` and log quadrature weights; the grid gets finer as alpha -> 1."""
    a = alpha
    # log A spans roughly 1/(1 - alpha) units; keep panels a few units wide
    split = max(1, math.ceil(0.12 / (1 - a)))
    phi, w = _phi_nodes(split=split)
    with np.errstate(divide="ignore"):
        la = (a * np.log(np.sin(a * phi)) + (1 - a) * np.log(np.sin((1 - a) * phi))
              - np.log(np.sin(phi))) / (1 - a)
    lw = np.log(w)
    la.setflags(write=False)
    lw.setflags(write=False)
    return la, lw


def _log_zolotarev_integral(alpha: float, log_y: np.ndarray, power: int = 1) -> np.ndarray:
    """``log int_0^pi A^power exp(-A y) dphi`` for each ``y = exp(log_y)``."""
    la, lw = _log_zolotarev_A(alpha)
    out = np.empty(log_y.shape)
    flat = log_y.ravel()
    res = out.ravel()
    # A increases with phi, so only nodes with A*y in [e^-60, max(e^8, A_min*y + 70)]
    # matter; without the A^power factor the lower part cannot be dropped
    key = np.maximum.accumulate(la)
    lo = np.searchsorted(key, -flat - 60.0) if power > 0 else np.zeros(flat.size, int)
    top = np.maximum(-flat + 8.0, np.logaddexp(key[0], math.log(70.0) - flat))
    hi = np.searchsorted(key, top)
    lo = np.minimum(lo, np.maximum(hi - 1, 0))
    hi = np.maximum(hi, lo + 1)
    i = 0
    while i < flat.size:
        width = int(hi[i] - lo[i])
        step = max(1, 2**20 // max(width, 1))
        j = min(flat.size, i + step)
        span = int((hi[i:j] - lo[i:j]).max())
        idx = lo[i:j, None] + np.arange(span)
        inside = idx < hi[i:j, None]
        idx = np.minimum(idx, la.size - 1)
        lai = la[idx]
        with np.errstate(over="ignore"):
            expo = power * lai - np.exp(lai + flat[i:j, None]) + lw[idx]
        res[i:j] = logsumexp(np.where(inside, expo, -np.inf), axis=1)
        i = j
    return res.reshape(log_y.shape)


# -- series ---------------------------------------------------------


def _log_rgamma(z):
    """``log|1/Gamma(z)|`` and its sign; sign 0 at the poles."""
    z = np.asarray(z, dtype=float)
    pole = (z <= 0) & (z == np.round(z))
    with np.errstate(invalid="ignore"):
        lg = np.where(pole, np.inf, gammaln(np.where(pole, 0.5, z)))
        sg = np.where(pole, 0.0, gammasgn(np.where(pole, 0.5, z)))
    return -lg, sg


_SERIES_CHUNK = 1 << 22


def _wright_series_terms(alpha: float, s: np.ndarray, n_terms: int):
    k = np.arange(n_terms)
    lr, sg = _log_rgamma(1 - alpha - alpha * k)
    with np.errstate(divide="ignore"):
        ls = np.log(s)[..., None]
    with np.errstate(invalid="ignore"):
        logmag = k * ls - gammaln(k + 1) + lr
    sign = sg * (-1.0) ** k
    # s == 0: only k == 0 survives
    logmag = np.where(np.isneginf(ls) & (k > 0), -np.inf, logmag)
    logmag = np.where(np.isneginf(ls) & (k == 0), lr[0], logmag)
    return logmag, sign


def _series_sum(logmag, sign):
    """Sum of signed terms given as log-magnitudes; returns (value, condition)."""
    top = np.max(np.where(sign != 0, logmag, -np.inf), axis=-1, keepdims=True)
    scaled = sign * np.exp(logmag - top)
    total = scaled.sum(axis=-1)
    absum = np.abs(scaled).sum(axis=-1)
    top = top[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = absum / np.abs(total)
    # truncation envelope: largest of the final ten terms (single terms can vanish)
    tail = np.abs(scaled[..., -10:]).max(axis=-1)
    with np.errstate(over="ignore"):
        scale = np.exp(top)
    return total * scale, cond, tail * scale


def wright_series(alpha: float, s, n_terms: int = 400):
    """M-Wright series ``sum (-s)^k / (k! Gamma(1 - alpha - alpha k))``.

    Returns ``(value, condition_number, last_term)``.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim == 1 and s.size * n_terms > _SERIES_CHUNK:
        step = max(1, _SERIES_CHUNK // n_terms)
        parts = [wright_series(alpha, s[i:i + step], n_terms) for i in range(0, s.size, step)]
        return tuple(np.concatenate(col) for col in zip(*parts))
    logmag, sign = _wright_series_terms(alpha, s, n_terms)
    return _series_sum(logmag, sign)


def stable_series(alpha: float, x, n_terms: int = 400):
    """Convergent large-argument series of the one-sided stable density."""
    x = np.asarray(x, dtype=float)
    k = np.arange(1, n_terms + 1)
    sn = np.sin(math.pi * alpha * k)
    sign = np.sign(sn) * (-1.0) ** (k - 1)
    with np.errstate(divide="ignore"):
        logmag = (gammaln(alpha * k + 1) - gammaln(k + 1) + np.log(np.abs(sn))
                  - (alpha * k + 1) * np.log(x)[..., None]) - math.log(math.pi)
    sign = np.where(np.abs(sn) < 1e-300, 0.0, sign)
    return _series_sum(logmag, sign)


# -- evaluators -----------------------------------------------------


def _log_wright_integral(alpha: float, s: np.ndarray) -> np.ndarray:
    ls = np.log(s)
    ly = ls / (1 - alpha)
    return alpha / (1 - alpha) * ls - math.log(math.pi * (1 - alpha)) + _log_zolotarev_integral(alpha, ly)


def _log_stable_integral(alpha: float, x: np.ndarray) -> np.ndarray:
    lx = np.log(x)
    ly = -alpha / (1 - alpha) * lx
    return (math.log(alpha / ((1 - alpha) * math.pi)) - lx / (1 - alpha)
            + _log_zolotarev_integral(alpha, ly))


def log_wright_asymptotic(alpha: float, s):
    """Leading large-``s`` asymptotic of ``log W_alpha(s)``."""
    fp = FracParams(alpha)
    s = np.asarray(s, dtype=float)
    return (math.log(fp.c1) + (2 * alpha - 1) / (2 * (1 - alpha)) * np.log(s)
            - fp.c2 * s ** (1 / (1 - alpha)))


def log_stable_asymptotic(alpha: float, x):
    """Leading small-``x`` asymptotic of ``log g_alpha(x)``."""
    fp = FracParams(alpha)
    x = np.asarray(x, dtype=float)
    return (math.log(fp.K) + (2 - alpha) / (2 * (1 - alpha)) * np.log(alpha / x)
            - (1 - alpha) * (x / alpha) ** (alpha / (alpha - 1)))


def _ml_taylor(alpha: float, z: float) -> float:
    x = abs(z)
    if x == 0:
        return 1.0
    big = x ** (1 / alpha)
    dps = int(30 + big / math.log(10))
    with mpmath.workdps(dps):
        za = mpmath.mpf(z)
        am = mpmath.mpf(alpha)
        total = mpmath.mpf(0)
        n = 0
        tiny = mpmath.mpf(10) ** (-(dps - 5))
        while True:
            term = za**n / mpmath.gamma(am * n + 1)
            total += term
            if n * alpha > 3 * big + 10 and abs(term) < tiny * abs(total):
                break
            n += 1
            if n > 100000:
                raise errors.SeriesNotConverged(f"Mittag-Leffler Taylor series at z={z}")
        return float(total)


def _ml_asymptotic(alpha: float, z: float) -> tuple[float, float]:
    """Asymptotic series truncated at the minimum of its envelope.

    Returns (value, envelope of the first omitted term). The envelope
    ``Gamma(alpha n) / (pi |z|^n)`` bounds ``|z^-n / Gamma(1 - alpha n)|``.
    """
    x = abs(z)
    n_opt = max(1, int(min(x ** (1 / alpha) / alpha, 5000)))
    n = np.arange(1, n_opt + 2)
    # stop early once the envelope is below roundoff of the leading term
    log_env = gammaln(alpha * n) - n * math.log(x) - math.log(math.pi)
    small = np.nonzero(log_env < log_env[0] - 40.0)[0]
    if small.size:
        n = n[: small[0] + 1]
    lr, sg = _log_rgamma(1 - alpha * n)
    terms = -sg * np.exp(lr - n * math.log(x)) * (-1.0) ** n
    return float(terms[:-1].sum()), float(math.exp(log_env[n.size - 1]))


@lru_cache(maxsize=64)
def series_policy(alpha: float, tolerance: float = 1e-9) -> SeriesPolicy:
    """Switchover points for ``alpha``, validated on their overlaps."""
    FracParams(alpha)
    grid = np.linspace(0.2, 6.0, 59)
    val, cond, last = wright_series(alpha, grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        good = (cond < 1e3) & (np.abs(last) < 1e-17 * np.abs(val))
    # the usable range starts at the bottom of the grid
    ok = np.where(np.cumprod(good))[0]
    w_sw = float(grid[ok[-1]]) if ok.size else 0.2
    w_sw = min(w_sw, 3.0)
    # stable series in powers of x^-alpha: the same condition in s = x^-alpha
    s_sw = float(w_sw ** (-1 / alpha))
    ml_sw = float(40.0**alpha)
    pol = SeriesPolicy(alpha, w_sw, s_sw, ml_sw, tolerance)
    # overlap checks
    ov = np.linspace((1 - pol.overlap) * w_sw, w_sw, 5)
    ser = wright_series(alpha, ov)[0]
    itg = np.exp(_log_wright_integral(alpha, ov))
    if np.max(np.abs(ser / itg - 1)) > tolerance:
        raise errors.BranchDisagreement(f"M-Wright branches disagree on the overlap for alpha={alpha}")
    for z in (ml_sw, (1 + pol.overlap) * ml_sw):
        ta = _ml_taylor(alpha, -z)
        asy, err = _ml_asymptotic(alpha, -z)
        if abs(ta - asy) > 1e-7 * abs(ta):
            raise errors.BranchDisagreement(
                f"Mittag-Leffler branches disagree at z={-z}: {ta} vs {asy}"
            )
    return pol


def log_wright_density(alpha: float, s, return_branch: bool = False):
    """``log W_alpha(s)`` for ``s >= 0`` (vectorised)."""
    FracParams(alpha)
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise errors.NonPositiveArgument("W_alpha is defined for s >= 0")
    pol = series_policy(alpha)
    out = np.empty(s.shape)
    use_ser = s <= pol.wright_switch
    if np.any(use_ser):
        val, cond, last = wright_series(alpha, s[use_ser], pol.series_terms)
        if np.any(np.abs(last) > 1e-17 * np.abs(val)):
            raise errors.SeriesNotConverged("M-Wright series truncation bound above tolerance")
        out[use_ser] = np.log(val)
    if np.any(~use_ser):
        out[~use_ser] = _log_wright_integral(alpha, s[~use_ser])
    if return_branch:
        return out, np.where(use_ser, "series", "integral")
    return out


def wright_density(alpha: float, s):
    return np.exp(log_wright_density(alpha, s))


def wright_via_stable(alpha: float, s):
    """``W_alpha(s) = (1/alpha) s^{-1/alpha-1} g_alpha(s^{-1/alpha})``."""
    s = np.asarray(s, dtype=float)
    return np.exp(-math.log(alpha) - (1 / alpha + 1) * np.log(s) + log_stable_density(alpha, s ** (-1 / alpha)))


def log_stable_density(alpha: float, x, return_branch: bool = False):
    """``log g_alpha(x)`` for ``x > 0``, Laplace transform ``exp(-lambda^alpha)``."""
    FracParams(alpha)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise errors.NonPositiveArgument("g_alpha is evaluated at x > 0 only")
    pol = series_policy(alpha)
    out = np.empty(x.shape)
    use_ser = x >= pol.stable_switch
    if np.any(use_ser):
        val, cond, last = stable_series(alpha, x[use_ser], pol.series_terms)
        if np.any(np.abs(last) > 1e-17 * np.abs(val)):
            raise errors.SeriesNotConverged("stable series truncation bound above tolerance")
        out[use_ser] = np.log(val)
    if np.any(~use_ser):
        out[~use_ser] = _log_stable_integral(alpha, x[~use_ser])
    if return_branch:
        return out, np.where(use_ser, "series", "integral")
    return out


def stable_density(alpha: float, x):
    return np.exp(log_stable_density(alpha, x))


def stable_cdf(alpha: float, x):
    """``P(S_1 <= x) = (1/pi) int_0^pi exp(-A(phi) x^{-alpha/(1-alpha)}) dphi``."""
    x = np.asarray(x, dtype=float)
    ly = -alpha / (1 - alpha) * np.log(np.where(x > 0, x, 1.0))
    out = np.exp(_log_zolotarev_integral(alpha, ly, power=0)) / math.pi
    return np.where(x > 0, out, 0.0)


def stable_sf(alpha: float, x):
    """``P(S_1 > x)`` without cancellation for large ``x``."""
    x = np.asarray(x, dtype=float)
    la, lw = _log_zolotarev_A(alpha)
    ly = -alpha / (1 - alpha) * np.log(x)
    with np.errstate(over="ignore"):
        vals = -np.expm1(-np.exp(la[None, :] + ly.reshape(-1, 1)))
    return (vals @ np.exp(lw) / math.pi).reshape(x.shape)


def inverse_subordinator_density(alpha: float, t: float, r):
    """Density ``G_t(r)`` of the inverse stable subordinator ``V_t``."""
    r = np.asarray(r, dtype=float)
    if t <= 0 or np.any(r <= 0):
        raise errors.NonPositiveArgument("G_t(r) needs t > 0 and r > 0")
    return np.exp(math.log(t / alpha) - (1 + 1 / alpha) * np.log(r)
                  + log_stable_density(alpha, t * r ** (-1 / alpha)))


def inverse_subordinator_density_scaled(alpha: float, t: float, r):
    """Self-similar form ``t^-alpha W_alpha(r t^-alpha)``."""
    r = np.asarray(r, dtype=float)
    return t**-alpha * wright_density(alpha, r * t**-alpha)


def inverse_subordinator_cdf(alpha: float, t: float, r):
    """``P(V_t <= r) = P(S_1 >= t r^{-1/alpha})``."""
    r = np.asarray(r, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        arg = t * r ** (-1 / alpha)
    return stable_sf(alpha, arg)


def mittag_leffler(alpha: float, z, return_branch: bool = False):
    """``E_alpha(z)`` for real ``z <= 0``."""
    FracParams(alpha)
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr > 0):
        raise errors.ParameterOutOfRange("mittag_leffler supports z <= 0 only")
    pol = series_policy(alpha)
    flat = z_arr.ravel()
    vals = np.empty(flat.shape)
    branch = []
    for i, zi in enumerate(flat):
        if abs(zi) < pol.ml_switch:
            vals[i] = _ml_taylor(alpha, float(zi))
            branch.append("taylor")
        else:
            vals[i], err = _ml_asymptotic(alpha, float(zi))
            if err > 1e-12 * abs(vals[i]):
                raise errors.SeriesNotConverged(f"asymptotic E_alpha at z={zi}: error {err}")
            branch.append("asymptotic")
    vals = vals.reshape(z_arr.shape)
    if np.ndim(z) == 0:
        vals = float(vals)
        branch = branch[0]
    else:
        branch = np.array(branch).reshape(z_arr.shape)
    return (vals, branch) if return_branch else vals


# -- log-domain quadrature in log s ---------------------------------


def log_trapezoid(log_f, u_lo: float, u_hi: float, du: float, rtol: float = 1e-11,
                  max_levels: int = 14, min_levels: int = 2, floor=None, strict: bool = True):
    """Log of ``int exp(log_f(u)) du`` for many rows by step-halving trapezoid.

    ``log_f(u)`` maps a 1-D node array to an array ``(rows, len(u))``. The
    integrands must be smooth and negligible at both ends, which makes the
    plain trapezoid rule converge geometrically. Convergence is declared
    when successive levels agree to ``rtol`` in every row whose value
    exceeds ``floor`` (log scale). Returns ``(log_values, estimated_rel_error)``;
    with ``strict=False`` unconverged rows are returned instead of raising.
    """
    n = max(2, int(math.ceil((u_hi - u_lo) / du)))
    h = (u_hi - u_lo) / n
    u = u_lo + h * np.arange(n + 1)
    acc = logsumexp(log_f(u), axis=-1)  # endpoints are negligible by contract
    est = acc + math.log(h)
    err = np.full(est.shape, np.inf)
    for level in range(max_levels):
        mid = u[:-1] + 0.5 * h
        acc = np.logaddexp(acc, logsumexp(log_f(mid), axis=-1))
        h *= 0.5
        u = np.sort(np.concatenate([u, mid]))
        nxt = acc + math.log(h)
        with np.errstate(invalid="ignore"):
            err = np.abs(np.expm1(nxt - est))
        err = np.where(np.isneginf(nxt) & np.isneginf(est), 0.0, err)
        est = nxt
        live = np.ones(est.shape, bool) if floor is None else est > floor
        if level + 1 >= min_levels and np.all(err[live] <= rtol):
            return est, err
    if not strict:
        return est, err
    raise errors.QuadratureNotConverged(f"trapezoid did not reach rtol={rtol}; worst {np.max(err):.2e}")


def _wright_upper(alpha: float, log_level: float) -> float:
    """An ``s`` beyond which ``log W_alpha < log_level``, located by bisection."""
    def above(x):
        return log_wright_density(alpha, np.array([x]))[0] > log_level
    lo, hi = 1.0 / math.gamma(1 + alpha), 2.0
    while above(hi):
        lo, hi = hi, hi * 2
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if above(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-3 * hi:
            break
    return hi


class MLWeights:
    """Weights ``m_k(t) = t^{alpha k} E_alpha^{(k)}(-t^alpha) / k!`` in log domain.

    Computed as ``(1/k!) int W_alpha(s) (s T)^k e^{-sT} ds`` with ``T = t^alpha``
    by step-halving trapezoid in ``u = log s``. Extending to larger ``k`` is
    guarded by a lock; computed entries never change.
    """

    def __init__(self, alpha: float, t: float, k_max: int = 64, rtol: float = 1e-11):
        FracParams(alpha)
        if t <= 0:
            raise errors.NonPositiveArgument("t must be positive")
        self.alpha = float(alpha)
        self.t = float(t)
        self.T = float(t) ** alpha
        self.rtol = rtol
        self._lock = threading.Lock()
        self._log = np.empty(0)
        self.extend(k_max)

    @property
    def k_max(self) -> int:
        return self._log.size - 1

    def log_weights(self, k_max: int | None = None) -> np.ndarray:
        if k_max is not None and k_max > self.k_max:
            self.extend(k_max)
        return self._log if k_max is None else self._log[: k_max + 1]

    def extend(self, k_max: int) -> None:
        with self._lock:
            start = self._log.size
            if k_max < start:
                return
            new = np.concatenate([self._compute(np.arange(i, min(i + 256, k_max + 1)))
                                  for i in range(start, k_max + 1, 256)])
            self._log = np.concatenate([self._log, new])
            self._log.setflags(write=False)

    def _compute(self, k: np.ndarray) -> np.ndarray:
        a, T = self.alpha, self.T
        logT = math.log(T)
        kmax = int(k.max())
        # peak of s^k e^{-sT} W(s) lies below min(k/T, W-dominated bound)
        w_bound = (max(kmax, 1) * (1 - a) / FracParams(a).c2) ** (1 - a) * 2 + 2
        s_hi = min((kmax + math.sqrt(120 * kmax + 1) + 80) / T, w_bound)
        s_hi = max(s_hi, _wright_upper(a, -60.0))
        u_hi = math.log(s_hi) + 0.5
        u_lo = -40.0 - max(0.0, logT)
        # relative spread of W from its moments E s^n = n!/Gamma(1 + alpha n);
        # it shrinks like sqrt(1 - alpha) and sets the step near the bulk
        rel_sd = math.sqrt(max(2 * math.gamma(1 + a) ** 2 / math.gamma(1 + 2 * a) - 1, 1e-12))
        width = min(rel_sd, 1.0 / math.sqrt(kmax + 1))
        du = min(0.05, 0.3 * width)
        kk = k[:, None].astype(float)
        lgk = gammaln(kk + 1)

        def log_f(u):
            lw = log_wright_density(a, np.exp(u))
            return lw + u + kk * (u + logT) - T * np.exp(u) - lgk

        # trim the ends: the integrands are unimodal in u, so cut outside the
        # scan nodes where some row is within e^-60 of its own peak
        scan = np.arange(u_lo, u_hi + du, du)
        lv = log_f(scan)
        near = np.where(np.any(lv > lv.max(axis=-1, keepdims=True) - 60.0, axis=0))[0]
        u_hi = min(u_hi, float(scan[min(near[-1] + 2, scan.size - 1)]))
        if k.min() > 0:
            # s^k kills the lower end as well once every row has a factor s
            u_lo = max(u_lo, float(scan[max(near[0] - 2, 0)]))
        # the log integrand cancels terms of size k log k; their roundoff sets a floor
        floor = 50 * np.finfo(float).eps * (kmax * (abs(u_hi + logT) + 1.0) + T * math.exp(u_hi))
        vals, _ = log_trapezoid(log_f, u_lo, u_hi, du, rtol=max(self.rtol, floor))
        return vals

    def weight(self, k: int) -> float:
        return float(np.exp(self.log_weights(k)[k]))


def ml_weight(alpha: float, k: int, t: float) -> float:
    """``m_k(t) = (1/k!) int_0^inf G_t(r) r^k e^{-r} dr``."""
    if int(k) != k or k < 0:
        raise errors.ValidationError("k must be a nonnegative integer")
    return MLWeights(alpha, t, k_max=int(k)).weight(int(k))


@lru_cache(maxsize=32)
def ml_weights(alpha: float, t: float) -> MLWeights:
    """Shared, lazily extended weight table for ``(alpha, t)``."""
    return MLWeights(float(alpha), float(t))
