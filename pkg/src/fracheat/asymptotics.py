"""Regimes of ``p(x, t)`` for large ``t``, their predicted laws, and verification reports."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import errors
from .ratefn import LargeDeviations, _sigma_matrix, k_v
from .special import FracParams, _wright_upper, log_trapezoid, log_wright_density


# -- Gaussian limit ------------------------------------------------------------

def _sigma(sigma, d: int) -> np.ndarray:
    s = _sigma_matrix(sigma, d)
    if not np.allclose(s, s.T) or np.any(np.linalg.eigvalsh(0.5 * (s + s.T)) <= 0):
        raise errors.SingularCovariance("sigma must be symmetric positive definite")
    return s


def log_psi(v, s, sigma) -> np.ndarray:
    """``log Psi(v, s)``; ``s`` may be an array."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    d = v.size
    sig = _sigma(sigma, d)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise errors.NonPositiveArgument("s must be positive")
    quad = float(v @ np.linalg.solve(sig, v))
    _, logdet = np.linalg.slogdet(sig)
    return -0.5 * logdet - 0.5 * d * np.log(2 * math.pi * s) - quad / (2 * s)


def psi(v, s: float, sigma) -> float:
    """Centred Gaussian density with covariance ``s * sigma`` at ``v``."""
    return float(np.exp(log_psi(v, s, sigma)))


def normal_limit_constant(v, alpha: float, sigma) -> float:
    """``int_0^inf W_alpha(s) Psi(v, s) ds``.

    For ``v = 0`` the integrand behaves like ``s^{-d/2}`` at the origin, which
    is integrable only in one dimension.
    """
    FracParams(alpha)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    d = v.size
    if d >= 2 and not np.any(v):
        raise errors.DivergentAtOrigin("the integral diverges at s = 0 for v = 0 when d >= 2")
    quad = float(v @ np.linalg.solve(_sigma(sigma, d), v))
    u_hi = math.log(_wright_upper(alpha, -80.0)) + 0.5
    # below the peak: s^{1-d/2} decay for v = 0, Gaussian cut-off otherwise
    u_lo = -160.0 if quad == 0 else min(-5.0, math.log(quad / 400.0))
    rel_sd = math.sqrt(max(2 * math.gamma(1 + alpha) ** 2 / math.gamma(1 + 2 * alpha) - 1, 1e-12))

    def log_f(u):
        s = np.exp(u)
        return (log_wright_density(alpha, s) + u + log_psi(v, s, sigma))[None, :]

    val, _ = log_trapezoid(log_f, u_lo, u_hi, min(0.05, 0.3 * rel_sd), rtol=1e-10)
    return float(np.exp(val[0]))


# -- regimes -----------------------------------------------------------------

class RegimeKind(str, enum.Enum):
    BOUNDED = "bounded"
    SUBNORMAL = "subnormal"
    NORMAL = "normal"
    MODERATE = "moderate"
    LARGE = "large"
    EXTRA_LARGE = "extra_large"


@dataclass(frozen=True)
class Regime:
    kind: RegimeKind
    beta: float | None = None

    def __str__(self) -> str:
        return self.kind.value if self.beta is None else f"{self.kind.value}(beta={self.beta:.4g})"


@dataclass(frozen=True)
class Thresholds:
    """Classification bands; ``x0`` counts lattice units."""

    x0: float = 4.0
    rho0: float = 4.0
    rho: Callable[[float], float] = field(default=lambda t: math.log(t), compare=False)

    def to_dict(self) -> dict:
        return {"x0": self.x0, "rho0": self.rho0, "rho": "log t"}


def classify(x, t: float, alpha: float, h: float = 1.0, thresholds: Thresholds | None = None) -> Regime:
    """Regime of ``(x, t)``.

    Bands are checked in the order Bounded, Large, ExtraLarge, Normal,
    Subnormal, Moderate. The gap between the subnormal band and the normal
    band counts as Normal, so every pair gets exactly one regime.
    """
    if t <= 0:
        raise errors.NonPositiveArgument("t must be positive")
    th = thresholds or Thresholds()
    r = float(np.linalg.norm(np.atleast_1d(x)))
    diffusive = t ** (alpha / 2)
    if r <= th.x0 * h:
        return Regime(RegimeKind.BOUNDED)
    if 1 / th.rho0 <= r / t <= th.rho0:
        return Regime(RegimeKind.LARGE)
    if r > th.rho0 * t:
        return Regime(RegimeKind.EXTRA_LARGE)
    if 1 / th.rho0 <= r / diffusive <= th.rho0:
        return Regime(RegimeKind.NORMAL)
    rho_t = th.rho(t) if t > 1 else 1.0
    if r < diffusive / max(rho_t, th.rho0):
        return Regime(RegimeKind.SUBNORMAL)
    if r < diffusive:
        return Regime(RegimeKind.NORMAL)
    beta = math.log(r) / math.log(t) if t > 1 else 1.0
    return Regime(RegimeKind.MODERATE, beta)


# -- predictions -------------------------------------------------------------

@dataclass
class Prediction:
    """Functional law of one regime.

    ``form`` names the law; ``log_value(x, t)`` returns the log of the law with
    unit constant for power laws, and the full leading exponent otherwise.
    """

    regime: Regime
    form: str
    power: float | None = None
    constants: dict = field(default_factory=dict)
    upper_bound_only: bool = False

    def log_value(self, x, t: float) -> float:
        kind = self.regime.kind
        a, d = self.constants["alpha"], self.constants["d"]
        r = float(np.linalg.norm(np.atleast_1d(x)))
        if kind in (RegimeKind.BOUNDED, RegimeKind.SUBNORMAL):
            if d == 1:
                return -0.5 * a * math.log(t)
            if d == 2:
                arg = math.log(t) if kind is RegimeKind.BOUNDED else math.log(t**a / r**2)
                return -a * math.log(t) + math.log(arg)
            out = -a * math.log(t)
            return out if kind is RegimeKind.BOUNDED else out + (2 - d) * math.log(r)
        if kind is RegimeKind.NORMAL:
            return -0.5 * d * a * math.log(t) + math.log(self.constants["normal_constant"])
        if kind is RegimeKind.MODERATE:
            return -self.constants["K_v"] * t**self.power
        if kind is RegimeKind.LARGE:
            return -self.constants["F"] * t
        c_plus = self.constants.get("c_plus")
        if c_plus is None:
            raise errors.RegimeMismatch("the extra-large bound needs a fitted c_plus")
        return -c_plus * extra_large_scale(x, t, self.constants["p"])

    def to_dict(self) -> dict:
        return {"regime": str(self.regime), "form": self.form, "power": self.power,
                "constants": self.constants, "upper_bound_only": self.upper_bound_only}


def extra_large_scale(x, t: float, p: float) -> float:
    """``|x| (log|x/t|)^{(p-1)/p}``."""
    r = float(np.linalg.norm(np.atleast_1d(x)))
    if r <= t:
        raise errors.RegimeMismatch("extra-large deviations need |x| > t")
    return r * math.log(r / t) ** ((p - 1) / p)


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    d: int
    sigma: np.ndarray
    p: float = 2.0
    large_deviations: LargeDeviations | None = None


def predict(regime: Regime, x, t: float, params: ModelParams) -> Prediction:
    """Law for ``p(x, t)`` in ``regime``; ``x`` is the spatial point."""
    a, d = params.alpha, params.d
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != d:
        raise errors.RegimeMismatch(f"x has {x.size} coordinates, expected {d}")
    consts = {"alpha": a, "d": d, "sigma": np.asarray(params.sigma, dtype=float).tolist()}
    kind = regime.kind
    if kind is RegimeKind.BOUNDED:
        form = {1: "t^(-alpha/2)", 2: "t^(-alpha) log t"}.get(d, "t^(-alpha)")
        return Prediction(regime, form, -a / 2 if d == 1 else -a, consts)
    if kind is RegimeKind.SUBNORMAL:
        if not np.any(x):
            raise errors.RegimeMismatch("subnormal deviations need x != 0")
        form = {1: "t^(-alpha/2)", 2: "t^(-alpha) log(t^alpha/|x|^2)"}.get(d, "t^(-alpha) |x|^(2-d)")
        return Prediction(regime, form, -a / 2 if d == 1 else -a, consts)
    if kind is RegimeKind.NORMAL:
        v = x / t ** (a / 2)
        consts.update(v=v.tolist(), normal_constant=normal_limit_constant(v, a, params.sigma))
        return Prediction(regime, "t^(-d alpha/2) int W(s) Psi(v,s) ds", -d * a / 2, consts)
    if kind is RegimeKind.MODERATE:
        beta = regime.beta
        if beta is None or not a / 2 < beta < 1:
            raise errors.RegimeMismatch(f"moderate deviations need alpha/2 < beta < 1, got {beta}")
        v = x / t**beta
        consts.update(beta=beta, v=v.tolist(), K_v=k_v(a, beta, params.sigma, v))
        return Prediction(regime, "exp(-K_v t^((2 beta - alpha)/(2 - alpha)))",
                          (2 * beta - a) / (2 - a), consts)
    if kind is RegimeKind.LARGE:
        if params.large_deviations is None:
            raise errors.RegimeMismatch("large deviations need a rate-function evaluator")
        v = x / t
        if not np.any(v):
            raise errors.RegimeMismatch("large deviations need v != 0")
        big_f, eta = params.large_deviations.big_f(v)
        consts.update(v=v.tolist(), F=big_f, eta=eta)
        return Prediction(regime, "exp(-F(v) t)", 1.0, consts)
    consts.update(p=params.p, c_plus=None)
    extra_large_scale(x, t, params.p)
    return Prediction(regime, "exp(-c_plus |x| (log|x/t|)^((p-1)/p))", None, consts, upper_bound_only=True)


# -- verification --------------------------------------------------------------

@dataclass
class SamplePlan:
    """Points for one regime: ``x = v * t^scale`` for each ``t`` unless ``points`` is given."""

    t_values: list
    v: list | float = 0.0
    scale: float = 0.0
    points: list | None = None

    def pairs(self, d: int, h: float) -> list[tuple[np.ndarray, float]]:
        if self.points is not None:
            return [(np.atleast_1d(np.asarray(x, dtype=float)), float(t)) for x, t in self.points]
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if v.size == 1 and d > 1:
            v = np.concatenate([v, np.zeros(d - 1)])
        out = []
        for t in self.t_values:
            x = v * float(t) ** self.scale
            out.append((np.rint(x / h) * h, float(t)))  # nearest lattice point
        return out


@dataclass
class RegimeReport:
    regime: str
    prediction: dict
    samples: list
    statistics: dict
    tolerance: dict
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, default=_jsonable))
        return path

    def to_csv(self, path) -> Path:
        path = Path(path)
        keys = ["x", "t", "route", "log_p", "log_pred"]
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, keys, extrasaction="ignore")
            w.writeheader()
            for s in self.samples:
                w.writerow({**s, "x": " ".join(f"{c:.10g}" for c in s["x"])})
        return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return str(obj)


def _evaluate(evaluator, x, t: float) -> tuple[float, str]:
    lp = float(evaluator.p_ml_series_log(x if evaluator.kernel.d > 1 else x[0], t)[0])
    return lp, "series" if lp > -690.0 else "series-log"


def verify(regime: Regime | RegimeKind | str, plan: SamplePlan, evaluator, params: ModelParams,
           tolerance: dict | None = None) -> RegimeReport:
    """Evaluate ``p`` on the plan and test the regime's signature.

    * power laws: slope of ``log p - log(law)`` against ``log t`` within
      ``slope`` of 0, and max/min of the ratios to the law at most ``band``;
    * Normal: ``p / law`` within ``ratio`` of 1;
    * Moderate, Large: ``-log p / t^power`` approaches the constant
      monotonically, final relative gap within ``moderate_gap`` or ``gap``;
    * ExtraLarge: fitted ``c_plus > 0`` whose spread is within ``spread``.
    """
    if isinstance(regime, str):
        regime = Regime(RegimeKind(regime))
    elif isinstance(regime, RegimeKind):
        regime = Regime(regime)
    tol = {"slope": 0.05, "band": 3.0, "ratio": 0.05, "gap": 0.10, "moderate_gap": 0.15, "spread": 0.30}
    tol.update(tolerance or {})
    pairs = plan.pairs(params.d, evaluator.kernel.h)
    kind = regime.kind
    need = 3 if kind in (RegimeKind.MODERATE, RegimeKind.LARGE, RegimeKind.EXTRA_LARGE) else 2
    if len(pairs) < need:
        raise errors.InsufficientSamples(f"{kind.value} needs at least {need} samples")
    samples, preds = [], []
    for x, t in pairs:
        reg = regime
        if kind is RegimeKind.MODERATE and regime.beta is None:
            r = float(np.linalg.norm(x))
            reg = Regime(kind, math.log(r) / math.log(t))
        pred = predict(reg, x, t, params)
        lp, route = _evaluate(evaluator, x, t)
        entry = {"x": x.tolist(), "t": t, "route": route, "log_p": lp}
        if not pred.upper_bound_only:
            entry["log_pred"] = pred.log_value(x, t)
        samples.append(entry)
        preds.append(pred)
    stats: dict = {}
    lp = np.array([s["log_p"] for s in samples])
    ts = np.array([s["t"] for s in samples])
    if kind in (RegimeKind.BOUNDED, RegimeKind.SUBNORMAL):
        resid = lp - np.array([s["log_pred"] for s in samples])
        slope = float(np.polyfit(np.log(ts), resid, 1)[0]) if np.ptp(ts) > 0 else 0.0
        spread = np.exp(resid - resid.mean())
        stats.update(fitted_exponent=preds[0].power + slope, predicted_exponent=preds[0].power,
                     ratio_min=float(spread.min()), ratio_max=float(spread.max()))
        passed = abs(slope) <= tol["slope"] and spread.max() / spread.min() <= tol["band"]
    elif kind is RegimeKind.NORMAL:
        ratio = np.exp(lp - np.array([s["log_pred"] for s in samples]))
        stats.update(ratios=ratio.tolist())
        passed = bool(np.all(np.abs(ratio - 1) <= tol["ratio"]))
    elif kind in (RegimeKind.MODERATE, RegimeKind.LARGE):
        key = "K_v" if kind is RegimeKind.MODERATE else "F"
        target = np.array([p.constants[key] for p in preds])
        fitted = -lp / np.array([t**p.power for t, p in zip(ts, preds)])
        gaps = np.abs(fitted - target) / target
        order = np.argsort(ts)
        stats.update(fitted_constants=fitted.tolist(), predicted_constants=target.tolist(),
                     relative_gaps=gaps.tolist(),
                     fitted_power=float(np.polyfit(np.log(ts), np.log(-lp), 1)[0]),
                     predicted_power=preds[0].power)
        if kind is RegimeKind.MODERATE:
            passed = bool(np.all(np.diff(gaps[order]) <= 0) and gaps[order][-1] <= tol["moderate_gap"])
        else:
            passed = bool(np.all(np.diff(gaps[order]) <= 0) and gaps[order][-1] <= tol["gap"])
    else:
        scales = np.array([extra_large_scale(s["x"], s["t"], params.p) for s in samples])
        c = -lp / scales
        spread = float((c.max() - c.min()) / c.mean())
        stats.update(c_plus=c.tolist(), c_plus_mean=float(c.mean()), spread=spread)
        passed = bool(np.all(c > 0) and spread <= tol["spread"])
        preds[0].constants["c_plus"] = float(c.min())
        for s in samples:
            s["log_pred"] = -float(c.min()) * extra_large_scale(s["x"], s["t"], params.p)
    return RegimeReport(str(regime), preds[0].to_dict(), samples, stats, tol, bool(passed))
