"""The acceptance suite: twelve quantitative checks, each returning a ``CriterionResult``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erfcx

from . import mc_oracle as mc
from . import special
from .asymptotics import (ModelParams, Regime, RegimeKind, SamplePlan, normal_limit_constant, psi,
                          verify)
from .heatkernel import HeatKernelEvaluator
from .kernel import DensityGrid, KernelSpec, build_kernel, convolution_power, covariance
from .ratefn import Cumulant, LargeDeviations, RateFunction
from .subordination import FracKernelEvaluator

LOG_FLOOR = math.log(1e-280)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}  {self.name}  ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": bool(self.passed),
                "details": self.details}


def _kernel(d: int = 1, h: float = 1.0 / 16.0, p: float = 2.0) -> DensityGrid:
    return build_kernel(KernelSpec(d=d, h=h, p=p))


# -- 1 -------------------------------------------------------------------------

def _series_extent(ev: FracKernelEvaluator, t: float) -> int:
    """Largest lattice index with ``p > 1e-280`` (``p`` decreases in ``|x|``)."""
    def log_p(j: int) -> float:
        return float(ev.p_ml_series_log(np.array([j * ev.kernel.h]), t)[0])

    lo, hi = 0, 16
    while log_p(hi) > LOG_FLOOR:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (mid, hi) if log_p(mid) > LOG_FLOOR else (lo, mid)
    return lo


def representation_equivalence(alphas=(0.3, 0.5, 0.7), times=(1.0, 10.0, 100.0),
                               tolerance: float = 1e-5) -> tuple[bool, dict]:
    kernel = _kernel()
    rows = []
    for alpha in alphas:
        ev = FracKernelEvaluator(kernel, alpha)
        for t in times:
            n = _series_extent(ev, t)
            j = np.arange(0, n + 1)[:, None]  # the kernel is symmetric
            ls, _ = ev.engine.log_values(ev._series_weights(t), 1, j, ev.rel_tol,
                                         tilt_for=lambda x, t=t, ev=ev: ev.series_tilt(x, t))
            keep = ls > LOG_FLOOR
            lq, _ = ev.engine.cover(lambda g, pts, t=t, ev=ev: ev._quadrature(t, g, pts),
                                    lambda x, t=t, ev=ev: ev.series_tilt(x, t), j[keep])
            rel = float(np.max(np.abs(np.expm1(lq - ls[keep]))))
            rows.append({"alpha": alpha, "t": t, "points": int(2 * keep.sum() - 1),
                         "x_max": float(n * kernel.h), "max_rel_discrepancy": rel})
    worst = max(r["max_rel_discrepancy"] for r in rows)
    return worst <= tolerance, {"configurations": rows, "worst": worst, "tolerance": tolerance}


# -- 2 -------------------------------------------------------------------------

def special_identities(alphas=(0.3, 0.5, 0.7, 0.9)) -> tuple[bool, dict]:
    rows = []
    ok = True
    for a in alphas:
        # integrals in u = log(argument); the stable density has an x^-alpha tail
        ig, _ = special.log_trapezoid(
            lambda u: (special.log_stable_density(a, np.exp(u)) + u)[None, :],
            -12.0, 60.0 / a, 0.02, rtol=1e-11)
        mass_g = math.exp(ig[0])  # the neglected tail is about exp(-60)
        u_hi = math.log(special._wright_upper(a, -80.0)) + 0.5
        iw, _ = special.log_trapezoid(
            lambda u: (special.log_wright_density(a, np.exp(u)) + u)[None, :],
            -60.0, u_hi, 0.02, rtol=1e-11)
        mass_w = math.exp(iw[0])
        w0 = float(special.wright_density(a, np.array([0.0]))[0])
        pol = special.series_policy(a)
        ov = np.linspace((1 - pol.overlap) * pol.wright_switch, pol.wright_switch, 9)
        agree = float(np.max(np.abs(special.wright_series(a, ov)[0] / special.wright_via_stable(a, ov) - 1)))
        row = {"alpha": a, "int_g_minus_1": mass_g - 1, "int_W_minus_1": mass_w - 1,
               "W0_error": w0 * math.gamma(1 - a) - 1, "overlap_agreement": agree}
        ok &= abs(mass_g - 1) <= 1e-8 and abs(mass_w - 1) <= 1e-8
        ok &= abs(row["W0_error"]) <= 1e-8 and agree <= 1e-8
        rows.append(row)
    x = np.logspace(-2, 3, 60)
    g_exact = x**-1.5 * np.exp(-1 / (4 * x)) / (2 * math.sqrt(math.pi))
    g_err = float(np.max(np.abs(special.stable_density(0.5, x) / g_exact - 1)))
    z = np.concatenate([np.linspace(0, 10, 41), np.logspace(1, 3, 20)])
    e_err = float(np.max(np.abs(special.mittag_leffler(0.5, -z) / erfcx(z) - 1)))
    ok &= g_err <= 1e-7 and e_err <= 1e-7
    return ok, {"per_alpha": rows, "half_stable_closed_form": g_err, "half_mittag_leffler_erfcx": e_err}


# -- 3 -------------------------------------------------------------------------

def mass_identity(alpha: float = 0.5, times=(0.1, 1.0, 10.0, 100.0), tolerance: float = 1e-6):
    ev = FracKernelEvaluator(_kernel(), alpha)
    rows = []
    for t in times:
        sol = ev.assemble_solution(t)
        rows.append({"t": t, "atom": sol.atom, "mass": sol.p.mass,
                     "defect": sol.atom + sol.p.mass - 1})
    worst = max(abs(r["defect"]) for r in rows)
    return worst <= tolerance, {"alpha": alpha, "rows": rows, "worst": worst}


# -- 4 -------------------------------------------------------------------------

def _aligned(p: DensityGrid, q: DensityGrid) -> tuple[np.ndarray, np.ndarray]:
    n = max(p.half_extent[0], q.half_extent[0])
    out = []
    for g in (p, q):
        m = g.half_extent[0]
        out.append(np.pad(g.values, (n - m, n - m)))
    return out[0], out[1]


def alpha_to_one(alpha: float = 0.99, t: float = 5.0, tolerance: float = 0.03):
    kernel = _kernel()
    ev = FracKernelEvaluator(kernel, alpha)
    p, q = _aligned(ev.p_ml_series_grid(t), ev.heat.q_grid(t))
    gap = float(np.max(np.abs(p - q)) / q.max())
    return gap <= tolerance, {"alpha": alpha, "t": t, "max_gap_over_max_q": gap}


# -- 5 - 9: regimes --------------------------------------------------------------

def _params(ev: FracKernelEvaluator, large: bool = False) -> ModelParams:
    ld = LargeDeviations(RateFunction(ev.cumulant), ev.alpha) if large else None
    return ModelParams(ev.alpha, ev.kernel.d, ev.cumulant.sigma, large_deviations=ld)


def bounded_regime(alpha: float = 0.5, times=(1e2, 1e3, 1e4)):
    out, ok = {}, True
    for d, h in ((1, 1.0 / 16.0), (2, 0.5), (3, 0.5)):
        ev = FracKernelEvaluator(_kernel(d, h), alpha)
        tol = {"slope": 0.05} if d == 1 else {"slope": math.inf, "band": 3.0}
        rep = verify(RegimeKind.BOUNDED, SamplePlan(list(times)), ev, _params(ev), tol)
        out[f"d={d}"] = rep.statistics | {"passed": rep.passed}
        ok &= rep.passed
    return ok, out


def normal_regime(alpha: float = 0.5, t: float = 1e4, vs=(0.0, 0.5, 1.0)):
    ev = FracKernelEvaluator(_kernel(), alpha)
    plan = SamplePlan([t], points=[([v * t ** (alpha / 2)], t) for v in vs])
    rep = verify(RegimeKind.NORMAL, plan, ev, _params(ev), {"ratio": 0.05})
    return rep.passed, rep.statistics | {"v": list(vs), "t": t}


def moderate_regime(alpha: float = 0.5, beta: float = 0.75, times=(1e2, 1e3, 1e4)):
    ev = FracKernelEvaluator(_kernel(), alpha)
    plan = SamplePlan(list(times), v=1.0, scale=beta)
    rep = verify(Regime(RegimeKind.MODERATE, beta), plan, ev, _params(ev), {"moderate_gap": 0.15})
    return rep.passed, rep.statistics


def large_regime(alpha: float = 0.5, v: float = 0.5, times=(50.0, 100.0, 150.0)):
    ev = FracKernelEvaluator(_kernel(), alpha)
    params = _params(ev, large=True)
    rep = verify(RegimeKind.LARGE, SamplePlan(list(times), v=v, scale=1.0), ev, params, {"gap": 0.10})
    big_f = params.large_deviations.big_f(v)[0]
    direct = params.large_deviations.big_f_direct(v)
    agree = abs(big_f - direct)
    return rep.passed and agree <= 1e-6, rep.statistics | {"F": big_f, "F_direct": direct, "F_agreement": agree}


def extra_large_regime(alpha: float = 0.5, t: float = 20.0, ratios=(5.0, 10.0, 20.0)):
    ev = FracKernelEvaluator(_kernel(), alpha)
    plan = SamplePlan([t], points=[([r * t], t) for r in ratios])
    rep = verify(RegimeKind.EXTRA_LARGE, plan, ev, _params(ev), {"spread": 0.30})
    return rep.passed, rep.statistics


# -- 10 ------------------------------------------------------------------------

def rate_numerics(alpha: float = 0.5, instances: int = 100, seed: int = 7):
    rng = np.random.default_rng(seed)
    out, ok = {}, True
    for d, h in ((1, 1.0 / 16.0), (2, 0.5)):
        kernel = _kernel(d, h)
        cum = Cumulant(kernel)
        rate = RateFunction(cum)
        hess_gap = float(np.max(np.abs(cum.hessian(np.zeros(d)) - covariance(kernel).sigma)))
        grad_err = 0.0
        for _ in range(10):
            v = rng.uniform(-2.0, 2.0, d)
            g = rate.grad(v)
            eps = 1e-5
            fd = np.array([(rate(v + eps * e) - rate(v - eps * e)) / (2 * eps) for e in np.eye(d)])
            grad_err = max(grad_err, float(np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1e-3))))
        out[f"d={d}"] = {"hessian_vs_covariance": hess_gap, "grad_rel_error": grad_err}
        ok &= hess_gap <= 1e-8 and grad_err <= 1e-5
    cum = Cumulant(_kernel())
    ld = LargeDeviations(RateFunction(cum), alpha)
    fails = {"I": 0, "Phi": 0, "F_v": 0}
    for _ in range(instances):
        a, b = rng.uniform(-4.0, 4.0, 2)
        m = 0.5 * (a + b)
        slack = 1e-10
        fails["I"] += ld.rate(m) > 0.5 * (ld.rate(a) + ld.rate(b)) + slack
        fails["Phi"] += ld.phi(m) > 0.5 * (ld.phi(a) + ld.phi(b)) + slack
        v = rng.uniform(0.1, 3.0)
        e1, e2 = np.exp(rng.uniform(-1.0, 2.0, 2)) + np.abs(v) / cum.reach[0]
        em = 0.5 * (e1 + e2)
        fails["F_v"] += ld.f_v(v, em) > 0.5 * (ld.f_v(v, e1) + ld.f_v(v, e2)) + slack
    ok &= not any(fails.values())
    out["convexity_failures"] = {k: int(n) for k, n in fails.items()}
    out["instances"] = instances
    return ok, out


# -- 11 ------------------------------------------------------------------------

def monte_carlo(alpha: float = 0.5, n: int = 10**6, seed: int = 2026, z_max: float = 3.0):
    root = mc.RngStream(seed)
    out = {}
    # stable law: bins of equal reference probability keep every bin populated
    s = mc.sample_stable(alpha, n, root.spawn(0))
    qs = np.linspace(0.0, 1.0, 41)[1:-1]
    edges = np.concatenate([[0.0], np.quantile(s, qs), [np.inf]])
    counts = np.histogram(s, bins=edges)[0]
    cdf = special.stable_cdf(alpha, edges[1:-1])
    pi = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
    z_stable = (counts / n - pi) / np.sqrt(pi * (1 - pi) / n)
    out["stable_max_z"] = float(np.max(np.abs(z_stable)))
    v = mc.sample_inverse_subordinator(alpha, 1.0, n, root.spawn(1))
    edges = np.linspace(0.0, 4.0, 41)
    dens = mc.EmpiricalDensity.from_samples(v, edges)
    pi = np.diff(special.inverse_subordinator_cdf(alpha, 1.0, np.maximum(edges, 1e-300)))
    out["inverse_max_z"] = float(np.max(np.abs(dens.z_scores(pi))))
    ev = FracKernelEvaluator(_kernel(), alpha)
    ok = out["stable_max_z"] <= z_max and out["inverse_max_z"] <= z_max
    for i, t in enumerate((1.0, 10.0)):
        smp = mc.sample_timechanged(alpha, t, n, root.spawn(2 + i), ev.kernel)
        dens = mc.lattice_density(smp, 160, 16)
        pi = mc.lattice_bin_probabilities(ev.p_ml_series_grid(t), dens.edges)
        z = float(np.max(np.abs(dens.z_scores(pi))))
        freq, se = mc.proportion(smp.atom, n)
        atom = ev.atom(t)
        sd = math.sqrt(atom * (1 - atom) / n)
        out[f"t={t:g}"] = {"max_z": z, "atom_frequency": freq, "atom": atom,
                           "atom_z": (freq - atom) / sd}
        ok &= z <= z_max and abs(freq - atom) <= 3 * sd
    out.update(n=n, seed=seed)
    return ok, out


# -- 12 ------------------------------------------------------------------------

ROUNDOFF = 1e-12


def local_limit(powers=(16, 64, 256), p: float = 2.0, threshold: float = 0.01):
    kernel = _kernel(p=p)
    sigma = covariance(kernel).sigma
    gaps = []
    for k in powers:
        ak = convolution_power(kernel, k)
        x = ak.axis_coords(0)
        v = x / math.sqrt(k)
        ref = np.array([psi(vi, 1.0, sigma) for vi in v])
        gaps.append(float(np.max(np.abs(math.sqrt(k) * ak.values - ref))))
    # once the gap reaches roundoff, "decreasing" means "stays at roundoff"
    steps = np.diff(gaps)
    decreasing = bool(np.all((steps < 0) | (np.maximum(gaps[:-1], gaps[1:]) <= ROUNDOFF)))
    return decreasing and gaps[-1] < threshold, {"k": list(powers), "max_gap": gaps, "p": p,
                                                  "roundoff_floor": ROUNDOFF}


CRITERIA: dict[int, tuple[str, Callable[[], tuple[bool, dict]]]] = {
    1: ("representation equivalence", representation_equivalence),
    2: ("special-function identities", special_identities),
    3: ("mass and atom identity", mass_identity),
    4: ("alpha -> 1 degeneration", alpha_to_one),
    5: ("bounded-x regime", bounded_regime),
    6: ("normal deviations", normal_regime),
    7: ("moderate deviations", moderate_regime),
    8: ("large deviations", large_regime),
    9: ("extra-large deviations", extra_large_regime),
    10: ("rate-function numerics", rate_numerics),
    11: ("Monte Carlo agreement", monte_carlo),
    12: ("local limit", local_limit),
}


def run_criterion(number: int) -> CriterionResult:
    name, fn = CRITERIA[number]
    t0 = time.perf_counter()
    passed, details = fn()
    return CriterionResult(number, name, bool(passed), details, time.perf_counter() - t0)


def run_suite(numbers=None, echo: Callable[[str], None] | None = None) -> list[CriterionResult]:
    results = []
    for n in numbers or sorted(CRITERIA):
        res = run_criterion(n)
        if echo:
            echo(res.line())
        results.append(res)
    return results
