"""Command-line entry point: ``fracheat <subcommand> [flags]``.

Every run writes its artifacts, the fully resolved config (``config.json``)
and a column schema (``schema.json``) into the output directory. Exit codes:
0 success, 1 computation error (or a failed ``verify``), 2 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft

from . import errors, special
from .asymptotics import (ModelParams, Regime, RegimeKind, SamplePlan, Thresholds, _jsonable,
                          verify as verify_regime)
from .heatkernel import HeatKernelEvaluator
from .kernel import KernelSpec, build_kernel
from .ratefn import LargeDeviations, RateFunction, k_v
from .subordination import FracKernelEvaluator

OUT_ENV = "FRACHEAT_OUT"
DEFAULT_OUT = "fracheat-out"

SCHEMAS = {
    "special.csv": {
        "arg": "argument of the function: s (wright), x (stable, inverse r) or z (ml, value at -z)",
        "value": "function value",
        "branch": "evaluation branch used",
        "estimated_error": "relative difference to an independent representation",
    },
    "q-grid.csv": {"x": "lattice coordinate", "value": "q(x, t)"},
    "q-eval.json": {"x": "lattice points (snapped)", "q": "q(x, t)", "log_q": "natural log of q(x, t)"},
    "p-grid.csv": {"x": "lattice coordinate", "series": "p(x, t) from the Mittag-Leffler series",
                   "quadrature": "p(x, t) from subordination quadrature"},
    "p-eval.json": {"series": "p from the series", "quadrature": "p from quadrature",
                    "log_series": "log p from the series", "log_quadrature": "log p from quadrature",
                    "rel_discrepancy": "|p_quadrature/p_series - 1|"},
    "rate.json": {"I": "Legendre transform I(v)", "gamma_star": "maximiser in I(v)",
                  "xi": "fixed point xi_v", "Phi": "Phi(v)", "eta": "minimiser eta(v) of F_v",
                  "bigF": "linear decay rate F(v)", "K_v": "moderate-deviation constant"},
    "regimes.csv": {"x": "space point (space-separated components)", "t": "time",
                    "route": "evaluation route", "log_p": "computed log p(x, t)",
                    "log_pred": "log of the predicted law (empty when only a bound exists)"},
    "regimes.json": {"samples": "per-point x, t, route, log_p, log_pred",
                     "statistics": "fitted exponents, ratios or constants for the regime",
                     "passed": "regime signature within tolerance"},
    "q-grid.bin": {"values": "q(x, t) row-major little-endian float64 after the header",
                   "sidecar": "JSON metadata next to the binary file"},
    "mc.csv": {"bin_center": "bin midpoint", "height": "empirical density (unit integral)",
               "stderr": "binomial standard error of the height"},
    "verify.json": {"criteria": "one record per acceptance criterion with pass flag and figures",
                    "passed": "true only if every criterion passed"},
}


@dataclass
class RunConfig:
    """Everything a run depends on, with every default filled in."""

    command: str
    kernel: dict = field(default_factory=lambda: KernelSpec().to_dict())
    alpha: float = 0.5
    rel_tol: float = 1e-6
    thresholds: dict = field(default_factory=lambda: Thresholds().to_dict())
    seed: int = 2026
    threads: int = 1
    out_dir: str = DEFAULT_OUT
    options: dict = field(default_factory=dict)

    def validate(self) -> None:
        KernelSpec(**self.kernel)
        special.FracParams(self.alpha)
        if not 0 < self.rel_tol < 1:
            raise errors.ValidationError("rel_tol must lie in (0, 1)")
        if int(self.threads) != self.threads or self.threads < 1:
            raise errors.ValidationError("threads must be a positive integer")
        if int(self.seed) != self.seed or self.seed < 0:
            raise errors.ValidationError("seed must be a non-negative integer")

    def spec(self) -> KernelSpec:
        return KernelSpec(**self.kernel)


# -- argument parsing --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error(errors.ValidationError(message))
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run")
    g.add_argument("--config", help="JSON file with RunConfig fields")
    g.add_argument("--threads", type=int, help="cap on FFT worker threads")
    g.add_argument("--out-dir", dest="out_dir", help=f"output directory (default ${OUT_ENV} or {DEFAULT_OUT})")
    g.add_argument("--seed", type=int)
    g.add_argument("--rel-tol", dest="rel_tol", type=float)
    k = common.add_argument_group("kernel")
    k.add_argument("--kernel-d", dest="kernel_d", type=int)
    k.add_argument("--kernel-p", dest="kernel_p", type=float)
    k.add_argument("--kernel-b", dest="kernel_b", type=float)
    k.add_argument("--kernel-R", dest="kernel_R", type=float)
    k.add_argument("--kernel-h", dest="kernel_h", type=float)

    parser = _Parser(prog="fracheat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("special", parents=[common], help="tables of special functions")
    sp.add_argument("--function", choices=["wright", "stable", "ml", "inverse"], default="wright")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--t", type=float, default=1.0, help="time for the inverse-subordinator density")
    sp.add_argument("--lo", type=float, default=0.0)
    sp.add_argument("--hi", type=float, default=5.0)
    sp.add_argument("--num", type=int, default=51)
    sp.add_argument("--out")

    q = sub.add_parser("q-eval", parents=[common], help="regular part of the classical heat kernel")
    q.add_argument("--alpha-irrelevant", dest="alpha_irrelevant", action="store_true",
                   help="accepted for symmetry with p-eval; q has no alpha")
    q.add_argument("--t", type=float, required=True)
    _point_or_grid(q)
    q.add_argument("--log", action="store_true", help="report log q")
    q.add_argument("--tolerance", type=float, help="Poisson window tail tolerance")
    q.add_argument("--out")

    p = sub.add_parser("p-eval", parents=[common], help="regular part of the fractional kernel")
    p.add_argument("--alpha", type=float)
    p.add_argument("--t", type=float, required=True)
    _point_or_grid(p)
    p.add_argument("--method", choices=["series", "quadrature", "both", "log"], default="both")
    p.add_argument("--out")

    r = sub.add_parser("rate", parents=[common], help="rate-function quantities at v")
    r.add_argument("--v", type=float, nargs="+", required=True)
    r.add_argument("--alpha", type=float)
    r.add_argument("--beta", type=float, default=0.75)
    r.add_argument("--out")

    rg = sub.add_parser("regimes", parents=[common], help="compare p with one regime's law")
    rg.add_argument("--regime", choices=[k.value for k in RegimeKind], required=True)
    rg.add_argument("--alpha", type=float)
    rg.add_argument("--d", type=int)
    rg.add_argument("--t-list", dest="t_list", type=float, nargs="+", required=True)
    rg.add_argument("--v", type=float, nargs="+", help="x = v t^scale for each t")
    rg.add_argument("--x-list", dest="x_list", type=float, nargs="+", help="one |x| per t, along the first axis")
    rg.add_argument("--beta", type=float, help="moderate regime exponent")
    rg.add_argument("--out")

    m = sub.add_parser("mc", parents=[common], help="Monte Carlo histograms")
    m.add_argument("--alpha", type=float)
    m.add_argument("--t", type=float, default=1.0)
    m.add_argument("--n", type=int, default=100_000)
    m.add_argument("--what", choices=["stable", "inverse", "timechanged"], default="timechanged")
    m.add_argument("--bins", type=int, default=40)
    m.add_argument("--range", dest="range_", type=float, nargs="+", help="lo hi of the histogram")
    m.add_argument("--out")

    v = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    v.add_argument("--suite", choices=["primary"], default="primary")
    v.add_argument("--alpha", type=float)
    v.add_argument("--d", type=int)
    v.add_argument("--criteria", type=float, nargs="+", help="subset of criterion numbers")
    v.add_argument("--out")
    return parser


def _point_or_grid(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--x", type=float, nargs="+", help="point(s); d components per point")
    g.add_argument("--grid", action="store_true", help="full lattice slice as CSV")


_RUN_KEYS = ("threads", "out_dir", "seed", "rel_tol")
_KERNEL_KEYS = {"kernel_d": "d", "kernel_p": "p", "kernel_b": "b", "kernel_R": "R", "kernel_h": "h"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = RunConfig(args.command, out_dir=os.environ.get(OUT_ENV, DEFAULT_OUT))
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise errors.ValidationError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(data) - {f for f in RunConfig.__dataclass_fields__ if f != "command"}
        if unknown:
            raise errors.ValidationError(f"unknown config keys: {sorted(unknown)}")
        for key, val in data.items():
            if key in ("kernel", "thresholds", "options"):
                getattr(cfg, key).update(val)
            else:
                setattr(cfg, key, val)
    for key in _RUN_KEYS:
        if getattr(args, key, None) is not None:
            setattr(cfg, key, getattr(args, key))
    for flag, key in _KERNEL_KEYS.items():
        if getattr(args, flag, None) is not None:
            cfg.kernel[key] = getattr(args, flag)
    if getattr(args, "alpha", None) is not None:
        cfg.alpha = args.alpha
    skip = set(_RUN_KEYS) | set(_KERNEL_KEYS) | {"config", "command", "alpha"}
    cfg.options.update({k: v for k, v in vars(args).items() if k not in skip})
    cfg.validate()
    return cfg


# -- artifacts ----------------------------------------------------------------------

class _Artifacts:
    def __init__(self, cfg: RunConfig):
        self.dir = Path(cfg.out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.written: dict[str, str] = {}

    def path(self, default: str) -> Path:
        out = self.cfg.options.get("out")
        return Path(out) if out else self.dir / default

    def json(self, default: str, payload: dict) -> Path:
        path = self.path(default)
        body = {"config": asdict(self.cfg), **payload}
        path.write_text(json.dumps(body, indent=2, default=_jsonable) + "\n")
        self.written[path.name] = default
        return path

    def csv(self, default: str, header: list[str], rows) -> Path:
        path = self.path(default)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.written[path.name] = default
        return path

    def finish(self) -> None:
        (self.dir / "config.json").write_text(json.dumps(asdict(self.cfg), indent=2, default=_jsonable) + "\n")
        path = self.dir / "schema.json"
        try:
            schema = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            schema = {}
        schema.update({name: SCHEMAS[kind] for name, kind in self.written.items()})
        path.write_text(json.dumps(dict(sorted(schema.items())), indent=2) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _points(values: list[float], d: int) -> np.ndarray:
    if len(values) % d:
        raise errors.ValidationError(f"--x needs a multiple of d={d} numbers")
    pts = np.asarray(values, dtype=float).reshape(-1, d)
    return pts[:, 0] if d == 1 else pts


# -- subcommands ----------------------------------------------------------------------

def cmd_special(cfg: RunConfig, art: _Artifacts) -> dict:
    o, a = cfg.options, cfg.alpha
    if o["num"] < 1 or not o["hi"] >= o["lo"]:
        raise errors.ValidationError("need num >= 1 and hi >= lo")
    grid = np.linspace(o["lo"], o["hi"], o["num"])
    fn = o["function"]
    if fn == "wright":
        lv, branch = special.log_wright_density(a, grid, return_branch=True)
        val = np.exp(lv)
        pos = grid > 0
        alt = np.full(grid.shape, np.nan)
        alt[pos] = special.wright_via_stable(a, grid[pos])
    elif fn == "stable":
        if np.any(grid <= 0):
            raise errors.NonPositiveArgument("stable density needs x > 0; raise --lo")
        lv, branch = special.log_stable_density(a, grid, return_branch=True)
        val = np.exp(lv)
        # invert W(s) = s^{-1/a-1} g(s^{-1/a}) / a at s = x^-a
        s = grid**-a
        alt = a * special.wright_density(a, s) * s ** (1 / a + 1)
    elif fn == "inverse":
        if np.any(grid <= 0):
            raise errors.NonPositiveArgument("inverse-subordinator density needs r > 0; raise --lo")
        val = special.inverse_subordinator_density(a, o["t"], grid)
        alt = special.inverse_subordinator_density_scaled(a, o["t"], grid)
        branch = np.full(grid.shape, "stable")
    else:
        if np.any(grid < 0):
            raise errors.ValidationError("ml table is in z >= 0 (evaluated at -z)")
        val, branch = special.mittag_leffler(a, -grid, return_branch=True)
        alt = _ml_via_wright(a, grid)
    with np.errstate(invalid="ignore", divide="ignore"):
        err = np.abs(val / alt - 1)
    rows = zip(grid, val, np.atleast_1d(branch), err)
    path = art.csv("special.csv", ["arg", "value", "branch", "estimated_error"], rows)
    return {"artifact": str(path), "rows": int(grid.size)}


def _ml_via_wright(alpha: float, z: np.ndarray) -> np.ndarray:
    """``E_alpha(-z) = int_0^inf W_alpha(r) exp(-z r) dr`` in ``u = log r``."""
    u_hi = math.log(special._wright_upper(alpha, -80.0)) + 0.5
    zz = np.asarray(z, dtype=float)

    def log_f(u):
        r = np.exp(u)
        return special.log_wright_density(alpha, r)[None, :] + u[None, :] - zz[:, None] * r[None, :]

    lv, _ = special.log_trapezoid(log_f, -60.0, u_hi, 0.02, rtol=1e-12)
    return np.exp(lv)


def cmd_q_eval(cfg: RunConfig, art: _Artifacts) -> dict:
    o = cfg.options
    kernel = build_kernel(cfg.spec())
    kw = {"rel_tol": cfg.rel_tol}
    if o.get("tolerance") is not None:
        kw["tolerance"] = o["tolerance"]
    heat = HeatKernelEvaluator(kernel, **kw)
    t = o["t"]
    if o["grid"]:
        grid = heat.q_grid(t)
        if kernel.d == 1:
            vals = np.log(grid.values) if o["log"] else grid.values
            with np.errstate(divide="ignore"):
                path = art.csv("q-grid.csv", ["x", "log_value" if o["log"] else "value"],
                               zip(grid.axis_coords(0), vals))
        else:
            path, _ = grid.save(art.path("q-grid.bin"))
        return {"artifact": str(path), "mass": grid.mass}
    x = _points(o["x"], kernel.d)
    lq = np.asarray(heat.q_log_values(x, t), dtype=float)
    payload = {"t": t, "x": np.asarray(x).tolist(), "log_q": lq.tolist()}
    if not o["log"]:
        payload["q"] = np.exp(lq).tolist()
    art.json("q-eval.json", payload)
    return payload


def cmd_p_eval(cfg: RunConfig, art: _Artifacts) -> dict:
    o = cfg.options
    kernel = build_kernel(cfg.spec())
    ev = FracKernelEvaluator(kernel, cfg.alpha, rel_tol=cfg.rel_tol)
    t, method = o["t"], o["method"]
    if o["grid"]:
        if kernel.d != 1:
            raise errors.ValidationError("--grid CSV output is defined for d=1")
        cols, header = [], ["x"]
        ser = ev.p_ml_series_grid(t)
        cols.append(ser.axis_coords(0))
        if method in ("series", "both", "log"):
            header.append("series")
            cols.append(ser.values)
        if method in ("quadrature", "both"):
            header.append("quadrature")
            cols.append(ev.p_quadrature_grid(t).values)
        path = art.csv("p-grid.csv", header, zip(*cols))
        return {"artifact": str(path), "atom": ev.atom(t), "mass": ser.mass}
    x = _points(o["x"], kernel.d)
    payload: dict = {"t": t, "alpha": cfg.alpha, "x": np.asarray(x).tolist(), "atom": ev.atom(t)}
    if method in ("series", "log"):
        lv = ev.p_ml_series_log(x, t)
        payload["log_series"] = lv.tolist()
        if method == "series":
            payload["series"] = np.exp(lv).tolist()
    elif method == "quadrature":
        lv = ev.p_log_eval(x, t)
        payload.update(log_quadrature=lv.tolist(), quadrature=np.exp(lv).tolist())
    else:
        ls, lq = ev.p_ml_series_log(x, t), ev.p_log_eval(x, t)
        payload.update(series=np.exp(ls).tolist(), quadrature=np.exp(lq).tolist(),
                       log_series=ls.tolist(), log_quadrature=lq.tolist(),
                       rel_discrepancy=np.abs(np.expm1(lq - ls)).tolist())
    art.json("p-eval.json", payload)
    return payload


def cmd_rate(cfg: RunConfig, art: _Artifacts) -> dict:
    o = cfg.options
    kernel = build_kernel(cfg.spec())
    v = np.asarray(o["v"], dtype=float)
    if v.size != kernel.d:
        raise errors.ValidationError(f"--v needs {kernel.d} components")
    rate = RateFunction(HeatKernelEvaluator(kernel).cumulant)
    ld = LargeDeviations(rate, cfg.alpha)
    out: dict = {"v": v.tolist(), "alpha": cfg.alpha, "beta": o["beta"]}
    if rate.in_domain(v):
        i_val, gamma = rate.legendre(v)
        out.update(I=i_val, gamma_star=gamma.tolist())
    else:
        out.update(I=math.inf, gamma_star=None)
    if np.any(v):
        out.update(xi=ld.xi_v(v), Phi=ld.phi(v))
        big_f, eta = ld.big_f(v)
        out.update(eta=eta, bigF=big_f, K_v=k_v(cfg.alpha, o["beta"], rate.cumulant.sigma, v))
    else:
        out.update(xi=None, Phi=0.0, eta=None, bigF=None, K_v=None)
    art.json("rate.json", out)
    return out


_SCALE = {"bounded": 0.0, "subnormal": None, "normal": None, "large": 1.0, "extra_large": 1.0}


def cmd_regimes(cfg: RunConfig, art: _Artifacts) -> dict:
    o = cfg.options
    spec = cfg.spec()
    if o.get("d") is not None and o["d"] != spec.d:
        spec = KernelSpec(**{**spec.to_dict(), "d": o["d"]})
    kernel = build_kernel(spec)
    ev = FracKernelEvaluator(kernel, cfg.alpha, rel_tol=cfg.rel_tol)
    kind = RegimeKind(o["regime"])
    ts = o["t_list"]
    if o.get("x_list") is not None:
        if len(o["x_list"]) != len(ts):
            raise errors.ValidationError("--x-list needs one value per t")
        pts = [([x] + [0.0] * (spec.d - 1), t) for x, t in zip(o["x_list"], ts)]
        plan = SamplePlan(ts, points=pts)
    else:
        if kind is RegimeKind.MODERATE:
            if o.get("beta") is None:
                raise errors.ValidationError("moderate regime needs --beta (or --x-list)")
            scale = o["beta"]
        elif kind in (RegimeKind.NORMAL, RegimeKind.SUBNORMAL):
            scale = cfg.alpha / 2
        else:
            scale = _SCALE[kind.value]
        plan = SamplePlan(ts, v=o["v"] if o.get("v") is not None else 0.0, scale=scale)
    regime = Regime(kind, o.get("beta")) if kind is RegimeKind.MODERATE else Regime(kind)
    ld = LargeDeviations(RateFunction(ev.cumulant), cfg.alpha) if kind is RegimeKind.LARGE else None
    params = ModelParams(cfg.alpha, spec.d, ev.cumulant.sigma, p=spec.p, large_deviations=ld)
    rep = verify_regime(regime, plan, ev, params)
    art.json("regimes.json", rep.to_dict())
    rep.to_csv(art.dir / "regimes.csv")
    art.written["regimes.csv"] = "regimes.csv"
    return {"passed": rep.passed, "statistics": rep.statistics}


def cmd_mc(cfg: RunConfig, art: _Artifacts) -> dict:
    from . import mc_oracle as mc

    o = cfg.options
    a, t, n, bins = cfg.alpha, o["t"], o["n"], o["bins"]
    if bins < 1:
        raise errors.ValidationError("--bins must be positive")
    stream = mc.RngStream(int(cfg.seed))
    summary: dict = {"what": o["what"], "n": n, "alpha": a, "t": t}
    if o["what"] == "timechanged":
        kernel = build_kernel(cfg.spec())
        smp = mc.sample_timechanged(a, t, n, stream, kernel)
        half = int(round((o["range_"] or [0.0, 10.0])[-1] / kernel.h))
        nodes = max(1, math.ceil((2 * half + 1) / bins))
        dens = mc.lattice_density(smp, half, nodes)
        freq, se = mc.proportion(smp.atom, smp.n)
        summary.update(atom_frequency=freq, atom_stderr=se, histogram_mass=dens.mass)
    else:
        draws = (mc.sample_stable(a, n, stream) if o["what"] == "stable"
                 else mc.sample_inverse_subordinator(a, t, n, stream))
        lo, hi = o["range_"] or ([0.0, 20.0] if o["what"] == "stable" else [0.0, 4.0 * t**a])
        if not hi > lo:
            raise errors.ValidationError("--range needs lo < hi")
        dens = mc.EmpiricalDensity.from_samples(draws, np.linspace(lo, hi, bins + 1))
        summary.update(histogram_mass=dens.mass)
    path = art.csv("mc.csv", ["bin_center", "height", "stderr"], dens.to_rows())
    summary["artifact"] = str(path)
    return summary


def cmd_verify(cfg: RunConfig, art: _Artifacts) -> dict:
    from .acceptance import CRITERIA, run_suite

    o = cfg.options
    picked = sorted({int(c) for c in o["criteria"]}) if o.get("criteria") else sorted(CRITERIA)
    bad = [c for c in picked if c not in CRITERIA]
    if bad:
        raise errors.ValidationError(f"unknown criteria {bad}")
    results = run_suite(picked, echo=lambda line: print(line, file=sys.stderr))
    report = {"suite": o["suite"], "criteria": [r.to_dict() for r in results],
              "passed": all(r.passed for r in results)}
    art.json("verify.json", report)
    return {"passed": report["passed"],
            "summary": {r.number: ("PASS" if r.passed else "FAIL") for r in results}}


COMMANDS = {"special": cmd_special, "q-eval": cmd_q_eval, "p-eval": cmd_p_eval, "rate": cmd_rate,
            "regimes": cmd_regimes, "mc": cmd_mc, "verify": cmd_verify}


def _emit_error(exc: errors.FracHeatError) -> None:
    print(json.dumps(exc.to_dict()), file=sys.stderr)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        art = _Artifacts(cfg)
        with sp_fft.set_workers(int(cfg.threads)):
            result = COMMANDS[cfg.command](cfg, art)
        art.finish()
    except errors.ValidationError as exc:
        _emit_error(exc)
        return 2
    except errors.FracHeatError as exc:
        _emit_error(exc)
        return 1
    except (MemoryError, FloatingPointError, np.linalg.LinAlgError) as exc:
        _emit_error(errors.ComputationError(f"{type(exc).__name__}: {exc}"))
        return 1
    print(json.dumps(result, indent=2, default=_jsonable))
    if cfg.command == "verify" and not result["passed"]:
        return 1
    return 0


def main() -> None:
    sys.exit(run())
