import json
import math

import numpy as np
import pytest

from fracheat import errors
from fracheat.asymptotics import (ModelParams, Regime, RegimeKind, SamplePlan, Thresholds, classify,
                                  extra_large_scale, normal_limit_constant, predict, psi, verify)


H = 1 / 16


def test_normal_constant_at_origin():
    assert normal_limit_constant(0.0, 0.5, 0.5) == pytest.approx(math.gamma(0.25) / (math.pi * math.sqrt(2)),
                                                                 rel=1e-9)


def test_normal_constant_at_v_one():
    # alpha = 1/2: W(s) = exp(-s^2/4)/sqrt(pi); Psi(1, s) with variance s/2
    from scipy.integrate import quad
    ref = quad(lambda s: math.exp(-s * s / 4 - 1 / s) / (math.pi * math.sqrt(s)), 0, np.inf, epsabs=0,
               epsrel=1e-12)[0]
    assert normal_limit_constant(1.0, 0.5, 0.5) == pytest.approx(ref, rel=1e-9)


def test_psi_is_normalised():
    from scipy.integrate import quad
    assert quad(lambda v: psi(v, 2.0, 0.5), -np.inf, np.inf)[0] == pytest.approx(1.0, rel=1e-10)
    assert psi([0.0, 0.0], 1.0, np.eye(2)) == pytest.approx(1 / (2 * math.pi))


def test_normal_constant_errors():
    with pytest.raises(errors.DivergentAtOrigin):
        normal_limit_constant([0.0, 0.0], 0.5, np.eye(2))
    with pytest.raises(errors.SingularCovariance):
        normal_limit_constant([1.0, 0.0], 0.5, np.array([[1.0, 0.0], [0.0, 0.0]]))


@pytest.mark.parametrize("x, kind", [(0.25, RegimeKind.BOUNDED), (0.3, RegimeKind.SUBNORMAL),
                                     (3.0, RegimeKind.NORMAL), (10.0, RegimeKind.NORMAL),
                                     (20.0, RegimeKind.MODERATE), (30.0, RegimeKind.LARGE),
                                     (100.0, RegimeKind.LARGE), (1000.0, RegimeKind.EXTRA_LARGE)])
def test_classify_examples(x, kind):
    assert classify(x, 100.0, 0.5, h=H).kind is kind


def test_classify_moderate_exponent():
    reg = classify(20.0, 100.0, 0.5, h=H)
    assert reg.beta == pytest.approx(math.log(20) / math.log(100))
    assert classify(0.3, 100.0, 0.5, h=H, thresholds=Thresholds(x0=8.0)).kind is RegimeKind.BOUNDED
    with pytest.raises(errors.NonPositiveArgument):
        classify(1.0, 0.0, 0.5)


def test_predictions_and_mismatch():
    params = ModelParams(0.5, 1, np.array([[0.5]]))
    assert predict(Regime(RegimeKind.BOUNDED), [0.0], 10.0, params).power == -0.25
    pred = predict(Regime(RegimeKind.MODERATE, 0.75), [100.0 ** 0.75], 100.0, params)
    assert pred.constants["K_v"] == pytest.approx(1.5 * 0.5 ** (1 / 3))
    with pytest.raises(errors.RegimeMismatch):
        predict(Regime(RegimeKind.MODERATE, 0.2), [3.0], 100.0, params)
    with pytest.raises(errors.RegimeMismatch):
        predict(Regime(RegimeKind.LARGE), [50.0], 100.0, params)
    with pytest.raises(errors.RegimeMismatch):
        predict(Regime(RegimeKind.SUBNORMAL), [0.0], 100.0, params)
    with pytest.raises(errors.RegimeMismatch):
        extra_large_scale(50.0, 100.0, 2.0)
    assert extra_large_scale(400.0, 100.0, 2.0) == pytest.approx(400 * math.sqrt(math.log(4)))


def test_verify_normal_regime_report(frac_half, tmp_path):
    params = ModelParams(0.5, 1, frac_half.cumulant.sigma)
    plan = SamplePlan([1e3, 1e4], v=2.0, scale=0.25)
    rep = verify("normal", plan, frac_half, params)
    assert rep.passed
    assert all(abs(r - 1) < 0.05 for r in rep.statistics["ratios"])
    data = json.loads(rep.to_json(tmp_path / "r.json").read_text())
    assert data["regime"] == "normal" and len(data["samples"]) == 2
    rows = rep.to_csv(tmp_path / "r.csv").read_text().splitlines()
    assert len(rows) == 3


def test_verify_needs_samples(frac_half):
    params = ModelParams(0.5, 1, frac_half.cumulant.sigma)
    with pytest.raises(errors.InsufficientSamples):
        verify(Regime(RegimeKind.MODERATE, 0.75), SamplePlan([100.0, 1000.0], 1.0, 0.75), frac_half, params)
