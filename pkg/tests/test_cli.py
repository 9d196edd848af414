import json
import math
import subprocess
import sys

import pytest

from fracheat import acceptance
from fracheat.cli import run


def invoke(tmp_path, *args):
    return run([*args, "--out-dir", str(tmp_path)])


def read(tmp_path, name):
    return json.loads((tmp_path / name).read_text())


def test_special_table(tmp_path):
    assert invoke(tmp_path, "special", "--function", "ml", "--alpha", "0.5", "--lo", "0", "--hi", "3",
                  "--num", "7") == 0
    rows = (tmp_path / "special.csv").read_text().splitlines()
    assert rows[0] == "arg,value,branch,estimated_error" and len(rows) == 8
    assert float(rows[1].split(",")[1]) == pytest.approx(1.0)
    assert all(float(r.split(",")[3]) < 1e-8 for r in rows[1:])
    assert "special.csv" in read(tmp_path, "schema.json")


def test_q_eval(tmp_path):
    assert invoke(tmp_path, "q-eval", "--t", "400", "--x", "0", "--log") == 0
    out = read(tmp_path, "q-eval.json")
    assert out["log_q"][0] == pytest.approx(-0.5 * math.log(400 * math.pi), abs=1e-3)


def test_p_eval_both_routes(tmp_path):
    assert invoke(tmp_path, "p-eval", "--alpha", "0.5", "--t", "10", "--x", "0", "3", "--method", "both") == 0
    out = read(tmp_path, "p-eval.json")
    assert max(out["rel_discrepancy"]) <= 1e-5
    assert read(tmp_path, "config.json")["alpha"] == 0.5


def test_rate(tmp_path):
    assert invoke(tmp_path, "rate", "--v", "1.0", "--alpha", "0.5") == 0
    out = read(tmp_path, "rate.json")
    assert out["I"] == pytest.approx(1.0, rel=1e-9)
    assert out["K_v"] == pytest.approx(1.5 * 0.5 ** (1 / 3), rel=1e-12)


def test_regimes(tmp_path):
    assert invoke(tmp_path, "regimes", "--regime", "normal", "--alpha", "0.5", "--t-list", "1000", "10000",
                  "--v", "2.0") == 0
    assert read(tmp_path, "regimes.json")["passed"]
    assert len((tmp_path / "regimes.csv").read_text().splitlines()) == 3


def test_mc_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert invoke(d, "mc", "--alpha", "0.5", "--n", "20000", "--what", "inverse", "--bins", "10",
                      "--seed", "11") == 0
    assert (a / "mc.csv").read_bytes() == (b / "mc.csv").read_bytes()
    assert (tmp_path / "a" / "mc.csv").read_text().splitlines()[0] == "bin_center,height,stderr"


def test_config_file_is_overridden_by_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 0.3, "seed": 5}))
    assert invoke(tmp_path, "p-eval", "--config", str(cfg), "--t", "1", "--x", "0", "--method", "series",
                  "--seed", "9") == 0
    used = read(tmp_path, "config.json")
    assert used["alpha"] == 0.3 and used["seed"] == 9


def test_verify_pass_and_fail(tmp_path, monkeypatch, capsys):
    assert invoke(tmp_path / "ok", "verify", "--criteria", "3") == 0
    assert read(tmp_path / "ok", "verify.json")["passed"]

    def failing():
        return False, {"defect": 1.0}

    monkeypatch.setitem(acceptance.CRITERIA, 3, ("mass identity", failing))
    assert invoke(tmp_path / "bad", "verify", "--criteria", "3") == 1


def test_bad_input_exit_codes(tmp_path, capsys):
    assert invoke(tmp_path, "p-eval", "--alpha", "1.5", "--t", "1", "--x", "0") == 2
    assert invoke(tmp_path, "q-eval", "--t", "1", "--x", "0.01") == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_unknown_flag_via_module(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fracheat", "rate", "--v", "1", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    ok = subprocess.run([sys.executable, "-m", "fracheat", "--help"], capture_output=True, text=True)
    assert ok.returncode == 0 and "verify" in ok.stdout
