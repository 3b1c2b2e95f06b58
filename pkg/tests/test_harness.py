import filecmp
import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from noisereg import acceptance, cli, scenarios
from noisereg.config import ConfigError, ScenarioConfig, load, validate

PARAMS = scenarios.scenario_params()


def test_list_scenarios():
    lines = scenarios.list_scenarios()
    assert len(lines) == 8
    text = "\n".join(lines)
    assert "gradient-bound → Theorem 2" in text
    assert "weakstar-stability → §3 Proposition" in text


@pytest.mark.parametrize("raw, where", [
    ({"scenario": "zvonkin", "bogus": 1}, "config.bogus"),
    ({"scenario": "zvonkin", "params": {"bogus": 1}}, "config.params.bogus"),
    ({"scenario": "zvonkin", "n_paths": 0}, "config.n_paths"),
    ({"scenario": "zvonkin", "seed": -1}, "config.seed"),
    ({"scenario": "zvonkin", "dt": 0}, "config.dt"),
    ({"scenario": "zvonkin", "box": [1, -1]}, "config.box"),
    ({"scenario": "zvonkin", "eps": [0.1, -0.1]}, "config.eps[1]"),
    ({"scenario": "zvonkin", "field": {"kind": "sqrt", "sgn": 1}}, "config.field"),
    ({"scenario": "nope"}, "config.scenario"),
    ({"sigma": 1.0}, "config.scenario"),
])
def test_strict_validation(raw, where):
    with pytest.raises(ConfigError) as exc:
        validate(raw, PARAMS)
    assert str(exc.value).startswith(where)


def test_defaults_filled_and_hash_stable(tmp_path):
    a = validate({"scenario": "gradient-bound"}, PARAMS)
    assert a.params["window"] == [-2.0, 2.0] and a.lams == [1.0, 10.0, 100.0]
    b = validate({"scenario": "gradient-bound", "out": "elsewhere", "workers": 4}, PARAMS)
    assert a.config_hash() == b.config_hash()
    c = validate({"scenario": "gradient-bound", "seed": 1}, PARAMS)
    assert c.config_hash() != a.config_hash()
    p = tmp_path / "c.yaml"
    p.write_text("scenario: gradient-bound\n", encoding="utf-8")
    assert load(str(p), PARAMS).config_hash() == a.config_hash()


def test_shipped_configs_load():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in PARAMS:
        cfg = load(os.path.join(root, f"{name}.yaml"), PARAMS)
        assert cfg.config_hash() == validate({"scenario": name}, PARAMS).config_hash()


def _read(folder):
    return {f: open(os.path.join(folder, f), "rb").read() for f in sorted(os.listdir(folder))}


def test_run_scenario_byte_identical(tmp_path):
    cfg = {"scenario": "gradient-bound", "out": str(tmp_path / "a")}
    r1 = scenarios.run_scenario(cfg)
    r2 = scenarios.run_scenario({**cfg, "out": str(tmp_path / "b")})
    assert r1.config_hash == r2.config_hash
    assert _read(tmp_path / "a" / "gradient-bound") == _read(tmp_path / "b" / "gradient-bound")
    rep = json.load(open(tmp_path / "a" / "gradient-bound" / "report.json", encoding="utf-8"))
    assert "wall_clock" not in rep and rep["verdicts"]["bound_reached"]
    assert r1.wall_clock > 0


def test_flow_stability_worker_invariance(tmp_path):
    base = {"scenario": "flow-stability", "n_paths": 120, "dt": 0.02, "eps": [0.2, 0.1, 0.05],
            "params": {"relation_dt": 0.01}}
    scenarios.run_scenario({**base, "workers": 1}, str(tmp_path / "w1"))
    scenarios.run_scenario({**base, "workers": 3}, str(tmp_path / "w3"))
    assert filecmp.cmp(tmp_path / "w1" / "stability.csv", tmp_path / "w3" / "stability.csv", shallow=False)


def test_transport_dichotomy_report(tmp_path):
    rep = scenarios.run_scenario({"scenario": "transport-dichotomy"}, str(tmp_path))
    assert rep.checks["blowup_time"] == pytest.approx(0.5, rel=0.1)
    assert rep.checks["stochastic_verdict"] == "bounded"
    header = open(tmp_path / "gradient_step.csv", encoding="utf-8").readline().strip()
    assert header == "level,t,sup_grad"


def test_numerical_abort_reports_location():
    with pytest.raises(scenarios.NumericalAbort, match=r"index \(1,\)"):
        scenarios._finite("x", np.array([0.0, np.nan]))


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["list"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 8
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: zvonkin\nn_paths: 0\n", encoding="utf-8")
    assert cli.main(["run", "--config", str(bad)]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    good = tmp_path / "good.yaml"
    good.write_text("scenario: gradient-bound\n", encoding="utf-8")
    assert cli.main(["run", "--config", str(good), "--out", str(tmp_path / "o"), "--seed", "5", "--quiet"]) == 0
    assert os.path.exists(tmp_path / "o" / "gradient-bound" / "gradient_bound.csv")

    def boom(cfg, out):
        raise scenarios.NumericalAbort("gradient-bound: non-finite value at index (3,)")

    monkeypatch.setitem(scenarios.SCENARIOS, "gradient-bound",
                        scenarios.SCENARIOS["gradient-bound"].__class__(
                            "gradient-bound", "Theorem 2", "x", PARAMS["gradient-bound"], boom))
    assert cli.main(["run", "--config", str(good), "--out", str(tmp_path / "o2"), "--quiet"]) == 2


def test_cli_accept_failure_exit(tmp_path, monkeypatch):
    fake = acceptance.AcceptanceReport([acceptance.CriterionResult(1, "x", False, 1.0, 0.0, "")], str(tmp_path), 0.0,
                                       [str(tmp_path / "verdicts.csv")])
    monkeypatch.setattr(acceptance, "run_acceptance", lambda *a, **k: fake)
    assert cli.main(["accept", "--out", str(tmp_path), "--quiet"]) == 3


def test_tampered_tolerance_affects_only_its_criterion(tmp_path):
    ok = acceptance.run_acceptance(str(tmp_path / "a"), only={1, 2}, determinism=False)
    assert ok.passed
    bad = acceptance.run_acceptance(str(tmp_path / "b"), tolerances={1: {"time_error": 1e-6}}, only={1, 2},
                                    determinism=False)
    assert not bad.by_number(1).passed and bad.by_number(2).passed
    lines = open(tmp_path / "b" / "verdicts.csv", encoding="utf-8").read().splitlines()
    assert lines[0] == "criterion,name,passed,value,tolerance" and len(lines) == 3


def test_tolerance_file_strict(tmp_path):
    p = tmp_path / "t.yaml"
    p.write_text("tolerances:\n  6: {decrease: 0.3}\n", encoding="utf-8")
    assert acceptance.load_tolerances(str(p))[6]["decrease"] == 0.3
    p.write_text("tolerances:\n  6: {decreese: 0.3}\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="tolerances.6.decreese"):
        acceptance.load_tolerances(str(p))
    p.write_text("tolerance: {}\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        acceptance.load_tolerances(str(p))


@given(st.integers(0, 2**64 - 1), st.floats(0.0, 10.0))
def test_config_hash_is_deterministic(seed, sigma):
    a = validate({"scenario": "zvonkin", "seed": seed, "sigma": sigma}, PARAMS)
    b = validate({"sigma": sigma, "seed": seed, "scenario": "zvonkin"}, PARAMS)
    assert a.config_hash() == b.config_hash()


@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=12))
def test_unknown_top_keys_rejected(key):
    if key in ScenarioConfig.__dataclass_fields__:
        return
    with pytest.raises(ConfigError, match=f"config.{key}"):
        validate({"scenario": "zvonkin", key: 1}, PARAMS)
