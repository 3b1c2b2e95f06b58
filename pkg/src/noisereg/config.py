"""Strict scenario configuration: YAML in, validated dataclass out."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field as dc_field
from typing import Optional

import yaml

from .fields import field_from_spec


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str
    field: dict = dc_field(default_factory=lambda: {"kind": "sqrt", "sign": 1})
    sigma: float = 1.0
    T: float = 1.0
    dt: float = 1e-3
    box: list = dc_field(default_factory=lambda: [-1.0, 1.0])
    dx: float = 1.0 / 256
    seed: int = 1234
    n_paths: int = 1
    eps: list = dc_field(default_factory=list)
    lams: list = dc_field(default_factory=list)
    out: str = "runs"
    workers: int = 1
    params: dict = dc_field(default_factory=dict)

    def canonical(self) -> dict:
        """Everything that determines the numbers (output location and workers excluded)."""
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


TOP_KEYS = set(ScenarioConfig.__dataclass_fields__)


def _num(d, key, positive=True, allow_zero=False):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"config.{key}: expected a number, got {v!r}")
    if positive and not (v > 0 or (allow_zero and v == 0)):
        raise ConfigError(f"config.{key}: must be {'>= 0' if allow_zero else '> 0'}, got {v!r}")
    return float(v)


def validate(raw: dict, scenario_params: Optional[dict] = None) -> ScenarioConfig:
    """Build a config from a mapping; unknown keys fail with their path.

    ``scenario_params`` maps scenario name to its default ``params`` dict; keys
    outside that dict are rejected and missing ones are filled in.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    extra = sorted(set(raw) - TOP_KEYS)
    if extra:
        raise ConfigError(f"config.{extra[0]}: unknown key")
    if "scenario" not in raw:
        raise ConfigError("config.scenario: required")
    cfg = ScenarioConfig(scenario=str(raw["scenario"]))
    defaults = None
    if scenario_params is not None:
        if cfg.scenario not in scenario_params:
            raise ConfigError(f"config.scenario: unknown scenario {cfg.scenario!r}")
        defaults = scenario_params[cfg.scenario]
    merged = {**{k: v for k, v in asdict(cfg).items()}, **(defaults.get("_top", {}) if defaults else {}), **raw}
    for key in ("sigma",):
        cfg.sigma = _num(merged, key, allow_zero=True)
    cfg.T = _num(merged, "T")
    cfg.dt = _num(merged, "dt")
    cfg.dx = _num(merged, "dx")
    if cfg.dt > cfg.T:
        raise ConfigError("config.dt: larger than T")
    box = merged["box"]
    if not (isinstance(box, (list, tuple)) and len(box) == 2 and float(box[0]) < float(box[1])):
        raise ConfigError(f"config.box: expected [lo, hi] with lo < hi, got {box!r}")
    cfg.box = [float(box[0]), float(box[1])]
    for key in ("seed", "n_paths", "workers"):
        v = merged[key]
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"config.{key}: expected an integer, got {v!r}")
    if merged["seed"] < 0 or merged["seed"] >= 2**64:
        raise ConfigError("config.seed: must be an unsigned 64-bit integer")
    if merged["n_paths"] < 1:
        raise ConfigError("config.n_paths: must be >= 1")
    if merged["workers"] < 1:
        raise ConfigError("config.workers: must be >= 1")
    cfg.seed, cfg.n_paths, cfg.workers = int(merged["seed"]), int(merged["n_paths"]), int(merged["workers"])
    for key, allow_zero in (("eps", False), ("lams", True)):
        seq = merged[key]
        if not isinstance(seq, (list, tuple)):
            raise ConfigError(f"config.{key}: expected a list")
        for i, v in enumerate(seq):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not (v > 0 or (allow_zero and v == 0)):
                raise ConfigError(f"config.{key}[{i}]: invalid value {v!r}")
        setattr(cfg, key, [float(v) for v in seq])
    if not isinstance(merged["field"], dict) or "kind" not in merged["field"]:
        raise ConfigError("config.field: expected a mapping with a 'kind'")
    cfg.field = dict(merged["field"])
    try:
        field_from_spec(cfg.field)
    except ValueError as exc:
        raise ConfigError(f"config.field: {exc}") from None
    cfg.out = str(merged["out"])
    params = merged.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("config.params: expected a mapping")
    if defaults is not None:
        allowed = {k: v for k, v in defaults.items() if k != "_top"}
        bad = sorted(set(params) - set(allowed))
        if bad:
            raise ConfigError(f"config.params.{bad[0]}: unknown key for scenario {cfg.scenario!r}")
        params = {**allowed, **params}
    cfg.params = params
    return cfg


def load(path: str, scenario_params: Optional[dict] = None) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return validate(raw, scenario_params)
