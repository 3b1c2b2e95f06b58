"""Scenario registry: each scenario wires the numerical modules into one experiment.

A runner takes a validated :class:`ScenarioConfig` and an output directory,
writes its CSVs there and returns ``(checks, verdicts, artifacts)``.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import analysis as an
from . import parabolic as pb
from . import stochastic_flow as sf
from . import transport as tr
from .config import ConfigError, load, validate
from .fields import (field_from_spec, make_constant_drift, make_sqrt_drift, make_zero_drift, mollify,
                     mollify_on_grid, tabulate)
from .io import write_csv


class NumericalAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    maps_to: str
    description: str
    defaults: dict
    runner: Callable


def _grid(box, dx):
    n = int(round((box[1] - box[0]) / dx)) + 1
    return np.linspace(box[0], box[1], n)


def _fast(field, lo=-10.0, hi=10.0):
    """Tabulate time-independent mollified 1-d fields for the trajectory loops."""
    if field.dim == 1 and not field.time_dependent and "eps" in field.meta:
        return tabulate(field, lo, hi)
    return field


def _base_field(spec):
    base = dict(spec)
    base.pop("eps", None)
    return field_from_spec(base)


def _path(cfg, index, n_steps=None, d=1):
    n = int(round(cfg.T / cfg.dt)) if n_steps is None else n_steps
    return sf.sample_wiener(cfg.seed, index, sf.uniform_times(cfg.T, n), d)


def _finite(name, *arrays):
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if not np.all(np.isfinite(a)):
            bad = np.argwhere(~np.isfinite(a))[0]
            raise NumericalAbort(f"{name}: non-finite value at index {tuple(int(i) for i in bad)}")


# ---------------------------------------------------------------------------
# runners


def run_flow_stability(cfg, out):
    P = cfg.params
    base = _base_field(cfg.field)
    fields = [_fast(mollify(base, e)) for e in cfg.eps]
    times = sf.uniform_times(cfg.T, int(round(cfg.T / cfg.dt)))
    rep = sf.stability_experiment(fields, None, cfg.sigma, P["p"], _grid(cfg.box, cfg.dx), cfg.n_paths,
                                  cfg.seed, times, h=P["h"], workers=cfg.workers, labels=cfg.eps)
    _finite("flow-stability", rep.displacement, rep.jacobian_moment)
    arts = [write_csv(os.path.join(out, "stability.csv"),
                      ["eps", "displacement", "displacement_se", "jacobian_moment", "jacobian_moment_se"],
                      zip(cfg.eps, rep.displacement, rep.displacement_se, rep.jacobian_moment, rep.jacobian_moment_se))]
    # transport relation on one path
    fe = _fast(mollify(base, P["relation_eps"]))
    path = sf.sample_wiener(cfg.seed, 0, sf.uniform_times(cfg.T, int(round(cfg.T / P["relation_dt"]))))
    xs = _grid(cfg.box, P["relation_dx"])
    ens = sf.build_ensemble(fe, cfg.sigma, xs, path)
    out_t = np.round(np.arange(0, cfg.T + 1e-12, P["relation_every"]), 12)
    sol = tr.solve_stochastic(tr.tanh_datum(), fe, cfg.sigma, path, _grid([-6.0, 6.0], P["relation_dx"]), out_t)
    rel = tr.transport_relation_error(sol, ens, tr.tanh_datum())
    arts.append(write_csv(os.path.join(out, "transport_relation.csv"), ["eps", "dt", "max_error"],
                          [(P["relation_eps"], P["relation_dt"], rel)]))
    moved = rep.displacement[:-1]  # the last entry is the reference itself
    checks = {
        "displacement": rep.displacement.tolist(),
        "jacobian_moment": rep.jacobian_moment.tolist(),
        "transport_relation_error": rel,
    }
    verdicts = {
        "displacement_decreasing": bool(np.all(np.diff(moved) < 0) and rep.displacement[-1] <= moved[-1]),
        "jacobian_within_2x": rep.jacobian_bounded(2.0),
        "transport_relation_below_0.05": bool(rel < 5e-2),
    }
    return checks, verdicts, arts


def run_transport_dichotomy(cfg, out):
    P = cfg.params
    b = _fast(field_from_spec(cfg.field)) if "eps" in cfg.field else field_from_spec(cfg.field)
    x0 = P["x0"]
    meet = sf.meeting_time(b, x0, -x0, cfg.dt, cfg.T)
    levels = [cfg.dx * 2 ** (P["levels"] - 1 - i) for i in range(P["levels"])]
    out_t = np.round(np.arange(0, cfg.T + 1e-12, P["out_every"]), 12)
    path = _path(cfg, 0)
    u0 = tr.datum_from_spec(P["datum"])
    det = [tr.solve_deterministic(u0, b, _grid(cfg.box, h), cfg.T, cfg.dt, out_t, P["fan_value"]) for h in levels]
    sto = [tr.solve_stochastic(u0, b, cfg.sigma, path, _grid(cfg.box, h), out_t) for h in levels]
    step = tr.smooth_step_datum(x0, P["step_width"])
    stp = [tr.solve_deterministic(step, b, _grid(cfg.box, h), cfg.T, cfg.dt, out_t, P["fan_value"]) for h in levels]
    gd, gs, gstep = tr.gradient_diagnostic(det), tr.gradient_diagnostic(sto), tr.gradient_diagnostic(stp)
    for g in (gd, gs, gstep):
        _finite("transport-dichotomy", g.sup_grad)
    arts = [gd.to_csv(os.path.join(out, "gradient_deterministic.csv")),
            gs.to_csv(os.path.join(out, "gradient_stochastic.csv")),
            gstep.to_csv(os.path.join(out, "gradient_step.csv"))]
    tb = gstep.blowup_time
    checks = {
        "meeting_time": meet,
        "deterministic_verdict": gd.verdict,
        "stochastic_verdict": gs.verdict,
        "blowup_time": tb,
        "coalescence_time": float(np.sqrt(abs(x0))),
    }
    verdicts = {
        "meeting_time_within_0.02": bool(abs(meet - np.sqrt(abs(x0))) <= 0.02),
        "deterministic_blowup": gd.verdict == "blow-up",
        "stochastic_bounded": gs.verdict == "bounded",
        "blowup_time_within_10pct": bool(tb is not None and abs(tb - np.sqrt(abs(x0))) <= 0.1 * np.sqrt(abs(x0))),
    }
    return checks, verdicts, arts


def weak_residual_study(field, cfg, n_levels, n_paths, datum, theta, seed_index0=0):
    """Mean over paths of max_t |R(t)| at ``n_levels`` halvings of ``cfg.dt`` (coarse to fine)."""
    n_fine = int(round(cfg.T / cfg.dt))
    xs = _grid(cfg.box, cfg.dx)
    res = np.zeros((n_levels, n_paths))
    for i in range(n_paths):
        fine = _path(cfg, seed_index0 + i, n_fine)
        for lvl in range(n_levels):
            p = fine.coarsen(2 ** (n_levels - 1 - lvl))
            sol = tr.solve_stochastic(datum, field, cfg.sigma, p, xs)
            res[lvl, i] = tr.weak_residual(sol, theta, field, cfg.sigma).max_abs
    return res


def run_weak_residual(cfg, out):
    P = cfg.params
    theta = tr.TestFunction(P["theta_center"], P["theta_radius"])
    u0 = tr.datum_from_spec(P["datum"])
    fields = {"zero": make_zero_drift(1), "mollified": _fast(field_from_spec(cfg.field))}
    checks, verdicts, arts = {}, {}, []
    rows = []
    for name, f in fields.items():
        res = weak_residual_study(f, cfg, P["levels"], cfg.n_paths, u0, theta)
        _finite("weak-residual", res)
        mean = res.mean(axis=1)
        n_fine = int(round(cfg.T / cfg.dt))
        for lvl in range(P["levels"]):
            rows.append((name, cfg.T / (n_fine // 2 ** (P["levels"] - 1 - lvl)), mean[lvl]))
        checks[f"{name}_mean_max_residual"] = mean.tolist()
        verdicts[f"{name}_decreasing"] = bool(np.all(np.diff(mean) < 0))
    # exact zero case
    sol = tr.solve_stochastic(tr.constant_datum(P["constant"]), fields["mollified"], cfg.sigma,
                              _path(cfg, 0, int(round(cfg.T / cfg.dt)) // 2 ** (P["levels"] - 1)),
                              _grid(cfg.box, cfg.dx))
    rc = tr.weak_residual(sol, theta, fields["mollified"], cfg.sigma)
    arts.append(rc.to_csv(os.path.join(out, "residual_constant.csv")))
    checks["constant_residual"] = rc.max_abs
    verdicts["constant_below_1e-10"] = bool(rc.max_abs < 1e-10)
    arts.append(write_csv(os.path.join(out, "weak_residual.csv"), ["field", "dt", "mean_max_residual"], rows))
    return checks, verdicts, arts


def run_weakstar(cfg, out):
    P = cfg.params
    b = _fast(field_from_spec(cfg.field))
    path = _path(cfg, 0)
    ens = sf.build_ensemble(b, cfg.sigma, _grid(cfg.box, cfg.dx), path, jacobian=True)
    f = tr.TestFunction(P["f_center"], P["f_radius"])
    ns = list(P["ns"])
    rep = tr.stability_weakstar([lambda x, n=n: np.sin(n * x) for n in ns], lambda x: np.zeros_like(x),
                                ens, f, 1.0, labels=ns)
    _finite("weakstar-stability", rep.a)
    arts = [write_csv(os.path.join(out, "weakstar.csv"), ["n", "a_n", "sup_diff", "bound"],
                      zip(ns, rep.a, rep.sup_diff, rep.bound()))]
    checks = {"a": rep.a.tolist(), "ratio_last_first": float(rep.a[-1] / rep.a[0]), "K": list(rep.K),
              "transfer": rep.transfer}
    verdicts = {
        "a_decreasing": bool(np.all(np.diff(rep.a) < 0)),
        "last_below_quarter_of_first": bool(rep.a[-1] < 0.25 * rep.a[0]),
        "direct_bound_holds": bool(np.all(rep.a <= rep.bound() * (1 + 1e-9))),
    }
    return checks, verdicts, arts


def _bump(c, R):
    def f(x):
        y = (np.asarray(x, dtype=float) - c) / R
        inside = np.abs(y) < 1
        return np.where(inside, np.exp(-1.0 / np.where(inside, 1 - y * y, 1.0)), 0.0)
    return f


SMOOTH_CORPUS = {
    "cos-sin": (lambda x: np.cos(x), lambda x: np.sin(2 * x) + 0.5 * x, _bump(0.1, 0.8)),
    "bump-bump": (_bump(0.0, 1.5), lambda x: _bump(0.2, 1.2)(x) * 2.0, _bump(-0.1, 0.9)),
    "poly-tanh": (lambda x: 1 + 0.3 * x**2, lambda x: np.tanh(3 * x), _bump(0.0, 1.0)),
}


def run_commutator_ladder(cfg, out):
    P = cfg.params
    r = P["r"]
    checks, verdicts, arts = {}, {}, []
    rows = []
    for name, (g, v, rho) in SMOOTH_CORPUS.items():
        rep = an.commutator_pairing(g, v, rho, cfg.eps, r)
        arts.append(rep.to_csv(os.path.join(out, f"pairing_{name}.csv")))
        ratio = float(abs(rep.pairing[-1]) / abs(rep.pairing[0]))
        checks[f"{name}_ratio"] = ratio
        verdicts[f"{name}_vanishing"] = bool(ratio < 0.5)
        verdicts[f"{name}_fit_stable"] = rep.stable
        rows.append((name, ratio))
    # Hölder drift: the pairing stays bounded along the ladder
    sq = lambda x: 2.0 * np.sign(x) * np.sqrt(np.abs(x))
    rep = an.commutator_pairing(lambda x: np.cos(x), sq, _bump(0.0, 1.0), cfg.eps, r)
    arts.append(rep.to_csv(os.path.join(out, "pairing_sqrt.csv")))
    checks["sqrt_pairing"] = rep.pairing.tolist()
    verdicts["sqrt_bounded"] = bool(np.all(np.isfinite(rep.pairing)) and rep.stable)
    # frozen stochastic flow
    b = _fast(mollify(_base_field(cfg.field), P["flow_eps"]))
    path = _path(cfg, 0)
    ens = sf.build_ensemble(b, cfg.sigma, _grid(cfg.box, cfg.dx), path, jacobian=True)
    phi = an.Diffeomorphism.from_ensemble(ens, P["t_flow"])
    g, v, rho = SMOOTH_CORPUS["cos-sin"]
    frep = an.commutator_with_flow(g, v, phi, rho, cfg.eps, r, P["R"], rho_support=(-0.7, 0.9))
    arts.append(frep.to_csv(os.path.join(out, "pairing_flow.csv")))
    fr = float(abs(frep.pairing[-1]) / abs(frep.pairing[0]))
    checks["flow_ratio"] = fr
    verdicts["flow_vanishing"] = bool(fr < 0.5)
    rows.append(("flow", fr))
    arts.append(write_csv(os.path.join(out, "commutator_ratios.csv"), ["case", "finest_over_coarsest"], rows))
    return checks, verdicts, arts


def run_jacobian_regularity(cfg, out):
    P = cfg.params
    base = _base_field(cfg.field)
    fields = [mollify_on_grid(base, e, -P["table_half_width"], P["table_half_width"], min(P["table_h"], e / 5))
              for e in cfg.eps]
    path = _path(cfg, 0, d=base.dim)
    rep = an.jacobian_sobolev_probe(fields, cfg.eps, cfg.sigma, P["alpha"], P["p"], P["r"], path,
                                    n=P["n"], time_stride=P["time_stride"])
    _finite("jacobian-regularity", rep.trace)
    arts = [rep.to_csv(os.path.join(out, "jacobian_probe.csv"))]
    grid = pb.BoxGrid.from_spacing(cfg.box[0], cfg.box[1], P["pde_dx"], base.dim)
    rows, norms = [], []
    for e, f in zip(cfg.eps, fields):
        F = pb.solve_F_eps(f, grid, cfg.T, P["pde_dt"])
        nr = pb.sobolev_norms(F, P["p"])
        _finite("jacobian-regularity", nr["w1p"])
        norms.append((nr["sup"].max(), nr["w1p"].max()))
        rows.append((e, nr["sup"].max(), nr["w1p"].max()))
    arts.append(write_csv(os.path.join(out, "F_eps_norms.csv"), ["eps", "sup_t_sup_x", "sup_t_w1p"], rows))
    w = np.array([n[1] for n in norms])
    checks = {"trace": rep.trace.tolist(), "variation": rep.variation, "in_window": rep.in_window,
              "F_w1p": w.tolist(), "min_J": rep.min_J}
    verdicts = {
        "probe_bounded": rep.verdict == "bounded",
        "probe_variation_below_2": bool(rep.variation < 2.0),
        "F_eps_variation_below_2": bool(w.max() / w.min() < 2.0),
    }
    return checks, verdicts, arts


def run_zvonkin(cfg, out):
    P = cfg.params
    b = _fast(field_from_spec(cfg.field))
    scan_grid = pb.BoxGrid.from_spacing(P["scan_box"][0], P["scan_box"][1], P["scan_dx"])
    scan = pb.gradient_bound_check(b, cfg.sigma, scan_grid, cfg.lams, cfg.T, P["scan_dt"])
    lam = scan.threshold if scan.threshold is not None else float(max(cfg.lams))
    grid = pb.BoxGrid.from_spacing(cfg.box[0], cfg.box[1], cfg.dx)
    U = pb.solve_backward_U(b, lam, cfg.sigma, grid, cfg.T, P["pde_dt"])
    n_fine = int(round(cfg.T / min(P["path_dts"])))
    fine = [sf.sample_wiener(cfg.seed, i, sf.uniform_times(cfg.T, n_fine)) for i in range(cfg.n_paths)]
    rows, means, bias = [], [], []
    for h in sorted(P["path_dts"], reverse=True):
        m = int(round(n_fine * h / cfg.T))
        paths = [p.coarsen(m) for p in fine]
        z = pb.zvonkin_residual(b, lam, cfg.sigma, U, paths, P["x0"])
        _finite("zvonkin", z.per_path)
        means.append(z.mean)
        bias.append(z.terminal_bias)
        rows.append((h, z.mean, z.max, z.terminal_bias, z.n_paths, z.dropped))
    arts = [write_csv(os.path.join(out, "zvonkin.csv"),
                      ["dt", "mean_path_residual", "max_residual", "terminal_bias", "n_paths", "dropped"], rows)]
    # b = 0: the identity is exact
    Z0 = pb.solve_backward_U(make_zero_drift(1), lam, cfg.sigma, grid, cfg.T, P["pde_dt"])
    z0 = pb.zvonkin_residual(make_zero_drift(1), lam, cfg.sigma, Z0, fine[:20], P["x0"])
    decrease = 1.0 - means[-1] / means[0]
    checks = {"lambda": lam, "mean_path_residual": means, "terminal_bias": bias,
              "relative_decrease": decrease, "zero_drift_max": z0.max}
    verdicts = {
        "mean_decreasing": bool(means[-1] < means[0]),
        "decrease_at_least_40pct": bool(decrease >= 0.4),
        "zero_drift_exact": bool(z0.max < 1e-12),
    }
    return checks, verdicts, arts


def run_gradient_bound(cfg, out):
    P = cfg.params
    b = _fast(field_from_spec(cfg.field))
    grid = pb.BoxGrid.from_spacing(cfg.box[0], cfg.box[1], cfg.dx)
    mg = pb.BoxGrid.from_spacing(P["margin_box"][0], P["margin_box"][1], cfg.dx)
    rep = pb.gradient_bound_check(b, cfg.sigma, grid, cfg.lams, cfg.T, cfg.dt, tuple(P["window"]),
                                  P["bound"], mg, workers=cfg.workers)
    _finite("gradient-bound", rep.sup_grad)
    z = pb.gradient_bound_check(make_zero_drift(1), cfg.sigma, grid, cfg.lams, cfg.T, cfg.dt, tuple(P["window"]))
    arts = [rep.to_csv(os.path.join(out, "gradient_bound.csv")),
            write_csv(os.path.join(out, "boundary_margin.csv"), ["lambda", "margin"], zip(rep.lams, rep.margin))]
    checks = {"sup_grad": rep.sup_grad.tolist(), "threshold": rep.threshold, "zero_sup": float(z.sup_grad.max()),
              "margin": rep.margin.tolist()}
    verdicts = {
        "bound_reached": bool(rep.threshold is not None and rep.threshold <= 100),
        "zero_drift_below_1e-12": bool(z.sup_grad.max() < 1e-12),
        "nonincreasing_in_lambda": bool(np.all(np.diff(rep.sup_grad) <= 0.05 * rep.sup_grad[:-1])),
    }
    return checks, verdicts, arts


# ---------------------------------------------------------------------------
# registry


SCENARIOS = {
    "flow-stability": Scenario(
        "flow-stability", "Theorem 6(iii)", "Monte Carlo stability of flows of mollified drifts on common noise",
        {"_top": {"field": {"kind": "sqrt", "sign": 1}, "sigma": 1.0, "dt": 5e-3, "box": [-1.0, 1.0], "dx": 0.2,
                  "n_paths": 1000, "eps": [0.2, 0.1, 0.05, 0.025, 0.0125]},
         "p": 2.0, "h": 1e-3, "relation_eps": 0.05, "relation_dt": 1e-3, "relation_dx": 0.01,
         "relation_every": 0.1},
        run_flow_stability),
    "transport-dichotomy": Scenario(
        "transport-dichotomy", "Theorem 5", "gradient growth of transport solutions with and without noise",
        {"_top": {"field": {"kind": "sqrt", "sign": -1}, "sigma": 1.0, "dt": 1e-3, "box": [-1.0, 1.0],
                  "dx": 1.0 / 256},
         "x0": 0.25, "levels": 3, "out_every": 0.01, "datum": {"kind": "tanh"}, "step_width": 0.2,
         "fan_value": 0.0},
        run_transport_dichotomy),
    "weak-residual": Scenario(
        "weak-residual", "§2 Definition", "residual of the tested (Itô) transport equation under dt halving",
        {"_top": {"field": {"kind": "sqrt", "sign": 1, "eps": 0.05}, "sigma": 1.0, "dt": 2.5e-3,
                  "box": [-0.6, 0.6], "dx": 0.005, "n_paths": 8},
         "levels": 3, "datum": {"kind": "tanh"}, "theta_center": 0.0, "theta_radius": 0.5, "constant": 2.0},
        run_weak_residual),
    "weakstar-stability": Scenario(
        "weakstar-stability", "§3 Proposition", "weak* stability of v_n o phi_t^-1 through the forward pullback",
        {"_top": {"field": {"kind": "sqrt", "sign": -1, "eps": 0.05}, "sigma": 1.0, "dt": 1e-3,
                  "box": [-6.0, 6.0], "dx": 0.003},
         "ns": [1, 2, 4, 8, 16, 32], "f_center": 0.0, "f_radius": 0.5},
        run_weakstar),
    "commutator-ladder": Scenario(
        "commutator-ladder", "§4 Lemma", "mollifier commutator pairings along an eps ladder, also through a flow",
        {"_top": {"field": {"kind": "sqrt", "sign": 1}, "sigma": 1.0, "dt": 1e-3, "box": [-6.0, 6.0],
                  "dx": 0.005, "eps": [0.2, 0.1, 0.05, 0.025]},
         "r": 1.0, "R": 4.0, "t_flow": 0.5, "flow_eps": 0.05},
        run_commutator_ladder),
    "jacobian-regularity": Scenario(
        "jacobian-regularity", "§4 Theorem", "fractional Sobolev regularity of the flow Jacobian and F^eps bounds",
        {"_top": {"field": {"kind": "sqrt2d", "sign": -1}, "sigma": 1.0, "dt": 5e-3, "box": [-3.0, 3.0],
                  "dx": 0.05, "eps": [0.2, 0.1, 0.05]},
         "alpha": 0.5, "p": 1.5, "r": 1.0, "n": 32, "time_stride": 10, "table_half_width": 6.0,
         "table_h": 0.01, "pde_dx": 0.05, "pde_dt": 0.01},
        run_jacobian_regularity),
    "zvonkin": Scenario(
        "zvonkin", "§1.1 Zvonkin identity", "transformed SDE identity along Euler paths under dt halving",
        {"_top": {"field": {"kind": "sqrt", "sign": 1, "eps": 0.05}, "sigma": 1.0, "dt": 5e-3,
                  "box": [-8.0, 8.0], "dx": 0.005, "n_paths": 200, "lams": [1.0, 10.0, 100.0]},
         "path_dts": [1e-2, 5e-3], "pde_dt": 1.0 / 1600, "x0": 0.3, "scan_box": [-3.0, 3.0], "scan_dx": 0.01,
         "scan_dt": 0.002},
        run_zvonkin),
    "gradient-bound": Scenario(
        "gradient-bound", "Theorem 2", "lambda scan for the sup of grad U against 1/2",
        {"_top": {"field": {"kind": "sqrt", "sign": 1, "eps": 0.05}, "sigma": 1.0, "dt": 2e-3,
                  "box": [-3.0, 3.0], "dx": 0.01, "lams": [1.0, 10.0, 100.0]},
         "window": [-2.0, 2.0], "bound": 0.5, "margin_box": [-4.0, 4.0]},
        run_gradient_bound),
}


def scenario_params() -> dict:
    return {name: s.defaults for name, s in SCENARIOS.items()}


def list_scenarios() -> list:
    return [f"{s.name} → {s.maps_to}: {s.description}" for s in SCENARIOS.values()]


@dataclass
class RunReport:
    scenario: str
    config_hash: str
    verdicts: dict
    checks: dict
    artifacts: list
    wall_clock: float

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.verdicts.values())


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(repr(float(v))) if np.isfinite(v) else str(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def run_scenario(config, out_dir: Optional[str] = None) -> RunReport:
    """Run one scenario; ``config`` is a :class:`ScenarioConfig`, a mapping or a YAML path.

    CSVs and ``report.json`` land in ``out_dir`` (default ``<config.out>/<scenario>``).
    The report file leaves out the wall-clock time so reruns are byte-identical.
    """
    if isinstance(config, str):
        config = load(config, scenario_params())
    elif isinstance(config, dict):
        config = validate(config, scenario_params())
    if config.scenario not in SCENARIOS:
        raise ConfigError(f"config.scenario: unknown scenario {config.scenario!r}")
    out = out_dir or os.path.join(config.out, config.scenario)
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    with np.errstate(over="raise", invalid="ignore"):
        try:
            checks, verdicts, arts = SCENARIOS[config.scenario].runner(config, out)
        except FloatingPointError as exc:
            raise NumericalAbort(f"{config.scenario}: {exc}") from exc
    wall = time.perf_counter() - t0
    rep = RunReport(config.scenario, config.config_hash(), verdicts, _jsonable(checks), list(arts), wall)
    path = os.path.join(out, "report.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"scenario": rep.scenario, "config_hash": rep.config_hash, "config": _jsonable(config.canonical()),
                   "verdicts": rep.verdicts, "checks": rep.checks,
                   "artifacts": [os.path.basename(a) for a in rep.artifacts]}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rep.artifacts.append(path)
    return rep
