"""Acceptance suite: twelve numbered criteria with pinned seeds and one verdict table.

Failures are data: a criterion that does not meet its tolerance is reported
as failed, never raised. Tolerances can be overridden per criterion (for
instance from a YAML file), which only changes that criterion's verdict.
"""
from __future__ import annotations

import copy
import filecmp
import os
import time
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import yaml

from . import parabolic as pb
from . import scenarios as sc
from . import stochastic_flow as sf
from . import transport as tr
from .config import ConfigError, validate
from .fields import make_sqrt_drift, make_zero_drift, mollify, tabulate
from .io import write_csv
from .oracles import run_oracles

SEED = 1234

TOLERANCES = {
    1: {"time_error": 0.02, "runtime": 1.0},
    2: {"residual": 1e-3},
    3: {"runtime": 60.0},
    4: {"error": 5e-2},
    5: {"bound": 0.5, "lambda_max": 100.0, "zero": 1e-12},
    6: {"decrease": 0.4, "min_paths": 200},
    7: {"constant": 1e-10},
    8: {"ratio": 0.25, "runtime": 30.0},
    9: {"ratio": 0.5},
    10: {"variation": 2.0},
    11: {},
    12: {"runtime": 600.0},
}

NAMES = {
    1: "coalescence time",
    2: "ODE non-uniqueness",
    3: "regularization dichotomy",
    4: "transport relation",
    5: "gradient bound",
    6: "Zvonkin identity",
    7: "weak-formulation residual",
    8: "weak* stability",
    9: "commutator vanishing",
    10: "Jacobian regularity probe",
    11: "oracle equivalences",
    12: "determinism and runtime",
}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str
    runtime: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.name}: value={self.value:.6g} tol={self.tolerance:.6g} {self.detail}"


@dataclass
class AcceptanceReport:
    results: list
    out: str
    runtime: float
    artifacts: list = dc_field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def by_number(self, n: int) -> CriterionResult:
        return next(r for r in self.results if r.number == n)

    def table(self) -> str:
        return "\n".join(r.line() for r in self.results)


def merge_tolerances(overrides: Optional[dict]) -> dict:
    tol = copy.deepcopy(TOLERANCES)
    for k, v in (overrides or {}).items():
        n = int(k)
        if n not in tol:
            raise ConfigError(f"tolerances.{k}: unknown criterion")
        if not isinstance(v, dict):
            raise ConfigError(f"tolerances.{k}: expected a mapping")
        for key, val in v.items():
            if key not in tol[n]:
                raise ConfigError(f"tolerances.{k}.{key}: unknown key")
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"tolerances.{k}.{key}: expected a number")
            tol[n][key] = float(val)
    return tol


def load_tolerances(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict) or set(raw) - {"tolerances"}:
        bad = sorted(set(raw) - {"tolerances"}) if isinstance(raw, dict) else ["<root>"]
        raise ConfigError(f"acceptance.{bad[0]}: unknown key")
    return merge_tolerances(raw.get("tolerances"))


def _cfg(name, seed, workers, **top):
    return validate({"scenario": name, "seed": seed, "workers": workers, **top}, sc.scenario_params())


def _sub(out, n):
    d = os.path.join(out, f"criterion_{n:02d}")
    os.makedirs(d, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# criteria


def c1(tol, seed, workers, out):
    t0 = time.perf_counter()
    meet = sf.meeting_time(make_sqrt_drift(-1), 0.25, -0.25, 1e-3, 1.0)
    rt = time.perf_counter() - t0
    err = abs(meet - 0.5)
    write_csv(os.path.join(_sub(out, 1), "meeting.csv"), ["x0", "dt", "meeting_time", "predicted"],
              [(0.25, 1e-3, meet, 0.5)])
    ok = err <= tol["time_error"] and rt < tol["runtime"]
    return ok, err, tol["time_error"], f"meeting time {meet:.4f} vs sqrt(0.25) = 0.5"


def c2(tol, seed, workers, out):
    b = make_sqrt_drift(1)
    times = sf.uniform_times(1.0, 1000)
    r0 = sf.integral_equation_residual(b, np.zeros_like(times), times, 0.0)
    r1 = sf.integral_equation_residual(b, times**2, times, 0.0)
    write_csv(os.path.join(_sub(out, 2), "nonuniqueness.csv"), ["solution", "residual"],
              [("zero", r0), ("t^2", r1)])
    worst = max(r0, r1)
    return worst < tol["residual"], worst, tol["residual"], f"residuals X=0: {r0:.2e}, X=t^2: {r1:.2e}"


def c3(tol, seed, workers, out):
    t0 = time.perf_counter()
    b = make_sqrt_drift(-1)
    levels = [1 / 64, 1 / 128, 1 / 256]
    out_t = np.round(np.arange(0, 1.0 + 1e-12, 0.01), 12)
    path = sf.sample_wiener(seed, 0, sf.uniform_times(1.0, 1000))
    grid = lambda h: np.linspace(-1, 1, int(round(2 / h)) + 1)
    u0 = tr.tanh_datum()
    det = tr.gradient_diagnostic([tr.solve_deterministic(u0, b, grid(h), 1.0, 1e-3, out_t) for h in levels])
    sto = tr.gradient_diagnostic([tr.solve_stochastic(u0, b, 1.0, path, grid(h), out_t) for h in levels])
    rt = time.perf_counter() - t0
    d = _sub(out, 3)
    det.to_csv(os.path.join(d, "gradient_sigma0.csv"))
    sto.to_csv(os.path.join(d, "gradient_sigma1.csv"))
    ok = det.verdict == "blow-up" and sto.verdict == "bounded" and rt < tol["runtime"]
    rel = float(abs(sto.sup_grad[-1] - sto.sup_grad[-2]).max() / sto.sup_grad[-1].max())
    return ok, rel, 0.2, f"sigma=0: {det.verdict} (t={det.blowup_time}), sigma=1: {sto.verdict}"


def c4(tol, seed, workers, out):
    b = tabulate(mollify(make_sqrt_drift(1), 0.05), -10.0, 10.0)
    path = sf.sample_wiener(seed, 0, sf.uniform_times(1.0, 1000))
    ens = sf.build_ensemble(b, 1.0, np.linspace(-1, 1, 201), path)
    out_t = np.round(np.arange(0, 1.0 + 1e-12, 0.1), 12)
    u0 = tr.tanh_datum()
    sol = tr.solve_stochastic(u0, b, 1.0, path, np.linspace(-6, 6, 1201), out_t)
    err = tr.transport_relation_error(sol, ens, u0)
    write_csv(os.path.join(_sub(out, 4), "transport_relation.csv"), ["eps", "dt", "max_error"], [(0.05, 1e-3, err)])
    return err < tol["error"], err, tol["error"], "max over times and start points of |u(t, phi_t(x)) - u0(x)|"


def c5(tol, seed, workers, out):
    b = tabulate(mollify(make_sqrt_drift(1), 0.05), -10.0, 10.0)
    grid = pb.BoxGrid.from_spacing(-3.0, 3.0, 0.01)
    rep = pb.gradient_bound_check(b, 1.0, grid, (1.0, 10.0, 100.0), 1.0, 2e-3, (-2.0, 2.0), tol["bound"],
                                  workers=workers)
    z = pb.gradient_bound_check(make_zero_drift(1), 1.0, grid, (1.0, 10.0, 100.0), 1.0, 2e-3, (-2.0, 2.0))
    rep.to_csv(os.path.join(_sub(out, 5), "gradient_bound.csv"))
    zs = float(z.sup_grad.max())
    ok = rep.threshold is not None and rep.threshold <= tol["lambda_max"] and zs < tol["zero"]
    best = float(rep.sup_grad.min())
    return ok, best, tol["bound"], f"threshold lambda = {rep.threshold}, sup for b = 0: {zs:.1e}"


def c6(tol, seed, workers, out):
    cfg = _cfg("zvonkin", seed, workers)
    checks, _, _ = sc.run_zvonkin(cfg, _sub(out, 6))
    dec = checks["relative_decrease"]
    ok = dec >= tol["decrease"] and cfg.n_paths >= tol["min_paths"]
    m = checks["mean_path_residual"]
    return ok, dec, tol["decrease"], (f"mean residual {m[0]:.4g} -> {m[1]:.4g} over {cfg.n_paths} paths, "
                                      f"lambda = {checks['lambda']:g}")


def c7(tol, seed, workers, out):
    cfg = _cfg("weak-residual", seed, workers)
    checks, _, _ = sc.run_weak_residual(cfg, _sub(out, 7))
    z, m = checks["zero_mean_max_residual"], checks["mollified_mean_max_residual"]
    ok = bool(np.all(np.diff(z) < 0) and np.all(np.diff(m) < 0) and checks["constant_residual"] < tol["constant"])
    return ok, checks["constant_residual"], tol["constant"], (
        "b=0: " + "/".join(f"{v:.3g}" for v in z) + "; mollified: " + "/".join(f"{v:.3g}" for v in m))


def c8(tol, seed, workers, out):
    t0 = time.perf_counter()
    cfg = _cfg("weakstar-stability", seed, workers)
    checks, _, _ = sc.run_weakstar(cfg, _sub(out, 8))
    rt = time.perf_counter() - t0
    r = checks["ratio_last_first"]
    ok = r < tol["ratio"] and rt < tol["runtime"] and bool(np.all(np.diff(checks["a"]) < 0))
    return ok, r, tol["ratio"], "a_32 / a_1 with v_n = sin(n x) through the forward pullback"


def c9(tol, seed, workers, out):
    cfg = _cfg("commutator-ladder", seed, workers)
    checks, _, _ = sc.run_commutator_ladder(cfg, _sub(out, 9))
    ratios = {k[:-6]: v for k, v in checks.items() if k.endswith("_ratio")}
    worst = max(ratios.values())
    return worst < tol["ratio"], worst, tol["ratio"], "worst |P(0.025)| / |P(0.2)| over " + ", ".join(ratios)


def c10(tol, seed, workers, out):
    cfg = _cfg("jacobian-regularity", seed, workers)
    checks, verdicts, _ = sc.run_jacobian_regularity(cfg, _sub(out, 10))
    v = checks["variation"]
    return v < tol["variation"], v, tol["variation"], "trace " + "/".join(f"{t:.3f}" for t in checks["trace"])


def c11(tol, seed, workers, out):
    res = run_oracles()
    write_csv(os.path.join(_sub(out, 11), "oracles.csv"), ["check", "value", "threshold", "passed", "oracle"],
              [(r.name, r.value, r.threshold, r.passed, r.oracle) for r in res])
    bad = [r.name for r in res if not r.passed]
    return not bad, float(len(bad)), 0.0, f"{len(res) - len(bad)}/{len(res)} oracle checks" + (
        f"; failing: {', '.join(bad)}" if bad else "")


CRITERIA = {1: c1, 2: c2, 3: c3, 4: c4, 5: c5, 6: c6, 7: c7, 8: c8, 9: c9, 10: c10, 11: c11}


def _run_pass(tol, seed, workers, out, only=None, quiet=True):
    results = []
    for n, fn in CRITERIA.items():
        if only is not None and n not in only:
            continue
        t0 = time.perf_counter()
        try:
            ok, value, tolerance, detail = fn(tol[n], seed, workers, out)
        except Exception as exc:  # failures are data
            ok, value, tolerance, detail = False, float("nan"), float("nan"), f"error: {exc!r}"
        r = CriterionResult(n, NAMES[n], bool(ok), float(value), float(tolerance), detail,
                            time.perf_counter() - t0)
        results.append(r)
        if not quiet:
            print(r.line(), flush=True)
    return results


def _outputs(root):
    found = []
    for base, _, files in os.walk(root):
        for f in files:
            if f.endswith((".csv", ".json")):
                found.append(os.path.relpath(os.path.join(base, f), root))
    return sorted(found)


def run_acceptance(out: str = "acceptance", seed: int = SEED, tolerances: Optional[dict] = None,
                   workers: int = 1, determinism: bool = True, only=None, quiet: bool = True) -> AcceptanceReport:
    """Run every criterion; with ``determinism`` the suite is repeated into ``out/repeat``
    and all CSV outputs are compared byte for byte (criterion 12)."""
    tol = merge_tolerances(tolerances)
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    first = os.path.join(out, "run")
    results = _run_pass(tol, seed, workers, first, only, quiet)
    if determinism:
        second = os.path.join(out, "repeat")
        _run_pass(tol, seed, workers, second, only, True)
        total = time.perf_counter() - t0
        a, b = _outputs(first), _outputs(second)
        diff = [f for f in a if f not in b or not filecmp.cmp(os.path.join(first, f), os.path.join(second, f),
                                                              shallow=False)]
        diff += [f for f in b if f not in a]
        ok = not diff and total < tol[12]["runtime"]
        detail = f"{len(a)} output files compared, {len(diff)} differ; two passes took {total:.0f} s"
        r = CriterionResult(12, NAMES[12], ok, total, tol[12]["runtime"], detail, total)
        results.append(r)
        if not quiet:
            print(r.line(), flush=True)
    runtime = time.perf_counter() - t0
    table = os.path.join(out, "verdicts.csv")
    write_csv(table, ["criterion", "name", "passed", "value", "tolerance"],
              [(r.number, r.name, r.passed, r.value if r.number != 12 else "", r.tolerance) for r in results])
    return AcceptanceReport(results, out, runtime, [table])
