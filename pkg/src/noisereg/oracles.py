"""Independent oracle checks for the derived reference values.

Each check computes a quantity with the package and compares it with a
closed form, a brute-force computation or a refinement study that does not
share code with the quantity under test. ``run_oracles`` returns one
:class:`OracleResult` per check, in registry order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import analysis as an
from . import parabolic as pb
from . import stochastic_flow as sf
from . import transport as tr
from .fields import (MollifierKernel, estimate_holder_seminorm, make_constant_drift, make_linear_drift,
                     make_sqrt2d_drift, make_sqrt_drift, make_zero_drift, mollify, mollify_on_grid, tabulate)

SEED = 20240101


@dataclass
class OracleResult:
    name: str
    value: float
    threshold: float
    passed: bool
    oracle: str


def _res(name, value, threshold, passed, oracle):
    return OracleResult(name, float(value), float(threshold), bool(passed), oracle)


def _msqrt(sign, eps):
    return tabulate(mollify(make_sqrt_drift(sign), eps), -10.0, 10.0)


# ---------------------------------------------------------------------------
# fields


def o_sqrt_value():
    v = make_sqrt_drift(-1)(0.0, np.array([[0.25]]))[0, 0]
    return _res("sqrt_drift(-1) at 0.25", abs(v + 1.0), 1e-15, abs(v + 1.0) <= 1e-15, "-2*1*sqrt(0.25) = -1")


def o_sqrt_div():
    v = make_sqrt_drift(1).div(0.0, np.array([[0.25]]))[0]
    return _res("div sqrt_drift(+1) at 0.25", abs(v - 2.0), 1e-12, abs(v - 2.0) <= 1e-12, "1/sqrt(|x|) = 2")


def _dense_mollified(eps, xs, per_eps=4000):
    # direct Riemann sum of b(x - z) theta_eps(z) on a uniform z grid, no shared quadrature
    k = MollifierKernel(eps)
    h = eps / per_eps
    z = np.arange(-2 * eps, 2 * eps + h / 2, h)
    w = k(z)
    w = w / w.sum()
    out = np.empty(xs.size)
    for i, x in enumerate(xs):
        y = x - z
        out[i] = np.dot(2 * np.sign(y) * np.sqrt(np.abs(y)), w)
    return out


def o_mollify_rate():
    xs = np.linspace(-1, 1, 801)
    eps = np.array([0.1, 0.05, 0.025])
    b = 2 * np.sign(xs) * np.sqrt(np.abs(xs))
    errs, agree = [], 0.0
    for e in eps:
        dense = _dense_mollified(e, xs)
        mine = mollify(make_sqrt_drift(1), e)(0.0, xs[:, None])[:, 0]
        agree = max(agree, float(np.max(np.abs(dense - mine))))
        errs.append(np.max(np.abs(dense - b)))
    rate = np.polyfit(np.log(eps), np.log(errs), 1)[0]
    ok = abs(rate - 0.5) <= 0.05 and agree <= 1e-3
    return _res("mollification sup error rate", rate, 0.5, ok,
                f"dense Riemann-sum convolution; max deviation from oracle {agree:.2e}")


def o_holder_sqrt():
    rep = estimate_holder_seminorm(lambda t, x: np.sqrt(np.abs(x)), 0.5, np.linspace(-1, 1, 401))
    return _res("Holder seminorm of sqrt|x|", abs(rep.seminorm - 1.0), 1e-12, abs(rep.seminorm - 1.0) <= 1e-12,
                "all grid pairs; equality at y = 0")


# ---------------------------------------------------------------------------
# noise and flows


def o_wiener_moments():
    dW = sf.wiener_batch(SEED, range(100000), np.array([0.0, 1.0]), 2)[:, 0, :]
    m = float(np.max(np.abs(dW.mean(axis=0))))
    v = float(np.max(np.abs(dW.var(axis=0) - 1.0)))
    c = float(abs(np.corrcoef(dW.T)[0, 1]))
    worst = max(m, v, c)
    return _res("Wiener increments: mean, variance, correlation", worst, 0.02, worst <= 0.02,
                "Monte Carlo moments over 1e5 paths")


def _euler_det(field, x0, T, dt):
    times = sf.uniform_times(T, int(round(T / dt)))
    traj, _ = sf.euler_forward(field, 0.0, x0, times, np.zeros((times.size - 1, field.dim)), store=False)
    return traj


def o_linear_forward():
    a = 0.7
    f = make_linear_drift(a)
    e1 = abs(_euler_det(f, 1.0, 1.0, 1e-3)[0, 0] - np.exp(a))
    e2 = abs(_euler_det(f, 1.0, 1.0, 5e-4)[0, 0] - np.exp(a))
    ok = e1 <= 1e-3 and 1.8 <= e1 / e2 <= 2.2
    return _res("linear forward flow e^{aT}", e1, 1e-3, ok, f"closed form; halving ratio {e1 / e2:.3f}")


def o_sqrt_branch():
    e0 = 0.01
    x = _euler_det(make_sqrt_drift(1), e0, 1.0, 1e-3)[0, 0]
    rel = abs(x - (np.sqrt(e0) + 1.0) ** 2) / (np.sqrt(e0) + 1.0) ** 2
    return _res("sqrt branch (sqrt(x0)+t)^2", rel, 1e-2, rel <= 1e-2, "closed-form solution of x' = 2 sqrt(x)")


def _roundtrip(field, dt, sigma=1.0, seed_index=0, path=None):
    ys = np.linspace(-1, 1, 201)
    if path is None:
        path = sf.sample_wiener(SEED, seed_index, sf.uniform_times(1.0, int(round(1 / dt))))
    end, _ = sf.euler_forward(field, sigma, ys, path.times, path.increments, store=False)
    back, _ = sf.euler_backward(field, sigma, end, path.times, path.increments, path.n_steps, store=False)
    return float(np.max(np.abs(back[:, 0] - ys)))


def o_roundtrip():
    dt = 1e-3
    e_h = _roundtrip(make_sqrt_drift(1), dt)
    fine = sf.sample_wiener(SEED, 7, sf.uniform_times(1.0, int(round(2 / dt))))
    l1 = _roundtrip(make_linear_drift(0.7), dt, path=fine.coarsen(2))
    l2 = _roundtrip(make_linear_drift(0.7), dt / 2, path=fine)
    ok = e_h <= np.sqrt(dt) and 1.7 <= l1 / l2 <= 2.3
    return _res("inverse flow round trip", e_h, np.sqrt(dt), ok,
                f"forward then backward on shared noise; linear field halving ratio {l1 / l2:.3f}")


def o_linear_backward():
    a, t = 0.7, 1.0
    xs = np.linspace(-1, 1, 21)

    def err(dt):
        times = sf.uniform_times(t, int(round(t / dt)))
        z, _ = sf.euler_backward(make_linear_drift(a), 0.0, xs, times, np.zeros((times.size - 1, 1)),
                                 times.size - 1, store=False)
        return float(np.max(np.abs(z[:, 0] - xs * np.exp(-a * t))))

    e1, e2 = err(1e-3), err(5e-4)
    ok = e1 <= 1e-3 and 1.8 <= e1 / e2 <= 2.2
    return _res("linear backward flow x e^{-at}", e1, 1e-3, ok, f"closed form; halving ratio {e1 / e2:.3f}")


def o_inversion_methods():
    b = make_sqrt_drift(1)
    path = sf.sample_wiener(SEED, 0, sf.uniform_times(1.0, 1000))
    ens = sf.build_ensemble(b, 1.0, np.linspace(-3, 3, 3001), path)
    img = ens.image(1.0)[:, 0]
    q = np.linspace(np.quantile(img, 0.25), np.quantile(img, 0.75), 101)
    zb = sf.invert_flow(ens, 1.0, q, "backward").points[:, 0]
    zi = sf.invert_flow(ens, 1.0, q, "interpolate").points[:, 0]
    diff = float(np.max(np.abs(zb - zi)))
    step = _roundtrip(b, 1e-3)
    return _res("interpolated vs backward inversion", diff, 3 * step, diff <= 3 * step,
                "two-method cross-validation; one-step error measured by the round trip")


def o_jacobian_linear():
    a = 0.7
    path = sf.sample_wiener(SEED, 1, sf.uniform_times(1.0, 1000))
    ens = sf.build_ensemble(make_linear_drift(a), 1.0, np.linspace(-1, 1, 11), path, jacobian=True)
    fd = sf.jacobian_fd(ens, 1.0)
    e_fd = float(np.max(np.abs(fd.det - np.exp(a))))
    ode = sf.jacobian_ode(make_linear_drift(a), path, np.linspace(-1, 1, 11))
    e_ode = float(np.max(np.abs(ode.J - np.exp(a * ode.times)[:, None])))
    return _res("Jacobian of the linear flow e^{at}", e_fd, 1e-3, e_fd <= 1e-3 and e_ode <= 1e-12,
                f"variational equation closed form; divergence ODE error {e_ode:.1e}")


def o_jacobian_methods():
    b = _msqrt(1, 0.05)
    path = sf.sample_wiener(SEED, 2, sf.uniform_times(1.0, 1000))
    xs = np.linspace(-1, 1, 41)
    ens = sf.build_ensemble(b, 1.0, xs, path, jacobian=True)
    fd = sf.jacobian_fd(ens, 1.0)
    rel = float(np.max(np.abs(fd.det - ens.jacobian[-1]) / ens.jacobian[-1]))
    return _res("Jacobian: finite differences vs divergence ODE", rel, 0.05, rel <= 0.05,
                "two-method cross-validation, mollified sqrt drift eps = 0.05")


def o_composition():
    b = _msqrt(1, 0.05)
    path = sf.sample_wiener(SEED, 3, sf.uniform_times(1.0, 1000))
    e = sf.flow_composition_check(b, 1.0, path, 0.4, 1.0, np.linspace(-1, 1, 401))
    return _res("flow composition phi_{s,t} o phi_{0,s} = phi_{0,t}", e, 1e-2, e <= 1e-2,
                "self-consistency on shared noise")


def o_stability():
    eps = [0.2 * 2.0**-n for n in range(5)]
    fields = [_msqrt(1, e) for e in eps]
    rep = sf.stability_experiment(fields, None, 1.0, 2.0, np.linspace(-1, 1, 11), 1000, SEED,
                                  sf.uniform_times(1.0, 200))
    moved = rep.displacement[:-1]
    ok = bool(np.all(np.diff(moved) < 0)) and rep.jacobian_bounded(2.0)
    jr = float(rep.jacobian_moment.max() / rep.jacobian_moment[0])
    return _res("flow stability statistic and Jacobian moment", jr, 2.0, ok,
                "Monte Carlo, 1000 paths, finest eps as reference")


# ---------------------------------------------------------------------------
# transport


def o_transport_selfconvergence():
    b = make_sqrt_drift(-1)
    fine = sf.sample_wiener(SEED, 4, sf.uniform_times(1.0, 4000))
    coarse = fine.coarsen(4)
    xs = np.linspace(-1, 1, 201)
    out_t = np.round(np.arange(0, 1.0 + 1e-12, 0.01), 12)
    u_c = tr.solve_stochastic(tr.tanh_datum(), b, 1.0, coarse, xs, out_t)
    u_f = tr.solve_stochastic(tr.tanh_datum(), b, 1.0, fine, xs, out_t)
    e = float(np.max(np.abs(u_c.values - u_f.values)))
    return _res("stochastic transport vs dt/4 reference", e, 5e-2, e < 5e-2, "self-convergence at refined step")


def o_transport_linear():
    a = 0.7
    xs = np.linspace(-1, 1, 201)

    def err(dt):
        s = tr.solve_deterministic(tr.tanh_datum(), make_linear_drift(a), xs, 1.0, dt)
        return float(np.max(np.abs(s.values[-1] - np.tanh(xs * np.exp(-a)))))

    e1, e2 = err(1e-3), err(5e-4)
    ok = e1 <= 1e-3 and 1.8 <= e1 / e2 <= 2.2
    return _res("deterministic transport, linear drift", e1, 1e-3, ok,
                f"closed-form characteristics; halving ratio {e1 / e2:.3f}")


def _residual_levels(field, dts, n_paths, xs, eps_fields=None):
    theta = tr.TestFunction(0.0, 0.5)
    n_fine = int(round(1.0 / min(dts)))
    res = np.zeros((len(dts), n_paths))
    for i in range(n_paths):
        fine = sf.sample_wiener(SEED, 100 + i, sf.uniform_times(1.0, n_fine))
        for j, dt in enumerate(dts):
            f = field if eps_fields is None else eps_fields[j]
            p = fine.coarsen(int(round(dt * n_fine)))
            sol = tr.solve_stochastic(tr.tanh_datum(), f, 1.0, p, xs)
            res[j, i] = tr.weak_residual(sol, theta, f, 1.0).max_abs
    return res


def o_weak_residual_rate():
    dts = [1e-2, 5e-3, 2.5e-3]
    res = _residual_levels(make_zero_drift(1), dts, 32, np.linspace(-0.6, 0.6, 121))
    lx = np.log(dts)
    slope = np.polyfit(lx, np.log(res.mean(axis=1)), 1)[0]
    rng = np.random.default_rng(SEED)
    boot = [np.polyfit(lx, np.log(res[:, rng.integers(0, res.shape[1], res.shape[1])].mean(axis=1)), 1)[0]
            for _ in range(400)]
    se = float(np.std(boot))
    ok = slope >= 0.5 - 2 * se
    return _res("weak residual rate, zero drift", slope, 0.5, ok,
                f"refinement study over 32 paths; bootstrap s.e. {se:.3f}, pass if slope >= 1/2 - 2 s.e.")


def o_weak_residual_joint():
    dts = [1e-2, 5e-3, 2.5e-3]
    fields = [_msqrt(1, e) for e in (0.1, 0.05, 0.025)]
    res = _residual_levels(None, dts, 8, np.linspace(-0.6, 0.6, 241), fields)
    m = res.mean(axis=1)
    ok = bool(np.all(np.diff(m) < 0))
    return _res("weak residual, joint (dt, eps) refinement", m[-1] / m[0], 1.0, ok,
                "two-parameter refinement study over 8 paths")


def o_weakstar_bound():
    b = _msqrt(-1, 0.05)
    path = sf.sample_wiener(SEED, 5, sf.uniform_times(1.0, 1000))
    ens = sf.build_ensemble(b, 1.0, np.linspace(-6, 6, 4001), path, jacobian=True)
    ns = [1, 2, 4, 8]
    rep = tr.stability_weakstar([lambda x, n=n: np.tanh(x) + np.sin(x) / n for n in ns], np.tanh, ens,
                                tr.TestFunction(0.0, 0.5), 2.0, labels=ns)
    worst = float(np.max(rep.a / rep.bound()))
    return _res("weak* direct bound a_n <= |v_n - v| |f|_1 J-factor", worst, 1.0, worst <= 1.0 + 1e-9,
                "direct bound on computed quantities")


def _energy_residual(field, u0, dx, dt, fan_value=0.0, every=0.05):
    xs = np.arange(-1.0, 1.0 + dx / 2, dx)
    s = tr.solve_deterministic(u0, field, xs, 1.0, dt, np.round(np.arange(0, 1.0 + 1e-12, every), 12), fan_value)
    return tr.energy_identity_check(s, field, (-0.8, 0.8)).residual


def o_energy_linear():
    f = make_linear_drift(0.7)
    # narrow enough that u vanishes at the window edge up to T = 1
    bump = tr.InitialDatum(lambda x: np.exp(-80 * np.asarray(x) ** 2), None, "C1", 1.0, "bump")
    r1 = _energy_residual(f, bump, 1 / 128, 2e-3, every=0.02)
    r2 = _energy_residual(f, bump, 1 / 256, 1e-3, every=0.01)
    return _res("energy identity, linear drift", r2, r1, r2 < r1, "closed-form characteristics, refinement")


def o_energy_fan():
    f = make_sqrt_drift(1)
    u0 = tr.tanh_datum()
    r0 = _energy_residual(f, u0, 1 / 256, 1e-3, 0.0)
    r1 = _energy_residual(f, u0, 1 / 256, 1e-3, 1.0)
    d = abs(r1 - r0)
    return _res("energy identity residual depends on the fan fill", d, 1e-3, d > 1e-3,
                "direct computation with C = 0 and C = 1")


# ---------------------------------------------------------------------------
# analysis


def o_seminorm_linear():
    rep = an.fractional_sobolev_seminorm(lambda x: x[:, 0], 0.5, 1.0, 1.0, 1, n=128, levels=2)
    exact = 16.0 / 3.0 * np.sqrt(2.0)
    rel = abs(rep.integral - exact) / exact
    return _res("Gagliardo seminorm of f(x) = x", rel, 1e-8, rel <= 1e-8, "analytic double integral (16/3) sqrt 2")


def o_seminorm_indicator():
    rep = an.fractional_sobolev_seminorm(lambda x: ((x[:, 0] >= 0) & (x[:, 0] < 1)).astype(float), 0.5, 2.0, 1.0,
                                         1, n=512, levels=4)
    return _res("indicator with theta p = 1 flagged divergent", rep.trace[-1], rep.trace[0], rep.divergent,
                "refinement study shows unbounded growth")


def o_commutator_zero():
    k = MollifierKernel(0.1)
    x = np.linspace(-1, 1, 41)
    R = an.commutator(lambda y: np.full(np.shape(y), 2.0), lambda y: np.full(np.shape(y), 1.5), k, x)
    m = float(np.max(np.abs(R)))
    return _res("commutator with constant g and divergence-free v", m, 1e-12, m <= 1e-12,
                "odd moments of the symmetric kernel vanish")


def o_commutator_bumps():
    g = lambda y: np.exp(-np.asarray(y) ** 2)
    v = lambda y: np.exp(-2 * (np.asarray(y) - 0.3) ** 2)
    vals = [abs(an.commutator(g, v, MollifierKernel(e), np.array([0.0]))[0]) for e in (0.2, 0.1, 0.05, 0.025)]
    ok = bool(np.all(np.diff(vals) < 0))
    return _res("|R_eps(0)| decreasing on smooth bumps", vals[-1] / vals[0], 1.0, ok, "quadrature refinement study")


def o_pairings():
    eps = [0.2, 0.1, 0.05, 0.025]
    rho = lambda y: np.where(np.abs(y) < 1, np.exp(-1 / np.maximum(1 - np.asarray(y) ** 2, 1e-300)), 0.0)
    smooth = an.commutator_pairing(np.cos, lambda y: np.sin(2 * y) + 0.5 * y, rho, eps, 1.0)
    sq = an.commutator_pairing(np.cos, lambda y: 2 * np.sign(y) * np.sqrt(np.abs(y)), rho, eps, 2.0)
    ratio = abs(smooth.pairing[-1] / smooth.pairing[0])
    ok = ratio < 0.5 and smooth.stable and sq.stable and np.all(np.isfinite(sq.pairing))
    return _res("commutator pairings: smooth vanishing, sqrt bounded", ratio, 0.5, ok,
                "ladder study with fitted constant stability")


def o_probe_2d():
    base = make_sqrt2d_drift(-1)
    eps = [0.2, 0.1, 0.05]
    fields = [mollify_on_grid(base, e, -6.0, 6.0, min(0.01, e / 5)) for e in eps]
    path = sf.sample_wiener(SEED, 6, sf.uniform_times(1.0, 200), 2)
    rep = an.jacobian_sobolev_probe(fields, eps, 1.0, 0.5, 1.5, 1.0, path, n=32)
    grid = pb.BoxGrid.from_spacing(-3.0, 3.0, 0.05, 2)
    w = [pb.sobolev_norms(pb.solve_F_eps(f, grid, 1.0, 0.01), 1.5)["w1p"].max() for f in fields]
    fv = max(w) / min(w)
    ok = rep.verdict == "bounded" and fv < 2.0
    return _res("2-d Jacobian probe and F^eps ladder", rep.variation, 2.0, ok,
                f"ladder study; F^eps W^(1,p) variation {fv:.3f}")


# ---------------------------------------------------------------------------
# parabolic


def o_U_constant():
    c = 0.8
    grid = pb.BoxGrid.from_spacing(-2.0, 2.0, 0.02)
    U = pb.solve_backward_U(make_constant_drift(c), 0.0, 1.0, grid, 1.0, 0.01)
    exact = c * (1.0 - U.times)[:, None]
    e = float(np.max(np.abs(U.values[..., 0] - exact)))
    g = float(np.max(np.abs(U.gradient())))
    return _res("U for constant drift, lambda = 0", max(e, g), 1e-10, e <= 1e-10 and g <= 1e-12,
                "closed form U = c (T - t), grad U = 0")


def o_zvonkin_constant():
    c = 0.8
    grid = pb.BoxGrid.from_spacing(-6.0, 6.0, 0.02)
    f = make_constant_drift(c)
    worst, okk = 0.0, True
    for n in (100, 200):
        U = pb.solve_backward_U(f, 0.0, 1.0, grid, 1.0, 1.0 / 200)
        paths = [sf.sample_wiener(SEED, 200 + i, sf.uniform_times(1.0, n)) for i in range(20)]
        z = pb.zvonkin_residual(f, 0.0, 1.0, U, paths, 0.1)
        worst = max(worst, z.max)
        okk &= z.max <= 1.0 / n
    return _res("Zvonkin residual for constant drift", worst, 1e-2, okk, "closed-form U; residual within dt")


def o_zvonkin_decrease():
    b = _msqrt(1, 0.05)
    grid = pb.BoxGrid.from_spacing(-8.0, 8.0, 0.005)
    U = pb.solve_backward_U(b, 10.0, 1.0, grid, 1.0, 1.0 / 1600)
    fine = [sf.sample_wiener(SEED, 300 + i, sf.uniform_times(1.0, 200)) for i in range(200)]
    m1 = pb.zvonkin_residual(b, 10.0, 1.0, U, [p.coarsen(2) for p in fine], 0.3).mean
    m2 = pb.zvonkin_residual(b, 10.0, 1.0, U, fine, 0.3).mean
    return _res("Zvonkin mean residual decreases under dt halving", m2 / m1, 1.0, m2 < m1,
                "refinement study over 200 paths")


ORACLES: list[Callable[[], OracleResult]] = [
    o_sqrt_value, o_sqrt_div, o_mollify_rate, o_holder_sqrt,
    o_wiener_moments, o_linear_forward, o_sqrt_branch, o_roundtrip, o_linear_backward, o_inversion_methods,
    o_jacobian_linear, o_jacobian_methods, o_composition, o_stability,
    o_transport_selfconvergence, o_transport_linear, o_weak_residual_rate, o_weak_residual_joint,
    o_weakstar_bound, o_energy_linear, o_energy_fan,
    o_seminorm_linear, o_seminorm_indicator, o_commutator_zero, o_commutator_bumps, o_pairings, o_probe_2d,
    o_U_constant, o_zvonkin_constant, o_zvonkin_decrease,
]


def run_oracles(names=None) -> list:
    out = []
    for fn in ORACLES:
        if names is None or fn.__name__ in names:
            out.append(fn())
    return out
