import numpy as np
import pytest
from hypothesis import given, strategies as st

from noisereg import stochastic_flow as sf
from noisereg import transport as tr
from noisereg.fields import make_linear_drift, make_sqrt_drift, make_zero_drift, mollify, tabulate

SEED = 11
OUT = np.round(np.arange(0, 1.0 + 1e-12, 0.01), 12)


@pytest.fixture(scope="module")
def path():
    return sf.sample_wiener(SEED, 0, sf.uniform_times(1.0, 1000))


def grid(h, lo=-1.0, hi=1.0):
    return np.linspace(lo, hi, int(round((hi - lo) / h)) + 1)


def test_zero_drift_is_shifted_datum(path):
    xs = grid(0.01)
    sol = tr.solve_stochastic(tr.tanh_datum(), make_zero_drift(1), 0.7, path, xs)
    W = path.W[:, 0]
    assert np.allclose(sol.values, np.tanh(xs[None, :] - 0.7 * W[:, None]), atol=1e-14)


def test_constant_datum_stays_constant(path):
    sol = tr.solve_stochastic(tr.constant_datum(3.0), make_sqrt_drift(-1), 1.0, path, grid(0.05), OUT)
    assert np.all(sol.values == 3.0)
    g = tr.gradient_diagnostic([tr.solve_stochastic(tr.constant_datum(3.0), make_sqrt_drift(-1), 1.0, path,
                                                     grid(h), OUT) for h in (0.1, 0.05)])
    assert np.all(g.sup_grad == 0.0) and g.verdict == "bounded"


def test_stochastic_requires_noise(path):
    with pytest.raises(ValueError):
        tr.solve_stochastic(tr.tanh_datum(), make_zero_drift(1), 0.0, path, grid(0.1))


def test_datum_rejects_nonfinite():
    d = tr.InitialDatum(lambda x: 1.0 / np.asarray(x))
    with pytest.raises(FloatingPointError), np.errstate(divide="ignore"):
        d(np.array([0.0]))


def test_self_convergence_against_quarter_step():
    b = make_sqrt_drift(-1)
    fine = sf.sample_wiener(SEED, 1, sf.uniform_times(1.0, 4000))
    xs = grid(0.01)
    a = tr.solve_stochastic(tr.tanh_datum(), b, 1.0, fine.coarsen(4), xs, OUT)
    c = tr.solve_stochastic(tr.tanh_datum(), b, 1.0, fine, xs, OUT)
    assert np.max(np.abs(a.values - c.values)) < 5e-2


def test_linear_characteristics():
    xs = grid(0.01)
    s = tr.solve_deterministic(tr.tanh_datum(), make_linear_drift(0.7), xs, 1.0, 1e-3)
    assert np.max(np.abs(s.values[-1] - np.tanh(xs * np.exp(-0.7)))) < 1e-3


def test_fan_fill_differs_only_inside_fan():
    xs = grid(1 / 256)
    u0 = tr.tanh_datum()
    a = tr.solve_deterministic(u0, make_sqrt_drift(1), xs, 1.0, 1e-3, OUT, fan_value=0.0)
    b = tr.solve_deterministic(u0, make_sqrt_drift(1), xs, 1.0, 1e-3, OUT, fan_value=1.0)
    diff = a.values != b.values
    assert np.array_equal(diff, a.fan)
    t = a.times[:, None]
    inside = np.abs(xs)[None, :] < t**2 - 0.02
    outside = np.abs(xs)[None, :] > t**2 + 0.02
    assert np.all(a.fan[inside]) and not np.any(a.fan[outside])


def test_coalescence_jump_after_meeting_time():
    xs = grid(1 / 256)
    s = tr.solve_deterministic(tr.smooth_step_datum(0.25, 0.2), make_sqrt_drift(-1), xs, 1.0, 1e-3, OUT)
    i0 = np.argmin(np.abs(xs))
    jump = np.abs(s.values[:, i0 + 1] - s.values[:, i0 - 1])
    assert np.all(jump[s.times < 0.45] < 1e-12)
    assert np.all(jump[s.times > 0.8] > 0.5)


def test_dichotomy():
    b = make_sqrt_drift(-1)
    p = sf.sample_wiener(1234, 0, sf.uniform_times(1.0, 1000))
    levels = (1 / 64, 1 / 128, 1 / 256)
    det = tr.gradient_diagnostic([tr.solve_deterministic(tr.tanh_datum(), b, grid(h), 1.0, 1e-3, OUT)
                                  for h in levels])
    sto = tr.gradient_diagnostic([tr.solve_stochastic(tr.tanh_datum(), b, 1.0, p, grid(h), OUT) for h in levels])
    assert det.verdict == "blow-up"
    assert sto.verdict == "bounded"
    step = tr.gradient_diagnostic([tr.solve_deterministic(tr.smooth_step_datum(0.25, 0.2), b, grid(h), 1.0, 1e-3,
                                                          OUT) for h in levels])
    assert step.blowup_time == pytest.approx(0.5, rel=0.1)


def test_gradient_diagnostic_needs_two_levels(path):
    s = tr.solve_stochastic(tr.tanh_datum(), make_zero_drift(1), 1.0, path, grid(0.1), OUT)
    with pytest.raises(ValueError):
        tr.gradient_diagnostic([s])


def test_weak_residual_constant_datum_exact(path):
    b = tabulate(mollify(make_sqrt_drift(1), 0.05), -10, 10)
    sol = tr.solve_stochastic(tr.constant_datum(2.0), b, 1.0, path, grid(0.005, -0.6, 0.6))
    assert tr.weak_residual(sol, tr.TestFunction(0.0, 0.5), b, 1.0).max_abs < 1e-10


def test_weak_residual_zero_drift_decreases():
    theta = tr.TestFunction(0.0, 0.5)
    xs = grid(0.01, -0.6, 0.6)
    res = np.zeros(3)
    for i in range(8):
        fine = sf.sample_wiener(SEED, 100 + i, sf.uniform_times(1.0, 400))
        for j, m in enumerate((4, 2, 1)):
            sol = tr.solve_stochastic(tr.tanh_datum(), make_zero_drift(1), 1.0, fine.coarsen(m), xs)
            res[j] += tr.weak_residual(sol, theta, make_zero_drift(1), 1.0).max_abs / 8
    assert res[0] > res[1] > res[2]


def test_weak_residual_support_check(path):
    sol = tr.solve_stochastic(tr.tanh_datum(), make_zero_drift(1), 1.0, path, grid(0.01, -0.3, 0.3))
    with pytest.raises(ValueError):
        tr.weak_residual(sol, tr.TestFunction(0.0, 0.5), make_zero_drift(1), 1.0)


@pytest.fixture(scope="module")
def weakstar_ens():
    b = tabulate(mollify(make_sqrt_drift(-1), 0.05), -10, 10)
    p = sf.sample_wiener(3, 0, sf.uniform_times(1.0, 1000))
    return sf.build_ensemble(b, 1.0, np.linspace(-6, 6, 4001), p, jacobian=True)


def test_weakstar_identical_sequence_is_zero(weakstar_ens):
    f = tr.TestFunction(0.0, 0.5)
    rep = tr.stability_weakstar([np.sin, np.sin], np.sin, weakstar_ens, f, 1.0)
    assert np.all(rep.a == 0.0)


def test_weakstar_oscillation_decay(weakstar_ens):
    ns = [1, 2, 4, 8, 16, 32]
    rep = tr.stability_weakstar([lambda x, n=n: np.sin(n * x) for n in ns], lambda x: 0 * x, weakstar_ens,
                                tr.TestFunction(0.0, 0.5), 1.0, labels=ns)
    assert np.all(np.diff(rep.a) < 0)
    assert rep.a[-1] < 0.25 * rep.a[0]
    assert np.all(rep.a <= rep.bound() * (1 + 1e-9))


def test_weakstar_refusals(weakstar_ens):
    f = tr.TestFunction(0.0, 0.5)
    with pytest.raises(ValueError):
        tr.stability_weakstar([np.sin], np.sin, weakstar_ens, f, np.inf)
    with pytest.raises(ValueError):
        tr.stability_weakstar([lambda x: 5 * np.sin(x)], np.sin, weakstar_ens, f, 1.0)
    with pytest.raises(ValueError):
        tr.stability_weakstar([np.sin], np.sin, weakstar_ens, tr.TestFunction(5.8, 0.5), 1.0)


def test_energy_identity_divergence_free_and_fan():
    xs = grid(1 / 256)
    bump = tr.InitialDatum(lambda x: np.exp(-80 * np.asarray(x) ** 2))
    s = tr.solve_deterministic(bump, make_zero_drift(1), xs, 1.0, 1e-3, OUT)
    assert tr.energy_identity_check(s, make_zero_drift(1), (-0.8, 0.8)).residual < 1e-14
    r = [tr.energy_identity_check(tr.solve_deterministic(tr.tanh_datum(), make_sqrt_drift(1), xs, 1.0, 1e-3,
                                                         OUT[::5], c), make_sqrt_drift(1), (-0.8, 0.8)).residual
         for c in (0.0, 1.0)]
    assert abs(r[0] - r[1]) > 1e-3


def test_transport_relation(path):
    b = tabulate(mollify(make_sqrt_drift(1), 0.05), -10, 10)
    ens = sf.build_ensemble(b, 1.0, grid(0.01), path)
    sol = tr.solve_stochastic(tr.tanh_datum(), b, 1.0, path, grid(0.01, -6, 6), OUT[::10])
    assert tr.transport_relation_error(sol, ens, tr.tanh_datum()) < 5e-2


def test_solution_csv(tmp_path, path):
    sol = tr.solve_stochastic(tr.tanh_datum(), make_zero_drift(1), 1.0, path, grid(0.5), [0.0, 1.0])
    lines = open(sol.to_csv(tmp_path / "u.csv"), encoding="utf-8").read().splitlines()
    assert lines[0] == "t,x,u" and len(lines) == 1 + 2 * 5


@given(st.floats(-0.9, 0.9), st.floats(0.05, 0.9))
def test_test_function_support(c, r):
    th = tr.TestFunction(c, r)
    x = np.array([c - r - 1e-9, c, c + r + 1e-9])
    v = th(x)
    assert v[0] == 0.0 and v[2] == 0.0 and v[1] > 0


@given(st.floats(-3, 3), st.floats(0.1, 2.0))
def test_stochastic_solution_bounded_by_datum(c, sigma):
    p = sf.sample_wiener(SEED, 7, sf.uniform_times(1.0, 50))
    sol = tr.solve_stochastic(tr.tanh_datum(), make_sqrt_drift(1), sigma, p, np.linspace(c - 0.5, c + 0.5, 11))
    assert np.all(np.abs(sol.values) <= 1.0)
