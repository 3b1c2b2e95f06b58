import numpy as np
import pytest
from hypothesis import given, strategies as st

from noisereg import stochastic_flow as sf
from noisereg.fields import make_linear_drift, make_sqrt_drift, make_zero_drift, mollify, tabulate

SEED = 77


@pytest.fixture(scope="module")
def msqrt():
    return tabulate(mollify(make_sqrt_drift(1), 0.05), -10, 10)


def test_wiener_is_pure_function_of_seed_and_index():
    t = sf.uniform_times(1.0, 50)
    a, b = sf.sample_wiener(SEED, 3, t), sf.sample_wiener(SEED, 3, t)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, sf.sample_wiener(SEED, 4, t).increments)
    assert a.W[0, 0] == 0.0 and a.W.shape == (51, 1)


def test_wiener_moments_over_many_paths():
    dW = sf.wiener_batch(SEED, range(100000), np.array([0.0, 1.0]), 2)[:, 0, :]
    assert np.all(np.abs(dW.mean(axis=0)) < 0.02)
    assert np.all(np.abs(dW.var(axis=0) - 1) < 0.02)
    assert abs(np.corrcoef(dW.T)[0, 1]) < 0.02


def test_coarsen_sums_increments():
    p = sf.sample_wiener(SEED, 0, sf.uniform_times(1.0, 8))
    c = p.coarsen(4)
    assert c.n_steps == 2
    assert np.allclose(c.W[-1], p.W[-1])
    with pytest.raises(ValueError):
        p.coarsen(3)


def test_node_index_rejects_off_grid():
    t = sf.uniform_times(1.0, 10)
    assert sf.node_index(t, 0.3) == 3
    with pytest.raises(ValueError):
        sf.node_index(t, 0.35)


def test_linear_forward_closed_form():
    a = 0.7
    t = sf.uniform_times(1.0, 1000)
    traj, esc = sf.euler_forward(make_linear_drift(a), 0.0, [[1.0]], t, np.zeros((1000, 1)))
    assert esc[0] == -1
    assert abs(traj[-1, 0, 0] - np.exp(a)) < 1e-3


def test_sqrt_classical_branch():
    e0 = 0.01
    t = sf.uniform_times(1.0, 1000)
    end, _ = sf.euler_forward(make_sqrt_drift(1), 0.0, [[e0]], t, np.zeros((1000, 1)), store=False)
    assert end[0, 0] == pytest.approx((np.sqrt(e0) + 1) ** 2, rel=1e-2)


def test_sqrt_from_zero_stays_at_zero_without_noise():
    # X = 0 is the Euler selection among the infinitely many solutions
    t = sf.uniform_times(1.0, 1000)
    traj, _ = sf.euler_forward(make_sqrt_drift(1), 0.0, [[0.0]], t, np.zeros((1000, 1)))
    assert np.all(traj == 0.0)
    assert sf.integral_equation_residual(make_sqrt_drift(1), t**2, t, 0.0) < 1e-3
    assert sf.integral_equation_residual(make_sqrt_drift(1), np.zeros_like(t), t, 0.0) < 1e-3


def test_meeting_time():
    assert sf.meeting_time(make_sqrt_drift(-1), 0.25, -0.25, 1e-3) == pytest.approx(0.5, abs=0.02)


def test_linear_backward_closed_form():
    t = sf.uniform_times(1.0, 1000)
    xs = np.linspace(-1, 1, 5)
    z, _ = sf.euler_backward(make_linear_drift(0.7), 0.0, xs, t, np.zeros((1000, 1)), 1000, store=False)
    assert np.allclose(z[:, 0], xs * np.exp(-0.7), atol=1e-3)


def test_zero_drift_flow_is_translation():
    p = sf.sample_wiener(SEED, 1, sf.uniform_times(1.0, 100))
    ens = sf.build_ensemble(make_zero_drift(1), 0.5, np.linspace(-1, 1, 5), p)
    assert np.allclose(ens.image(1.0)[:, 0], np.linspace(-1, 1, 5) + 0.5 * p.W[-1, 0])


def test_round_trip_and_inversion_methods():
    b = make_sqrt_drift(1)
    p = sf.sample_wiener(SEED, 0, sf.uniform_times(1.0, 1000))
    ens = sf.build_ensemble(b, 1.0, np.linspace(-3, 3, 3001), p)
    y = ens.points[1000:2001, 0]
    back = sf.invert_flow(ens, 1.0, ens.image(1.0)[1000:2001], "backward").points[:, 0]
    step = float(np.max(np.abs(back - y)))
    assert step <= np.sqrt(1e-3)
    img = ens.image(1.0)[:, 0]
    q = np.linspace(np.quantile(img, 0.25), np.quantile(img, 0.75), 51)
    zb = sf.invert_flow(ens, 1.0, q, "backward")
    zi = sf.invert_flow(ens, 1.0, q, "interpolate")
    assert not zb.extrapolated.any()
    assert np.max(np.abs(zb.points - zi.points)) <= 3 * step


def test_inversion_flags_outside_image():
    p = sf.sample_wiener(SEED, 0, sf.uniform_times(1.0, 100))
    ens = sf.build_ensemble(make_zero_drift(1), 1.0, np.linspace(-1, 1, 21), p)
    inv = sf.invert_flow(ens, 1.0, [[50.0]], "interpolate")
    assert inv.extrapolated[0]


def test_order_and_injectivity(msqrt):
    p = sf.sample_wiener(SEED, 2, sf.uniform_times(1.0, 1000))
    ens = sf.build_ensemble(msqrt, 1.0, np.linspace(-1, 1, 101), p)
    assert ens.order_preserved()
    assert ens.injective()


def test_jacobian_linear_and_cross_check(msqrt):
    p = sf.sample_wiener(SEED, 3, sf.uniform_times(1.0, 1000))
    ens = sf.build_ensemble(make_linear_drift(0.7), 1.0, np.linspace(-1, 1, 5), p, jacobian=True)
    assert np.allclose(sf.jacobian_fd(ens, 1.0).det, np.exp(0.7), atol=1e-3)
    assert np.allclose(ens.jacobian[-1], np.exp(0.7), rtol=1e-12)
    ens2 = sf.build_ensemble(msqrt, 1.0, np.linspace(-1, 1, 41), p, jacobian=True)
    fd = sf.jacobian_fd(ens2, 1.0)
    assert np.max(np.abs(fd.det - ens2.jacobian[-1]) / ens2.jacobian[-1]) <= 0.05


def test_jacobian_refuses_infinite_divergence():
    p = sf.sample_wiener(SEED, 3, sf.uniform_times(1.0, 10))
    with pytest.raises(ValueError):
        sf.build_ensemble(make_sqrt_drift(1), 1.0, [[0.0]], p, jacobian=True)


def test_composition(msqrt):
    p = sf.sample_wiener(SEED, 4, sf.uniform_times(1.0, 1000))
    assert sf.flow_composition_check(msqrt, 1.0, p, 0.4, 1.0, np.linspace(-1, 1, 201)) < 1e-2


def test_escape_is_flagged():
    p = sf.sample_wiener(SEED, 0, sf.uniform_times(1.0, 100))
    s = sf.integrate_forward(make_linear_drift(10.0), 0.0, 0.0, [[1.0]], p, box=5.0)
    assert s.escaped and s.escape_time is not None


def test_stability_experiment_small_and_worker_invariant(msqrt):
    fields = [tabulate(mollify(make_sqrt_drift(1), e), -10, 10) for e in (0.2, 0.1, 0.05)]
    t = sf.uniform_times(1.0, 100)
    a = sf.stability_experiment(fields, None, 1.0, 2.0, np.linspace(-1, 1, 5), 100, SEED, t, batch=30)
    b = sf.stability_experiment(fields, None, 1.0, 2.0, np.linspace(-1, 1, 5), 100, SEED, t, batch=30, workers=3)
    assert np.array_equal(a.displacement, b.displacement)
    assert np.array_equal(a.jacobian_moment, b.jacobian_moment)
    assert a.displacement[-1] == 0.0
    assert a.displacement[0] > a.displacement[1]
    with pytest.raises(ValueError):
        sf.stability_experiment(fields, None, 1.0, 2.0, [0.0], 10, SEED, t)


def test_ensemble_csv(tmp_path, msqrt):
    p = sf.sample_wiener(SEED, 0, sf.uniform_times(1.0, 10))
    ens = sf.build_ensemble(msqrt, 1.0, np.linspace(-1, 1, 3), p, jacobian=True)
    path = ens.to_csv(tmp_path / "ens.csv")
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "path_index,t,x0_0,X_0,J"
    assert len(lines) == 1 + 11 * 3


@given(st.integers(0, 2**63), st.integers(0, 1000))
def test_seeding_deterministic(seed, index):
    t = np.array([0.0, 0.5, 1.0])
    assert np.array_equal(sf.sample_wiener(seed, index, t).increments, sf.sample_wiener(seed, index, t).increments)


@given(st.floats(-2, 2), st.floats(0.01, 1.0))
def test_flow_order_preserving_pairs(x, gap):
    b = make_sqrt_drift(1)
    p = sf.sample_wiener(SEED, 9, sf.uniform_times(1.0, 200))
    end, _ = sf.euler_forward(b, 1.0, [[x], [x + gap]], p.times, p.increments, store=False)
    assert end[0, 0] <= end[1, 0]


@given(st.floats(-2, 2))
def test_forward_backward_inverse_zero_drift(x):
    p = sf.sample_wiener(SEED, 5, sf.uniform_times(1.0, 50))
    end, _ = sf.euler_forward(make_zero_drift(1), 1.0, [[x]], p.times, p.increments, store=False)
    z, _ = sf.euler_backward(make_zero_drift(1), 1.0, end, p.times, p.increments, 50, store=False)
    assert z[0, 0] == pytest.approx(x, abs=1e-12)
