import numpy as np
import pytest
from hypothesis import given, strategies as st

from noisereg import parabolic as pb
from noisereg import stochastic_flow as sf
from noisereg.fields import (make_constant_drift, make_linear_drift, make_sqrt_drift, make_zero_drift, mollify,
                             tabulate)


@pytest.fixture(scope="module")
def msqrt():
    return tabulate(mollify(make_sqrt_drift(1), 0.05), -10, 10)


def test_box_grid():
    g = pb.BoxGrid.from_spacing(-1.0, 1.0, 0.25, 2)
    assert g.n == 9 and g.h == pytest.approx(0.25) and g.points().shape == (81, 2)


def test_zero_drift_gives_zero():
    g = pb.BoxGrid.from_spacing(-2.0, 2.0, 0.05)
    U = pb.solve_backward_U(make_zero_drift(1), 3.0, 1.0, g, 1.0, 0.01)
    assert np.all(U.values == 0.0)


def test_constant_drift_closed_form():
    # U = c (T - t) solves dU/dt + c U_x + U_xx / 2 = -c with U(T) = 0
    c = 0.8
    g = pb.BoxGrid.from_spacing(-2.0, 2.0, 0.02)
    U = pb.solve_backward_U(make_constant_drift(c), 0.0, 1.0, g, 1.0, 0.01)
    assert np.max(np.abs(U.values[..., 0] - c * (1 - U.times)[:, None])) < 1e-10
    assert np.max(np.abs(U.gradient())) < 1e-12
    rep = pb.gradient_bound_check(make_constant_drift(c), 1.0, g, (0.0,), 1.0, 0.01, (-1.0, 1.0))
    assert rep.passed


def test_cfl_refusal():
    g = pb.BoxGrid.from_spacing(-1.0, 1.0, 0.01)
    with pytest.raises(pb.CFLViolation, match="ratio"):
        pb.solve_backward_U(make_constant_drift(5.0), 0.0, 1.0, g, 1.0, 0.01)


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        pb.solve_backward_U(make_zero_drift(1), -1.0, 1.0, pb.BoxGrid.from_spacing(-1, 1, 0.1))


def test_gradient_bound_scan(msqrt):
    g = pb.BoxGrid.from_spacing(-3.0, 3.0, 0.01)
    rep = pb.gradient_bound_check(msqrt, 1.0, g, (1.0, 10.0, 100.0), 1.0, 2e-3, (-2.0, 2.0))
    assert np.all(np.diff(rep.sup_grad) < 0)
    assert rep.threshold is not None and rep.threshold <= 100
    z = pb.gradient_bound_check(make_zero_drift(1), 1.0, g, (1.0, 10.0, 100.0), 1.0, 2e-3)
    assert z.sup_grad.max() < 1e-12


def test_maximum_principle(msqrt):
    # |U| <= ||b||_0 (1 - exp(-lam T)) / lam
    g = pb.BoxGrid.from_spacing(-3.0, 3.0, 0.01)
    U = pb.solve_backward_U(msqrt, 1.0, 1.0, g, 1.0, 2e-3)
    assert np.max(np.abs(U.values)) <= np.max(np.abs(msqrt(0.0, g.points()))) * (1 - np.exp(-1.0)) + 1e-12


def test_F_eps_vanishes_for_divergence_free():
    g = pb.BoxGrid.from_spacing(-1.0, 1.0, 0.1, 2)
    F = pb.solve_F_eps(make_constant_drift([0.3, -0.2]), g, 1.0, 0.01)
    assert np.max(np.abs(F.values)) == 0.0
    F = pb.solve_F_eps(make_zero_drift(2), g, 1.0, 0.01)
    assert np.max(np.abs(F.values)) == 0.0


def test_F_eps_refuses_raw_sqrt():
    with pytest.raises(ValueError):
        pb.solve_F_eps(make_sqrt_drift(1), pb.BoxGrid.from_spacing(-1.0, 1.0, 0.1), 1.0, 0.01)


def test_sobolev_norms_shape(msqrt):
    g = pb.BoxGrid.from_spacing(-2.0, 2.0, 0.02)
    F = pb.solve_F_eps(msqrt, g, 1.0, 0.002)
    nr = pb.sobolev_norms(F, 2.0)
    assert nr["sup"].shape == F.times.shape and np.all(nr["w1p"] >= nr["sup"] * 0)


def test_zvonkin_zero_drift_exact():
    g = pb.BoxGrid.from_spacing(-6.0, 6.0, 0.05)
    U = pb.solve_backward_U(make_zero_drift(1), 10.0, 1.0, g, 1.0, 0.01)
    paths = [sf.sample_wiener(5, i, sf.uniform_times(1.0, 100)) for i in range(10)]
    assert pb.zvonkin_residual(make_zero_drift(1), 10.0, 1.0, U, paths, 0.3).max < 1e-12


def test_zvonkin_decreases_under_halving(msqrt):
    g = pb.BoxGrid.from_spacing(-8.0, 8.0, 0.005)
    U = pb.solve_backward_U(msqrt, 10.0, 1.0, g, 1.0, 1 / 1600)
    fine = [sf.sample_wiener(1234, i, sf.uniform_times(1.0, 200)) for i in range(200)]
    a = pb.zvonkin_residual(msqrt, 10.0, 1.0, U, [p.coarsen(2) for p in fine], 0.3)
    b = pb.zvonkin_residual(msqrt, 10.0, 1.0, U, fine, 0.3)
    assert b.mean < a.mean and a.dropped == 0


def test_zvonkin_requires_matching_time_grid(msqrt):
    g = pb.BoxGrid.from_spacing(-6.0, 6.0, 0.05)
    U = pb.solve_backward_U(msqrt, 10.0, 1.0, g, 1.0, 1 / 150)
    with pytest.raises(ValueError):
        pb.zvonkin_residual(msqrt, 10.0, 1.0, U, [sf.sample_wiener(1, 0, sf.uniform_times(1.0, 100))], 0.3)


def test_solution_csv(tmp_path):
    g = pb.BoxGrid.from_spacing(-1.0, 1.0, 0.5)
    U = pb.solve_backward_U(make_constant_drift(1.0), 0.0, 1.0, g, 1.0, 0.5)
    lines = open(U.to_csv(tmp_path / "U.csv"), encoding="utf-8").read().splitlines()
    assert lines[0] == "t,x_0,U_0,grad_norm" and len(lines) == 1 + 3 * 5


@given(st.floats(-1.0, 1.0), st.floats(0.0, 5.0))
def test_constant_drift_any_lambda_spatially_constant(c, lam):
    g = pb.BoxGrid.from_spacing(-1.0, 1.0, 0.1)
    U = pb.solve_backward_U(make_constant_drift(c), lam, 1.0, g, 1.0, 0.05)
    assert np.max(np.abs(U.gradient())) < 1e-12
    # exact discrete recursion U_k = (U_{k+1} + dt c) / (1 + lam dt)
    dt, u = 0.05, 0.0
    for _ in range(20):
        u = (u + dt * c) / (1 + lam * dt)
    assert U.values[0, 0, 0] == pytest.approx(u, abs=1e-12)


@given(st.floats(0.1, 2.0))
def test_linear_drift_U_odd(a):
    g = pb.BoxGrid.from_spacing(-2.0, 2.0, 0.05)
    U = pb.solve_backward_U(make_linear_drift(a), 5.0, 1.0, g, 0.5, 0.01)
    v = U.values[0, :, 0]
    assert np.allclose(v, -v[::-1], atol=1e-12)
