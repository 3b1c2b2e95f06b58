import numpy as np
import pytest
from hypothesis import given, strategies as st

from noisereg.fields import (MollifierKernel, divergence, estimate_holder_seminorm, field_from_spec,
                             make_constant_drift, make_linear_drift, make_sqrt2d_drift, make_sqrt_drift,
                             make_zero_drift, mollify, mollify_on_grid, plateau_mass, tabulate)


def test_sqrt_drift_values():
    b = make_sqrt_drift(-1)
    assert b(0.0, np.array([[0.25]]))[0, 0] == pytest.approx(-1.0, abs=1e-15)
    assert make_sqrt_drift(1)(0.0, np.array([[0.0]]))[0, 0] == 0.0
    assert make_sqrt_drift(1).div(0.0, np.array([[0.25]]))[0] == pytest.approx(2.0, abs=1e-12)


def test_sqrt_divergence_infinite_at_origin():
    assert not np.isfinite(make_sqrt_drift(1).div(0.0, np.array([[0.0]]))[0])


def test_kernel_unit_mass_and_support():
    for d in (1, 2):
        k = MollifierKernel(0.1, d)
        assert k.mass() == pytest.approx(1.0, rel=1e-8)
        z, wk, wg = k.quadrature
        assert wk.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.all(np.linalg.norm(z, axis=1) <= 0.2 + 1e-12)
    assert plateau_mass(1) > 2.0  # the plateau alone has length 2


def test_kernel_rejects_bad_scale():
    with pytest.raises(ValueError):
        MollifierKernel(0.0)


def test_mollify_reproduces_constants_and_odd_symmetry():
    c = mollify(make_constant_drift(1.7), 0.1)
    assert np.allclose(c(0.0, np.linspace(-1, 1, 11)[:, None]), 1.7, atol=1e-14)
    b = mollify(make_sqrt_drift(1), 0.05)
    x = np.linspace(0.01, 1, 17)[:, None]
    assert np.allclose(b(0.0, x), -b(0.0, -x), atol=1e-14)
    assert abs(b(0.0, np.zeros((1, 1)))[0, 0]) < 1e-14


def test_mollify_linear_is_exact():
    b = mollify(make_linear_drift(0.7), 0.1)
    x = np.linspace(-1, 1, 9)[:, None]
    assert np.allclose(b(0.0, x)[:, 0], 0.7 * x[:, 0], atol=1e-13)
    assert np.allclose(b.div(0.0, x), 0.7, atol=1e-10)


def test_mollify_padding_violation():
    with pytest.raises(ValueError, match="padding"):
        mollify(make_sqrt_drift(1), 0.1, domain=(-1.0, 1.0))(0.0, np.array([[0.95]]))


def test_mollify_sup_error_rate_against_dense_oracle():
    # frozen from a dense Riemann-sum convolution (uniform z grid, 4000 cells per eps)
    xs = np.linspace(-1, 1, 801)
    errs = []
    for e in (0.1, 0.05, 0.025):
        b = mollify(make_sqrt_drift(1), e)(0.0, xs[:, None])[:, 0]
        errs.append(np.max(np.abs(b - 2 * np.sign(xs) * np.sqrt(np.abs(xs)))))
    rate = np.polyfit(np.log([0.1, 0.05, 0.025]), np.log(errs), 1)[0]
    assert rate == pytest.approx(0.5, abs=0.05)


def test_mollified_divergence_finite():
    b = mollify(make_sqrt_drift(1), 0.05)
    d = b.div(0.0, np.array([[0.0], [0.5]]))
    assert np.all(np.isfinite(d))
    # away from the kink: 1/sqrt(x) up to the O(eps^2) second-moment bias
    assert d[1] == pytest.approx(1 / np.sqrt(0.5), rel=5e-3)


def test_tabulate_matches_source():
    b = mollify(make_sqrt_drift(1), 0.05)
    tb = tabulate(b, -2, 2, 40001)
    x = np.linspace(-1.5, 1.5, 31)[:, None]
    assert np.max(np.abs(tb(0.0, x) - b(0.0, x))) < 1e-6


def test_mollify_on_grid_agrees_with_direct():
    base = make_sqrt2d_drift(-1)
    direct = mollify(base, 0.1)
    grid = mollify_on_grid(base, 0.1, -2.0, 2.0, 0.02)
    pts = np.array([[0.1, -0.3], [0.5, 0.5], [-0.7, 0.2]])
    assert np.max(np.abs(grid(0.0, pts) - direct(0.0, pts))) < 2e-3


def test_holder_seminorm_of_sqrt_is_one():
    rep = estimate_holder_seminorm(lambda t, x: np.sqrt(np.abs(x)), 0.5, np.linspace(-1, 1, 401))
    assert rep.seminorm == pytest.approx(1.0, abs=1e-12)


def test_divergence_fallback_finite_differences():
    f = make_linear_drift(np.array([[1.0, 2.0], [0.0, -3.0]]))
    pts = np.random.default_rng(0).uniform(-1, 1, (5, 2))
    assert np.allclose(divergence(f, 0.0, pts), -2.0, atol=1e-6)


def test_field_from_spec_strict():
    assert field_from_spec({"kind": "zero", "d": 2}).dim == 2
    with pytest.raises(ValueError):
        field_from_spec({"kind": "sqrt", "sgn": 1})
    with pytest.raises(ValueError):
        field_from_spec({"kind": "nope"})


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_sqrt_drift_holder_half(x, y):
    b = make_sqrt_drift(1)
    bx, by = b(0.0, np.array([[x], [y]]))[:, 0]
    assert abs(bx - by) <= 2 * np.sqrt(2) * np.sqrt(abs(x - y)) + 1e-12


@given(st.floats(0.02, 0.3), st.floats(-2, 2))
def test_mollified_sqrt_bounded_by_local_sup(eps, x):
    v = mollify(make_sqrt_drift(1), eps)(0.0, np.array([[x]]))[0, 0]
    lo, hi = (2 * np.sign(s) * np.sqrt(abs(s)) for s in (x - 2 * eps, x + 2 * eps))
    assert lo - 1e-12 <= v <= hi + 1e-12


@given(st.floats(-5, 5))
def test_zero_drift_is_zero(x):
    assert make_zero_drift(1)(0.0, np.array([[x]]))[0, 0] == 0.0
