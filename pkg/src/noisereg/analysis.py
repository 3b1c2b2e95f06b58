"""Fractional Sobolev seminorms, mollifier commutators and the Jacobian regularity probe.

Commutators are one-dimensional. With ``theta_eps`` the mollifier,

    R_eps[g, v](x) = int g(x') (v(x) - v(x')) . grad theta_eps(x - x') dx'
                     + (theta_eps * (g div v))(x),

which equals ``v . grad(g_eps) - (v . grad g)_eps`` and vanishes as eps -> 0 for
smooth data. Pairings ``int R_eps rho`` are evaluated in the symmetrised
double-integral form, which needs no derivative of ``rho``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import roots_jacobi

from .fields import (DriftField, MollifierKernel, _gl_panels, as_points, estimate_holder_seminorm)
from .io import write_csv
from .stochastic_flow import FlowEnsemble, WienerPath, _log_jacobian, euler_forward, node_index


# ---------------------------------------------------------------------------
# Gagliardo seminorm


@dataclass
class SobolevReport:
    theta: float
    p: float
    r: float
    value: float  # (double integral)^(1/p)
    integral: float  # the double integral itself
    n: int  # cells per axis at the finest level
    trace: np.ndarray  # integral per refinement level
    levels: np.ndarray  # cells per axis per level
    divergent: bool
    note: str = ("pairs at distinct cells use (|f_i - f_j| / |x_i - x_j|)^p times the exact cell-pair "
                 "integral of |x - y|^(p - theta p - d); the diagonal cell uses |grad f|^p, exact for linear f")


def _pair_weights_1d(s: float, kmax: int) -> np.ndarray:
    """``int_cell_0 int_cell_k |x - y|^(s-1)`` in units of ``h^(s+1)``."""
    k = np.arange(kmax + 1, dtype=float)
    G = ((k + 1) ** (s + 1) - 2 * k ** (s + 1) + np.abs(k - 1) ** (s + 1)) / (s * (s + 1))
    G[0] = 2.0 / (s * (s + 1))
    return G


def _duffy_corner(fun, s, n=24):
    """``int_[0,1]^2 fun(w) dw`` for integrands ~ |w|^(s-2) at the corner w = 0."""
    xa, wa = roots_jacobi(n, 0.0, s - 1.0)  # weight (1 + x)^(s - 1) on [-1, 1]
    a = 0.5 * (xa + 1.0)
    wa = wa * 0.5 ** s
    xb, wb = np.polynomial.legendre.leggauss(n)
    bb = 0.5 * (xb + 1.0)
    wb = 0.5 * wb
    A, Bm = np.meshgrid(a, bb, indexing="ij")
    W = np.outer(wa, wb)
    total = 0.0
    for w1, w2 in ((A, A * Bm), (A * Bm, A)):
        # dw = a da db; divide the a^(s-1) carried by the Jacobi weight back out
        vals = fun(w1, w2) * A / A ** (s - 1.0)
        total += np.sum(W * vals)
    return total


@lru_cache(maxsize=64)
def _pair_weight_2d(k1: int, k2: int, s: float) -> float:
    """``int_cell_0 int_cell_k |x - y|^(s-2)`` in units of ``h^(s+2)``.

    Reduced to ``int_[-1,1]^2 (1-|u1|)(1-|u2|) |k + u|^(s-2) du``; each quadrant
    square is integrated with a corner Duffy map when the singular point
    ``u = -k`` is one of its corners, and tensor Gauss-Legendre otherwise.
    """
    xg, wg = np.polynomial.legendre.leggauss(32)
    xg, wg = 0.5 * (xg + 1), 0.5 * wg
    total = 0.0
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            # quadrant u = (s1 v1, s2 v2), v in [0, 1]^2
            def g(v1, v2):
                u1, u2 = s1 * v1, s2 * v2
                r = np.hypot(k1 + u1, k2 + u2)
                return (1 - v1) * (1 - v2) * r ** (s - 2.0)

            c1, c2 = -k1 * s1, -k2 * s2  # singular point in v coordinates
            if c1 in (0, 1) and c2 in (0, 1):
                d1 = 1.0 if c1 == 0 else -1.0
                d2 = 1.0 if c2 == 0 else -1.0
                total += _duffy_corner(lambda w1, w2: g(c1 + d1 * w1, c2 + d2 * w2), s)
            else:
                V1, V2 = np.meshgrid(xg, xg, indexing="ij")
                total += np.sum(np.outer(wg, wg) * g(V1, V2))
    return float(total)


def _gagliardo_1d(fv, h, s, p):
    n = fv.size
    G = _pair_weights_1d(s, n)
    grad = np.gradient(fv, h)
    total = G[0] * np.sum(np.abs(grad) ** p)
    for k in range(1, n):
        q = np.abs(fv[k:] - fv[:-k]) / (k * h)
        total += 2.0 * G[k] * np.sum(q ** p)
    return total * h ** (s + 1)


def _gagliardo_2d(F, mask, h, s, p, near: int = 2):
    n = F.shape[0]
    gx, gy = np.gradient(np.where(mask, F, 0.0), h)
    inside = mask.copy()
    # one-sided at the disk edge is not worth it at these resolutions: use interior cells only
    inside[1:-1, 1:-1] &= mask[2:, 1:-1] & mask[:-2, 1:-1] & mask[1:-1, 2:] & mask[1:-1, :-2]
    total = _pair_weight_2d(0, 0, s) * np.sum((np.hypot(gx, gy) ** p)[inside & mask])
    for k1 in range(0, n):
        for k2 in range(-(n - 1), n):
            if k1 == 0 and k2 <= 0:
                continue
            a = F[k1:, max(k2, 0):n + min(k2, 0)]
            b = F[:n - k1, max(-k2, 0):n - max(k2, 0)]
            ma = mask[k1:, max(k2, 0):n + min(k2, 0)] & mask[:n - k1, max(-k2, 0):n - max(k2, 0)]
            if not ma.any():
                continue
            dist = np.hypot(k1, k2)
            w = _pair_weight_2d(k1, abs(k2), s) if max(k1, abs(k2)) <= near else dist ** (s - 2.0)
            q = np.abs(a - b)[ma] / (dist * h)
            total += 2.0 * w * np.sum(q ** p)
    return total * h ** (s + 2)


def _cells(r, n, d):
    h = 2.0 * r / n
    c = -r + h * (np.arange(n) + 0.5)
    if d == 1:
        return h, c[:, None], np.ones(n, dtype=bool)
    X, Y = np.meshgrid(c, c, indexing="ij")
    mask = X**2 + Y**2 < r * r
    return h, np.column_stack([X.ravel(), Y.ravel()]), mask


def _seminorm_samples(fv, d, n, h, mask, theta, p):
    s = p * (1.0 - theta)
    if d == 1:
        return _gagliardo_1d(fv, h, s, p)
    return _gagliardo_2d(fv.reshape(n, n), mask, h, s, p)


def fractional_sobolev_seminorm(f: Callable, theta: float, p: float, r: float, d: int = 1,
                                n: int = 512, levels: int = 4, center=None,
                                divergence_ratio: float = 0.75) -> SobolevReport:
    """``[f]_{W^{theta,p}(B(r))}`` by cell-pair quadrature at ``levels`` refinements.

    ``f`` maps ``(M, d)`` points to scalars. The finest level has ``n`` cells
    per axis, each coarser level half as many. The report is flagged divergent
    when the integral increases at every refinement and the last increment is
    at least ``divergence_ratio`` times the previous one (no geometric decay).
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if p < 1:
        raise ValueError("p must be >= 1")
    if d not in (1, 2):
        raise ValueError("seminorm quadrature is implemented for d = 1, 2")
    center = np.zeros(d) if center is None else np.asarray(center, float).reshape(d)
    ns = [max(2, n // 2 ** (levels - 1 - i)) for i in range(levels)]
    trace = []
    for m in ns:
        h, pts, mask = _cells(r, m, d)
        fv = np.asarray(f(pts + center), dtype=float).reshape(-1)
        trace.append(_seminorm_samples(fv, d, m, h, mask, theta, p))
    trace = np.array(trace)
    inc = np.diff(trace)
    divergent = bool(len(inc) >= 2 and np.all(inc > 0) and inc[-1] >= divergence_ratio * inc[-2]
                     and inc[-1] > 1e-12 * max(1.0, trace[-1]))
    return SobolevReport(theta, p, r, float(trace[-1] ** (1.0 / p)), float(trace[-1]), ns[-1], trace,
                         np.array(ns), divergent)


def seminorm_of_samples(values: np.ndarray, theta: float, p: float, r: float, d: int) -> float:
    """Double integral for samples already on the cell centres of B(r) (row-major in 2-d)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0] if d == 1 else int(round(np.sqrt(values.size)))
    h, _, mask = _cells(r, n, d)
    return _seminorm_samples(values.reshape(-1), d, n, h, mask, theta, p)


# ---------------------------------------------------------------------------
# commutators (d = 1)


def _ev(f, x):
    return np.asarray(f(np.asarray(x, dtype=float)), dtype=float)


def _deriv(f, x, h=1e-5):
    return (_ev(f, x + h) - _ev(f, x - h)) / (2 * h)


def _mollified_g_div_v(g, v, kernel, x, dg=None):
    """``(theta_eps * (g v'))(x)`` integrated by parts: no derivative of ``v``."""
    z, wk, wg = kernel.quadrature
    y = x[:, None] - z[None, :, 0]
    gy, vy = _ev(g, y), _ev(v, y)
    dgy = _deriv(g, y) if dg is None else _ev(dg, y)
    return np.sum(vy * gy * wg[None, :, 0], axis=1) - np.sum(vy * dgy * wk[None, :], axis=1)


def commutator(g: Callable, v: Callable, kernel: MollifierKernel, x, dg: Optional[Callable] = None) -> np.ndarray:
    """Pointwise ``R_eps[g, v](x)`` in one dimension; ``g`` and ``v`` act on arrays."""
    if kernel.dim != 1:
        raise ValueError("commutators are implemented in one dimension")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z, wk, wg = kernel.quadrature
    y = x[:, None] - z[None, :, 0]
    first = np.sum(_ev(g, y) * (_ev(v, x)[:, None] - _ev(v, y)) * wg[None, :, 0], axis=1)
    return first + _mollified_g_div_v(g, v, kernel, x, dg)


def _x_rule(lo, hi, width):
    n_pan = max(8, int(np.ceil((hi - lo) / width)))
    nodes, weights = np.polynomial.legendre.leggauss(16)
    edges = np.linspace(lo, hi, n_pan + 1)
    a, b = edges[:-1, None], edges[1:, None]
    return (0.5 * (b - a) * nodes + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * weights + 0 * a).ravel()


def pairing_value(g, v, rho, eps: float, r: float, dg=None, kernel_nodes: int = 256) -> float:
    """``int R_eps[g, v] rho`` via the symmetrised double integral plus the divergence terms.

    ``rho`` is assumed to vanish outside ``[-r, r]``.
    """
    kernel = MollifierKernel(eps, 1, kernel_nodes)
    z, wk, wg = kernel.quadrature
    lo, hi = -r - 2 * eps, r + 2 * eps
    x, wx = _x_rule(lo, hi, eps / 2)
    y = x[:, None] - z[None, :, 0]
    rx, ry = _ev(rho, x), _ev(rho, y)
    vx, vy = _ev(v, x), _ev(v, y)
    gy = _ev(g, y)
    double = np.sum(wx * np.sum(gy * (vx[:, None] - vy) * (rx[:, None] - ry) * wg[None, :, 0], axis=1))
    # theta_eps * div v, again without differentiating v
    moll_div = np.sum(vy * wg[None, :, 0], axis=1)
    term2 = np.sum(wx * _ev(g, x) * rx * moll_div)
    term3 = np.sum(wx * rx * _mollified_g_div_v(g, v, kernel, x, dg))
    return float(double - term2 + term3)


@dataclass
class CommutatorReport:
    eps: np.ndarray
    pairing: np.ndarray
    factors: dict
    rhs: np.ndarray  # per eps, constant here; kept per-eps for the CSV
    fitted_C: np.ndarray  # running max of |P| / RHS along the ladder
    case: str
    meta: dict = dc_field(default_factory=dict)

    @property
    def stable(self) -> bool:
        c = self.fitted_C
        return bool(c[0] > 0 and c[-1] / c[0] < 2.0) if c[0] > 0 else bool(np.all(c == 0))

    def to_csv(self, path) -> str:
        keys = sorted(self.factors)
        rows = ([e, P] + [self.factors[k] for k in keys] + [C] for e, P, C in zip(self.eps, self.pairing, self.fitted_C))
        return write_csv(path, ["eps", "pairing"] + keys + ["fitted_C"], rows)


def _total_variation(v, lo, hi, n=200001):
    xs = np.linspace(lo, hi, n)
    return float(np.sum(np.abs(np.diff(_ev(v, xs)))))


def corollary_factors(g, v, rho, r: float, theta: float = 0.5, alpha: float = 0.5, n: int = 2048) -> dict:
    """Right-hand-side ingredients of both commutator bounds on ``B(r)`` / ``B(r+1)``."""
    xs_r = np.linspace(-r, r, n)
    xs_r1 = np.linspace(-r - 1, r + 1, n)
    f2 = lambda f: (lambda t, x: _ev(f, x[:, 0]))
    out = {
        "g_sup": float(np.max(np.abs(_ev(g, xs_r1)))),
        "rho_sup": float(np.max(np.abs(_ev(rho, xs_r)))),
        # in 1-d the L1 norm of v' is the total variation of v
        "divv_L1": _total_variation(v, -r - 1, r + 1),
        "rho_holder": estimate_holder_seminorm(f2(rho), 1 - theta, xs_r[::2]).seminorm,
        "v_sobolev": fractional_sobolev_seminorm(lambda x: _ev(v, x[:, 0]), theta, 1.0, r + 1, 1, n=1024, levels=2).value,
        "v_holder": estimate_holder_seminorm(f2(v), alpha, xs_r1[::2]).seminorm,
        "rho_sobolev": fractional_sobolev_seminorm(lambda x: _ev(rho, x[:, 0]), 1 - alpha, 1.0, r, 1, n=1024, levels=2).value,
    }
    return out


def _rhs(fac, case):
    if case == "i":
        return fac["g_sup"] * (fac["rho_sup"] * fac["divv_L1"] + fac["rho_holder"] * fac["v_sobolev"])
    return fac["g_sup"] * (fac["rho_sup"] * fac["divv_L1"] + fac["v_holder"] * fac["rho_sobolev"])


def commutator_pairing(g, v, rho, eps_ladder: Sequence[float], r: float, theta: float = 0.5,
                       alpha: float = 0.5, case: str = "i", dg=None, factors: Optional[dict] = None) -> CommutatorReport:
    """Pairings ``P(eps)`` along a ladder, with the bound factors and the fitted constant."""
    eps = np.array(sorted(eps_ladder, reverse=True), dtype=float)
    P = np.array([pairing_value(g, v, rho, e, r, dg) for e in eps])
    if not np.all(np.isfinite(P)):
        raise FloatingPointError("non-finite commutator pairing")
    fac = corollary_factors(g, v, rho, r, theta, alpha) if factors is None else factors
    rhs = _rhs(fac, case)
    C = np.maximum.accumulate(np.abs(P) / rhs) if rhs > 0 else np.zeros_like(P)
    return CommutatorReport(eps, P, fac, np.full(eps.size, rhs), C, case, {"r": r, "theta": theta, "alpha": alpha})


# ---------------------------------------------------------------------------
# commutators composed with a diffeomorphism


@dataclass
class Diffeomorphism:
    """1-d diffeomorphism given by its inverse and the Jacobian of the inverse."""

    inverse: Callable
    jac_inverse: Callable
    forward: Optional[Callable] = None
    name: str = "phi"

    @staticmethod
    def identity() -> "Diffeomorphism":
        return Diffeomorphism(lambda y: y, lambda y: np.ones(np.shape(y)), lambda x: x, "identity")

    @staticmethod
    def translation(c: float) -> "Diffeomorphism":
        return Diffeomorphism(lambda y: y - c, lambda y: np.ones(np.shape(y)), lambda x: x + c, f"shift({c:g})")

    @staticmethod
    def from_ensemble(ens: FlowEnsemble, t: float) -> "Diffeomorphism":
        """Frozen-noise snapshot ``phi_t``: inverse and ``J phi^{-1} = 1 / J phi(phi^{-1})`` by interpolation."""
        if ens.field.dim != 1 or ens.jacobian is None:
            raise ValueError("need a 1-d ensemble built with the Jacobian")
        k = ens.local(t)
        img = ens.values[k, :, 0]
        order = np.argsort(img, kind="stable")
        img, pts, J = img[order], ens.points[order, 0], ens.jacobian[k, order]
        if np.any(np.diff(img) <= 0):
            raise ValueError("flow snapshot is not monotone on the grid")
        lo, hi = img[0], img[-1]

        def inv(y):
            y = np.asarray(y, float)
            if np.any((y < lo) | (y > hi)):
                raise ValueError("query outside the image of the ensemble grid")
            return np.interp(y, img, pts)

        return Diffeomorphism(inv, lambda y: 1.0 / np.interp(y, img, J),
                              lambda x: np.interp(x, pts, img), f"flow(t={t:g})")


def commutator_with_flow(g, v, phi: Diffeomorphism, rho, eps_ladder, r: float, R: float,
                         theta: float = 0.5, alpha: float = 0.5, case: str = "i", dg=None,
                         rho_support=None) -> CommutatorReport:
    """``int R_eps[g, v](phi(x)) rho(x) dx = int R_eps[g, v](y) rho_phi(y) dy``.

    ``rho_phi(y) = rho(phi^{-1}(y)) J phi^{-1}(y)`` must be supported in B(R);
    this is checked on a fine grid. The report carries the Hölder and
    Sobolev seminorms of ``J phi^{-1}`` on B(R) next to the usual factors.
    """
    supp = (-r, r) if rho_support is None else rho_support
    if phi.forward is not None:
        ends = np.asarray(phi.forward(np.linspace(supp[0], supp[1], 2001)), float)
        if ends.min() <= -R or ends.max() >= R:
            raise ValueError(f"support of rho o phi^-1 leaves B({R})")

    def rho_phi(y):
        y = np.asarray(y, float)
        out = np.zeros(y.shape)
        m = np.abs(y) < R
        if m.any():
            out[m] = _ev(rho, phi.inverse(y[m])) * phi.jac_inverse(y[m])
        return out

    ys = np.linspace(-R, R, 2001)
    rho_at = _ev(rho_phi, ys)
    if np.abs(rho_at[[0, -1]]).max() > 0:
        raise ValueError(f"rho_phi does not vanish on the boundary of B({R})")
    rep = commutator_pairing(g, v, rho_phi, eps_ladder, R, theta, alpha, case, dg)
    Ji = lambda t, x: phi.jac_inverse(x[:, 0])
    rep.factors["Jinv_holder"] = estimate_holder_seminorm(Ji, 1 - theta, ys[::2]).seminorm
    rep.factors["Jinv_sobolev"] = fractional_sobolev_seminorm(
        lambda x: phi.jac_inverse(x[:, 0]), 1 - alpha, 1.0, R, 1, n=1024, levels=2).value
    rep.meta.update(phi=phi.name, R=R)
    return rep


# ---------------------------------------------------------------------------
# Jacobian regularity of the flow


@dataclass
class JacobianProbeReport:
    eps: np.ndarray
    trace: np.ndarray  # int_0^T [J phi^eps_t]^p_{W^{1-alpha,p}(B(r))} dt per eps
    alpha: float
    p: float
    r: float
    in_window: bool  # p > 2d / (d + 2 alpha)
    min_J: float

    @property
    def variation(self) -> float:
        lo = self.trace.min()
        return float(self.trace.max() / lo) if lo > 0 else (1.0 if self.trace.max() == 0 else np.inf)

    @property
    def verdict(self) -> str:
        t = self.trace
        grows = np.all(np.diff(t) > 0) and t[0] > 0 and t[-1] > 2 * t[0]
        return "unbounded" if grows else "bounded"

    def to_csv(self, path) -> str:
        return write_csv(path, ["eps", "seminorm_integral"], zip(self.eps, self.trace))


def jacobian_sobolev_probe(fields: Sequence[DriftField], eps: Sequence[float], sigma: float, alpha: float,
                           p: float, r: float, path: WienerPath, n: int = 32, time_stride: int = 10,
                           box: float = 10.0) -> JacobianProbeReport:
    """Time-integrated seminorm of ``J phi^eps`` for already-mollified fields.

    ``J`` comes from the divergence ODE along the flow of start points at the
    cell centres of B(r); one frozen noise path is shared across the ladder.
    """
    if len(fields) < 3:
        raise ValueError("the probe needs an eps ladder of at least 3 values")
    d = fields[0].dim
    if d == 1:
        warnings.warn("Jacobian probe in d = 1 is exploratory", stacklevel=2)
    window = 2 * d / (d + 2 * alpha)
    h, pts, mask = _cells(r, n, d)
    pts = pts if d == 1 else pts
    sel = np.arange(0, path.n_steps + 1, time_stride)
    if sel[-1] != path.n_steps:
        sel = np.append(sel, path.n_steps)
    theta = 1.0 - alpha
    trace, minJ = [], np.inf
    for f in fields:
        traj, esc = euler_forward(f, sigma, pts, path.times, path.increments, box=box)
        J = np.exp(_log_jacobian(f, path.times, traj))
        minJ = min(minJ, float(J.min()))
        vals = np.array([seminorm_of_samples(J[k], theta, p, r, d) for k in sel])
        trace.append(float(np.trapezoid(vals, path.times[sel])))
    return JacobianProbeReport(np.asarray(eps, float), np.array(trace), alpha, p, r, bool(p > window), minJ)
