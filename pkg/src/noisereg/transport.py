"""Transport equation ``du + b . grad u dt + sigma grad u o dW = 0`` in one dimension.

Solutions are pulled back along characteristics, ``u(t, x) = u0(Z_0)`` with
``Z`` the backward equation started at ``(t, x)``; for ``sigma = 0`` this is the
classical method of characteristics. Diagnostics cover gradient growth under
refinement, the weak (Itô) formulation, weak* stability, the energy identity
and the transport relation ``u(t, phi_t(x)) = u0(x)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .fields import DriftField, _transition, _transition_deriv
from .io import write_csv
from .stochastic_flow import DEFAULT_BOX, FlowEnsemble, WienerPath, node_index, uniform_times


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class InitialDatum:
    func: Callable
    grad: Optional[Callable] = None
    klass: str = "C1"  # "C1" or "Linf"
    bound: float = np.inf
    name: str = "u0"

    def __call__(self, x):
        v = np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"{self.name}: non-finite initial datum")
        return v


def tanh_datum() -> InitialDatum:
    return InitialDatum(np.tanh, lambda x: 1.0 / np.cosh(x) ** 2, "C1", 1.0, "tanh")


def constant_datum(c: float = 1.0) -> InitialDatum:
    return InitialDatum(lambda x: np.full(np.shape(x), float(c)), lambda x: np.zeros(np.shape(x)),
                        "C1", abs(c), f"const({c})")


def smooth_step_datum(center: float = 0.25, width: float = 0.2) -> InitialDatum:
    """C-infinity step: 0 for ``x <= center``, 1 for ``x >= center + width``.

    Flat on ``x <= center``, so ``u0(x0) != u0(-x0)`` only for ``x0 > center``.
    """
    # _transition(r) falls from 1 at r = 1 to 0 at r = 2
    return InitialDatum(
        lambda x: 1.0 - _transition(1.0 + (np.asarray(x) - center) / width),
        lambda x: -_transition_deriv(1.0 + (np.asarray(x) - center) / width) / width,
        "C1", 1.0, f"step({center},{width})",
    )


def datum_from_spec(spec: dict) -> InitialDatum:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "tanh":
        out = tanh_datum()
    elif kind == "constant":
        out = constant_datum(spec.pop("value", 1.0))
    elif kind == "step":
        out = smooth_step_datum(spec.pop("center", 0.25), spec.pop("width", 0.2))
    else:
        raise ValueError(f"unknown initial datum kind {kind!r}")
    if spec:
        raise ValueError(f"unknown keys for initial datum {kind!r}: {sorted(spec)}")
    return out


@dataclass(frozen=True)
class TestFunction:
    """Bump ``exp(-1 / (1 - y^2))``, ``y = (x - center) / radius``, with exact derivatives."""

    __test__ = False  # not a pytest class

    center: float = 0.0
    radius: float = 0.5

    def _parts(self, x):
        y = (np.asarray(x, dtype=float) - self.center) / self.radius
        inside = np.abs(y) < 1
        q = np.where(inside, 1.0 - y * y, 1.0)
        th = np.where(inside, np.exp(-1.0 / q), 0.0)
        g1 = -2.0 * y / q**2
        g2 = -2.0 / q**2 - 8.0 * y * y / q**3
        return th, g1, g2, inside

    def __call__(self, x):
        return self._parts(x)[0]

    def grad(self, x):
        th, g1, _, inside = self._parts(x)
        return np.where(inside, th * g1 / self.radius, 0.0)

    def laplacian(self, x):
        th, g1, g2, inside = self._parts(x)
        return np.where(inside, th * (g1 * g1 + g2) / self.radius**2, 0.0)

    @property
    def support(self):
        return (self.center - self.radius, self.center + self.radius)


@dataclass
class TransportSolution:
    times: np.ndarray  # output times
    x: np.ndarray  # uniform 1-d grid
    values: np.ndarray  # (n_t, n_x)
    method: str
    path: Optional[WienerPath] = None
    extrapolated: Optional[np.ndarray] = None  # (n_t, n_x) characteristics left the box
    fan: Optional[np.ndarray] = None  # (n_t, n_x) non-unique backward characteristics
    preimage: Optional[np.ndarray] = None  # (n_t, n_x) foot points Z_0
    meta: dict = dc_field(default_factory=dict)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def gradient(self) -> np.ndarray:
        return np.gradient(self.values, self.dx, axis=1)

    def at(self, k: int, q) -> np.ndarray:
        return np.interp(q, self.x, self.values[k])

    def to_csv(self, path) -> str:
        rows = ((t, xi, u) for t, row in zip(self.times, self.values) for xi, u in zip(self.x, row))
        return write_csv(path, ["t", "x", "u"], rows)


# ---------------------------------------------------------------------------
# solvers


def _output_nodes(times, out_times):
    if out_times is None:
        return np.arange(times.size)
    return np.array([node_index(times, t) for t in np.atleast_1d(out_times)])


def _pullback(field, sigma, x, times, dW, out_nodes, box, fan_tol=None):
    """Backward equation from every output node down to node 0, all at once.

    Group ``g`` starts at node ``out_nodes[g]`` and is stepped only while the
    running node index is below its start. Returns the foot points ``Z_0``,
    escape flags and (if ``fan_tol``) whether the path came within ``fan_tol`` of
    a singular point at some node in ``(0, t]``.
    """
    G, M = len(out_nodes), x.size
    Z = np.tile(x, (G, 1))
    esc = np.zeros((G, M), dtype=bool)
    sing = field.singular_points[:, 0] if field.singular_points.size else np.zeros(0)
    hit = np.zeros((G, M), dtype=bool)

    def near(z):
        if sing.size == 0:
            return np.zeros(z.shape, dtype=bool)
        return np.min(np.abs(z[..., None] - sing), axis=-1) <= fan_tol

    if fan_tol is not None:
        hit |= near(Z) & (out_nodes > 0)[:, None]
    top = int(np.max(out_nodes)) if G else 0
    for j in range(top - 1, -1, -1):
        act = np.nonzero(out_nodes > j)[0]
        if act.size == 0:
            continue
        dt = times[j + 1] - times[j]
        z = Z[act]
        live = ~esc[act]
        new = z - field(times[j + 1], z.reshape(-1, 1)).reshape(z.shape) * dt - sigma * dW[j, 0]
        gone = live & (np.abs(new) > box)
        esc[act] |= gone
        z = np.where(live & ~gone, new, z)
        Z[act] = z
        if fan_tol is not None and j > 0:
            hit[act] |= near(z)
    return Z, esc, hit


def solve_stochastic(u0: InitialDatum, field: DriftField, sigma: float, path: WienerPath, x,
                     out_times=None, box: float = DEFAULT_BOX) -> TransportSolution:
    """``u(t, x) = u0(phi_t^{-1}(x))`` with the inverse flow from the backward equation."""
    if sigma == 0:
        raise ValueError("solve_stochastic needs sigma != 0; use solve_deterministic")
    if field.dim != 1 or path.dim != 1:
        raise ValueError("transport solver is one-dimensional")
    x = np.asarray(x, dtype=float)
    nodes = _output_nodes(path.times, out_times)
    Z, esc, _ = _pullback(field, sigma, x, path.times, path.increments, nodes, box)
    U = u0(Z)
    U[nodes == 0] = u0(x)
    return TransportSolution(path.times[nodes], x, U, "stochastic-characteristics", path, esc,
                             np.zeros_like(esc), Z, {"sigma": sigma, "field": field.name})


def solve_deterministic(u0: InitialDatum, field: DriftField, x, T: float = 1.0, dt: float = 1e-3,
                        out_times=None, fan_value: float = 0.0, box: float = DEFAULT_BOX,
                        times: Optional[np.ndarray] = None) -> TransportSolution:
    """Backward characteristics with ``sigma = 0``.

    Where the backward characteristic reaches a singular stagnation point of
    the field before time 0 it is not unique; those nodes are filled with
    ``fan_value`` and marked in ``fan``.
    """
    if field.dim != 1:
        raise ValueError("transport solver is one-dimensional")
    x = np.asarray(x, dtype=float)
    times = uniform_times(T, int(round(T / dt))) if times is None else np.asarray(times, float)
    h = float(np.max(np.diff(times)))
    nodes = _output_nodes(times, out_times)
    dW = np.zeros((times.size - 1, 1))
    Z, esc, fan = _pullback(field, 0.0, x, times, dW, nodes, box, fan_tol=4.0 * h * h)
    U = u0(Z)
    U = np.where(fan, fan_value, U)
    U[nodes == 0] = u0(x)
    return TransportSolution(times[nodes], x, U, "deterministic-characteristics", None, esc, fan, Z,
                             {"sigma": 0.0, "field": field.name, "fan_value": fan_value})


# ---------------------------------------------------------------------------
# gradient growth under refinement


@dataclass
class GradientDiagnostic:
    times: np.ndarray
    dx: np.ndarray  # per level, coarse to fine
    sup_grad: np.ndarray  # (levels, n_t)
    verdict: str  # bounded | blow-up | inconclusive
    blowup_time: Optional[float]
    rule: str

    def to_csv(self, path) -> str:
        rows = ((lvl, t, g) for lvl in range(len(self.dx)) for t, g in zip(self.times, self.sup_grad[lvl]))
        return write_csv(path, ["level", "t", "sup_grad"], rows)


def gradient_diagnostic(solutions: Sequence[TransportSolution], bounded_tol: float = 0.2,
                        blowup_factor: float = 2.0, window=None) -> GradientDiagnostic:
    """Sup of the finite-difference gradient per time for a family of refinements.

    Rule: "blow-up" at time t if sup|grad u| grows at every refinement and the
    finest/coarsest ratio exceeds ``blowup_factor``; the blow-up time is the
    first such t. "bounded" if the two finest levels differ by less than
    ``bounded_tol`` (relative) at every time. Otherwise "inconclusive".
    """
    if len(solutions) < 2:
        raise ValueError("need at least two refinement levels")
    sols = sorted(solutions, key=lambda s: -s.dx)
    times = sols[0].times
    for s in sols:
        if s.times.shape != times.shape or not np.allclose(s.times, times):
            raise ValueError("refinement levels must share output times")
    sup = []
    for s in sols:
        g = np.abs(s.gradient())
        if window is not None:
            g = g[:, (s.x >= window[0]) & (s.x <= window[1])]
        sup.append(g.max(axis=1))
    sup = np.array(sup)
    growing = np.all(np.diff(sup, axis=0) > 0, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(sup[0] > 0, sup[-1] / sup[0], np.where(sup[-1] > 0, np.inf, 1.0))
        rel = np.abs(sup[-1] - sup[-2]) / np.maximum(np.maximum(sup[-1], sup[-2]), 1e-300)
    rel = np.where(np.maximum(sup[-1], sup[-2]) == 0, 0.0, rel)
    flagged = growing & (ratio > blowup_factor)
    if flagged.any():
        verdict, tb = "blow-up", float(times[np.argmax(flagged)])
    elif np.all(rel < bounded_tol):
        verdict, tb = "bounded", None
    else:
        verdict, tb = "inconclusive", None
    rule = (f"blow-up: monotone growth over all levels and finest/coarsest > {blowup_factor}; "
            f"bounded: finest two levels within {bounded_tol:.0%}")
    return GradientDiagnostic(times, np.array([s.dx for s in sols]), sup, verdict, tb, rule)


# ---------------------------------------------------------------------------
# weak formulation


@dataclass
class WeakResidualReport:
    times: np.ndarray
    R: np.ndarray
    ito_term: np.ndarray
    laplace_term: np.ndarray
    drift_term: np.ndarray
    dt: float
    dx: float

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.R)))

    def to_csv(self, path) -> str:
        rows = zip(self.times, self.R, self.ito_term, self.laplace_term, self.drift_term)
        return write_csv(path, ["t", "R", "ito_term", "laplace_term", "drift_term"], rows)


def weak_residual(sol: TransportSolution, theta: TestFunction, field: DriftField, sigma: float,
                  path: Optional[WienerPath] = None, derivatives: str = "discrete") -> WeakResidualReport:
    """Residual of the Itô form of the tested equation.

    ``R(t) = int u theta |_0^t + int_0^t int b u' theta - sigma^2/2 int_0^t int u theta''
    - sigma int_0^t (int u theta') dW``, all time integrals as left-point sums.
    The solution must be stored at every node of the path grid.

    With ``derivatives="discrete"`` the derivatives of theta are central
    differences on the grid; their sums telescope, so the discrete analogues
    of ``int theta' = int theta'' = 0`` hold exactly. ``"analytic"`` uses the
    closed forms of the test function.
    """
    path = sol.path if path is None else path
    if path is None:
        times = sol.times
        dW = np.zeros(times.size - 1)
    else:
        times, dW = path.times, path.increments[:, 0]
        if sol.times.size != times.size or not np.allclose(sol.times, times):
            raise ValueError("solution must be stored at every node of the path grid")
    lo, hi = theta.support
    if lo < sol.x[0] or hi > sol.x[-1]:
        raise ValueError("test function support leaves the spatial grid")
    h = sol.dx
    th = theta(sol.x)
    if derivatives == "analytic":
        dth, lth = theta.grad(sol.x), theta.laplacian(sol.x)
    elif derivatives == "discrete":
        pad = np.concatenate([[0.0], th, [0.0]])
        dth = (pad[2:] - pad[:-2]) / (2 * h)
        lth = (pad[2:] - 2 * th + pad[:-2]) / h**2
    else:
        raise ValueError(f"unknown derivative mode {derivatives!r}")
    u = sol.values
    ux = sol.gradient()
    # theta vanishes at the grid ends, so the trapezoid rule is h * sum
    pair = h * u @ th
    b = np.stack([field(t, sol.x)[:, 0] for t in times[:-1]]) if field.time_dependent \
        else np.broadcast_to(field(0.0, sol.x)[:, 0], (times.size - 1, sol.x.size))
    dt = np.diff(times)
    drift = h * np.sum(b * ux[:-1] * th, axis=1) * dt
    lap = h * (u[:-1] @ lth) * dt
    ito = h * (u[:-1] @ dth) * dW
    cum = lambda a: np.concatenate([[0.0], np.cumsum(a)])
    D, L, I = cum(drift), cum(lap), cum(ito)
    R = pair - pair[0] + D - 0.5 * sigma**2 * L - sigma * I
    R[0] = 0.0
    return WeakResidualReport(times, R, sigma * I, 0.5 * sigma**2 * L, D, float(dt.max()), h)


# ---------------------------------------------------------------------------
# weak* stability through the forward flow


@dataclass
class WeakStarReport:
    labels: list
    a: np.ndarray  # (n,) sup_t |int (v - v_n)(x) f(phi_t(x)) J_t(x) dx|
    a_t: np.ndarray  # (n, n_t)
    sup_diff: np.ndarray  # (n,) grid sup |v_n - v|
    f_l1: float
    transfer: float  # max_t int |f(phi_t)| J dx / ||f||_1, the discrete change-of-variables factor
    K: tuple

    def bound(self) -> np.ndarray:
        return self.sup_diff * self.f_l1 * self.transfer


def stability_weakstar(seq: Sequence[Callable], limit: Callable, ens: FlowEnsemble, f: Callable,
                       bound: float, labels=None, f_l1: Optional[float] = None) -> WeakStarReport:
    """``a_n = sup_t |int [v(x) - v_n(x)] f(phi_t(x)) J phi_t(x) dx|`` on the ensemble grid.

    The integration set K is the bounding box of start points whose image
    meets the support of ``f`` at some node; it must lie strictly inside the
    start grid, otherwise the pullback is truncated and we refuse.
    """
    if not np.isfinite(bound):
        raise ValueError("weak* stability needs a declared uniform bound on v_n")
    if ens.jacobian is None:
        raise ValueError("ensemble was built without the Jacobian")
    if ens.field.dim != 1:
        raise ValueError("weak* stability is implemented in one dimension")
    x = ens.points[:, 0]
    h = float(x[1] - x[0])
    w = np.full(x.size, h)
    w[[0, -1]] = h / 2
    F = f(ens.values[:, :, 0])  # (n_t, M)
    push = F * ens.jacobian
    touched = np.any(F != 0, axis=0)
    if not touched.any():
        raise ValueError("f vanishes on the whole image")
    if touched[0] or touched[-1]:
        raise ValueError("preimage of supp f reaches the edge of the start grid")
    K = (float(x[touched].min()), float(x[touched].max()))
    vl = np.asarray(limit(x), dtype=float)
    A, At, S = [], [], []
    for v in seq:
        vn = np.asarray(v(x), dtype=float)
        if np.max(np.abs(vn)) > bound * (1 + 1e-12):
            raise ValueError("v_n exceeds its declared bound")
        at = np.abs(push @ ((vl - vn) * w))
        A.append(at.max())
        At.append(at)
        S.append(np.max(np.abs(vn - vl)))
    if f_l1 is None:
        from scipy import integrate
        lo, hi = ens.values[..., 0].min(), ens.values[..., 0].max()
        f_l1 = integrate.quad(lambda y: abs(f(np.array([y]))[0]), lo, hi, limit=200)[0]
    transfer = float(np.max(np.abs(F) * ens.jacobian @ w) / f_l1)
    return WeakStarReport(list(labels) if labels is not None else list(range(len(A))),
                          np.array(A), np.array(At), np.array(S), float(f_l1), transfer, K)


# ---------------------------------------------------------------------------
# energy identity and transport relation


@dataclass
class EnergyReport:
    times: np.ndarray
    energy: np.ndarray
    predicted: np.ndarray
    window: tuple

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.energy - self.predicted)))


def energy_identity_check(sol: TransportSolution, field: DriftField, window=None) -> EnergyReport:
    """``int_W u^2(t) - int_W u0^2 - int_0^t int_W u^2 div b`` on a hard box window W.

    The divergence integral over each cell is taken exactly as
    ``b(x_{i+1}) - b(x_i)``, which stays finite for the square-root drift.
    """
    x = sol.x
    window = (x[0], x[-1]) if window is None else tuple(window)
    m = (x >= window[0]) & (x <= window[1])
    xs = x[m]
    u2 = sol.values[:, m] ** 2
    h = xs[1] - xs[0]
    energy = h * (u2.sum(axis=1) - 0.5 * (u2[:, 0] + u2[:, -1]))
    mid = 0.5 * (u2[:, 1:] + u2[:, :-1])
    if field.time_dependent:
        db = np.stack([np.diff(field(t, xs)[:, 0]) for t in sol.times])
    else:
        db = np.diff(field(0.0, xs)[:, 0])[None, :]
    src = np.sum(mid * db, axis=1)
    dt = np.diff(sol.times)
    pred = energy[0] + np.concatenate([[0.0], np.cumsum(0.5 * (src[1:] + src[:-1]) * dt)])
    return EnergyReport(sol.times, energy, pred, window)


def transport_relation_error(sol: TransportSolution, ens: FlowEnsemble, u0: InitialDatum) -> float:
    """``max |u(t, phi_t(x)) - u0(x)|`` over output times and start points.

    ``u(t, .)`` is read off the solution grid by linear interpolation; image
    points outside the solution grid are skipped.
    """
    err = 0.0
    ref = u0(ens.points[:, 0])
    for k, t in enumerate(sol.times):
        y = ens.image(t)[:, 0]
        ok = (y >= sol.x[0]) & (y <= sol.x[-1])
        if ok.any():
            err = max(err, float(np.max(np.abs(sol.at(k, y[ok]) - ref[ok]))))
    return err
