"""Euler-Maruyama flows of ``dX = b(t, X) dt + sigma dW`` on shared noise.

Forward flows, the backward equation for the inverse flow, two independent
Jacobian estimates, flow-property checks and the Monte Carlo stability study
for sequences of mollified drifts.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fields import DriftField, as_points, divergence
from .io import write_csv

DEFAULT_BOX = 10.0


def uniform_times(T: float, n_steps: int) -> np.ndarray:
    if n_steps < 1:
        raise ValueError("need at least one time step")
    return np.linspace(0.0, float(T), int(n_steps) + 1)


def node_index(times: np.ndarray, t: float) -> int:
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-9 * max(1.0, abs(times[-1])):
        raise ValueError(f"time {t} is not a node of the time grid")
    return k


def _check_grid(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("time grid needs N >= 1 steps")
    if not np.all(np.diff(times) > 0):
        raise ValueError("non-monotone time grid")
    return times


# ---------------------------------------------------------------------------
# Brownian paths


@dataclass(frozen=True)
class WienerPath:
    """Brownian increments on a fixed grid, a pure function of (seed, index, grid)."""

    times: np.ndarray
    increments: np.ndarray  # (N, d)
    seed: int
    index: int

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def W(self) -> np.ndarray:
        """Path values on the grid, ``W(t_0) = 0``."""
        return np.vstack([np.zeros((1, self.dim)), np.cumsum(self.increments, axis=0)])

    def coarsen(self, m: int) -> "WienerPath":
        """Same Brownian path seen on every ``m``-th node."""
        if self.n_steps % m:
            raise ValueError(f"{self.n_steps} steps not divisible by {m}")
        inc = self.increments.reshape(self.n_steps // m, m, self.dim).sum(axis=1)
        return WienerPath(self.times[::m], inc, self.seed, self.index)


def _generator(seed: int, index: int) -> np.random.Generator:
    # Philox is counter based; the (seed, index) pair is the key, the stream
    # position enumerates (step, coordinate) in row-major order.
    ss = np.random.SeedSequence([int(seed), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def sample_wiener(seed: int, index: int, times, d: int = 1) -> WienerPath:
    times = _check_grid(times)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    z = _generator(seed, index).standard_normal((times.size - 1, d))
    return WienerPath(times, z * np.sqrt(np.diff(times))[:, None], int(seed), int(index))


def wiener_batch(seed: int, indices: Sequence[int], times, d: int = 1) -> np.ndarray:
    """Stacked increments ``(P, N, d)`` for the given path indices."""
    return np.stack([sample_wiener(seed, i, times, d).increments for i in indices])


# ---------------------------------------------------------------------------
# integrators


def _escape_mask(x, box):
    return ~np.all(np.abs(x) <= box, axis=-1)


def euler_forward(field: DriftField, sigma: float, x0, times, dW, k0: int = 0, k1: Optional[int] = None,
                  box: float = DEFAULT_BOX, store: bool = True):
    """Explicit Euler-Maruyama from node ``k0`` to ``k1`` for a batch of points.

    ``dW`` is ``(N, d)`` (shared by all points) or ``(K, N, d)``. Returns the
    trajectory ``(k1-k0+1, K, d)`` (or only the end state when ``store`` is
    false) and the node at which each point left ``[-box, box]^d`` (-1 if never).
    Escaped points are frozen at their last value inside the box.
    """
    x = as_points(x0, field.dim).copy()
    k1 = len(times) - 1 if k1 is None else k1
    esc = np.full(x.shape[0], -1)
    out = [x.copy()] if store else None
    for k in range(k0, k1):
        dt = times[k + 1] - times[k]
        inc = dW[k] if dW.ndim == 2 else dW[:, k]
        live = esc < 0
        new = x + field(times[k], x) * dt + sigma * inc
        gone = live & _escape_mask(new, box)
        esc[gone] = k + 1
        upd = live & ~gone
        x[upd] = new[upd]
        if store:
            out.append(x.copy())
    return (np.stack(out) if store else x), esc


def euler_backward(field: DriftField, sigma: float, x, times, dW, k_top: int, k0: int = 0,
                   box: float = DEFAULT_BOX, store: bool = True):
    """Backward equation ``Z_s = x - int_s^t b(r, Z_r) dr - sigma (W_t - W_s)``.

    Marches from node ``k_top`` down to ``k0``:
    ``Z_k = Z_{k+1} - b(t_{k+1}, Z_{k+1}) dt_k - sigma dW_k``.
    The stored trajectory is in ascending time order.
    """
    z = as_points(x, field.dim).copy()
    esc = np.full(z.shape[0], -1)
    out = [z.copy()] if store else None
    for k in range(k_top - 1, k0 - 1, -1):
        dt = times[k + 1] - times[k]
        inc = dW[k] if dW.ndim == 2 else dW[:, k]
        live = esc < 0
        new = z - field(times[k + 1], z) * dt - sigma * inc
        gone = live & _escape_mask(new, box)
        esc[gone] = k
        upd = live & ~gone
        z[upd] = new[upd]
        if store:
            out.append(z.copy())
    if store:
        return np.stack(out[::-1]), esc
    return z, esc


@dataclass
class FlowSample:
    s: float
    x: np.ndarray
    times: np.ndarray
    values: np.ndarray  # (n, d)
    direction: str
    path: WienerPath
    escaped: bool = False
    escape_time: Optional[float] = None


def integrate_forward(field: DriftField, sigma: float, s: float, x, path: WienerPath,
                      box: float = DEFAULT_BOX) -> FlowSample:
    k0 = node_index(path.times, s)
    x = as_points(x, field.dim)[0]
    traj, esc = euler_forward(field, sigma, x, path.times, path.increments, k0, box=box)
    escaped = esc[0] >= 0
    values = traj[:, 0, :]
    if escaped:
        values = values[: esc[0] - k0]
    return FlowSample(s, x, path.times[k0:k0 + values.shape[0]], values, "forward", path,
                      escaped, float(path.times[esc[0]]) if escaped else None)


def integrate_backward(field: DriftField, sigma: float, t: float, x, path: WienerPath,
                       box: float = DEFAULT_BOX) -> FlowSample:
    k = node_index(path.times, t)
    x = as_points(x, field.dim)[0]
    traj, esc = euler_backward(field, sigma, x, path.times, path.increments, k, box=box)
    escaped = esc[0] >= 0
    values = traj[:, 0, :]
    times = path.times[: k + 1]
    if escaped:
        values, times = values[esc[0] + 1:], times[esc[0] + 1:]
    return FlowSample(t, x, times, values, "backward", path, escaped,
                      float(path.times[esc[0]]) if escaped else None)


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class FlowEnsemble:
    """Forward flow ``phi_{s,t}`` of a grid of start points on one Wiener path."""

    field: DriftField
    sigma: float
    path: WienerPath
    points: np.ndarray  # (M, d)
    s_index: int
    values: np.ndarray  # (n, M, d), n = N - s_index + 1
    escaped: np.ndarray
    jacobian: Optional[np.ndarray] = None  # (n, M) determinant via the divergence ODE
    spacing: float = np.nan
    box: float = DEFAULT_BOX

    @property
    def times(self) -> np.ndarray:
        return self.path.times[self.s_index:]

    def local(self, t: float) -> int:
        return node_index(self.path.times, t) - self.s_index

    def image(self, t: float) -> np.ndarray:
        return self.values[self.local(t)]

    def order_preserved(self) -> bool:
        """1-d only: grid order of the start points kept at every node."""
        if self.field.dim != 1:
            raise ValueError("order check is one-dimensional")
        o = np.argsort(self.points[:, 0], kind="stable")
        return bool(np.all(np.diff(self.values[:, o, 0], axis=1) > 0))

    def injective(self, tol: float = 1e-12) -> bool:
        """No two grid trajectories within ``tol`` of each other at any node."""
        from scipy.spatial import cKDTree
        for img in self.values:
            if cKDTree(img).query_pairs(tol, output_type="ndarray").size:
                return False
        return True

    def to_csv(self, path, path_index: Optional[int] = None) -> str:
        d = self.field.dim
        idx = self.path.index if path_index is None else path_index
        header = ["path_index", "t"] + [f"x0_{i}" for i in range(d)] + [f"X_{i}" for i in range(d)] + ["J"]
        J = self.jacobian if self.jacobian is not None else np.full(self.values.shape[:2], np.nan)
        rows = []
        for k, t in enumerate(self.times):
            for m in range(self.points.shape[0]):
                rows.append([idx, t, *self.points[m], *self.values[k, m], J[k, m]])
        return write_csv(path, header, rows)


def _grid_spacing(points):
    if points.shape[0] < 2:
        return np.nan
    steps = []
    for i in range(points.shape[1]):
        u = np.unique(points[:, i])
        if u.size > 1:
            steps.append(np.min(np.diff(u)))
    return float(min(steps)) if steps else np.nan


def build_ensemble(field: DriftField, sigma: float, points, path: WienerPath, s: float = 0.0,
                   jacobian: bool = False, box: float = DEFAULT_BOX) -> FlowEnsemble:
    pts = as_points(points, field.dim)
    k0 = node_index(path.times, s)
    traj, esc = euler_forward(field, sigma, pts, path.times, path.increments, k0, box=box)
    J = None
    if jacobian:
        J = _log_jacobian(field, path.times[k0:], traj)
        J = np.exp(J)
    return FlowEnsemble(field, sigma, path, pts, k0, traj, esc, J, _grid_spacing(pts), box)


def _log_jacobian(field, times, traj):
    n, M, _ = traj.shape
    logJ = np.zeros((n, M))
    for k in range(n - 1):
        dv = divergence(field, times[k], traj[k])
        if not np.all(np.isfinite(dv)):
            raise ValueError("divergence is not finite along the trajectory; mollify the field first")
        logJ[k + 1] = logJ[k] + dv * (times[k + 1] - times[k])
    return logJ


@dataclass
class Inversion:
    points: np.ndarray
    extrapolated: np.ndarray
    method: str


def _image_hull_mask(image, x):
    d = image.shape[1]
    if d == 1:
        return (x[:, 0] < image[:, 0].min()) | (x[:, 0] > image[:, 0].max())
    from scipy.spatial import Delaunay
    return Delaunay(image).find_simplex(x) < 0


def invert_flow(ens: FlowEnsemble, t: float, x, method: str = "backward") -> Inversion:
    """``phi_{s,t}^{-1}(x)`` by the backward equation on the ensemble's noise.

    ``method="interpolate"`` inverts the sampled map instead (linear
    interpolation of image -> start point); kept as an independent check.
    Queries outside the image of the grid are flagged.
    """
    d = ens.field.dim
    x = as_points(x, d)
    k = node_index(ens.path.times, t)
    img = ens.values[k - ens.s_index]
    outside = _image_hull_mask(img, x)
    if method == "backward":
        z, esc = euler_backward(ens.field, ens.sigma, x, ens.path.times, ens.path.increments, k,
                                ens.s_index, ens.box, store=False)
        return Inversion(z, outside | (esc >= 0), "backward")
    if method == "interpolate":
        if d == 1:
            order = np.argsort(img[:, 0], kind="stable")
            z = np.interp(x[:, 0], img[order, 0], ens.points[order, 0])[:, None]
        else:
            from scipy.interpolate import LinearNDInterpolator
            z = LinearNDInterpolator(img, ens.points)(x)
            z = np.where(np.isnan(z), x, z)
        return Inversion(z, outside, "interpolate")
    raise ValueError(f"unknown inversion method {method!r}")


@dataclass
class JacobianFD:
    matrix: np.ndarray  # (M, d, d)
    det: np.ndarray
    singular: np.ndarray
    h: float


def jacobian_fd(ens: FlowEnsemble, t: float, x=None, h: Optional[float] = None) -> JacobianFD:
    """Central-difference ``D phi_{s,t}(x)``, stencil points run on the same noise."""
    d = ens.field.dim
    x = ens.points if x is None else as_points(x, d)
    if h is None:
        h = max(1e-4, ens.spacing / 10) if np.isfinite(ens.spacing) else 1e-4
    k = node_index(ens.path.times, t)
    M = x.shape[0]
    stencil = np.concatenate([x + h * e for e in np.eye(d)] + [x - h * e for e in np.eye(d)])
    end, _ = euler_forward(ens.field, ens.sigma, stencil, ens.path.times, ens.path.increments,
                           ens.s_index, k, ens.box, store=False)
    plus = end[: d * M].reshape(d, M, d)
    minus = end[d * M:].reshape(d, M, d)
    D = np.transpose((plus - minus) / (2 * h), (1, 2, 0))  # D[m, i, j] = d phi_i / d x_j
    det = np.linalg.det(D)
    return JacobianFD(D, det, np.abs(det) < 1e-12, h)


@dataclass
class JacobianODE:
    times: np.ndarray
    J: np.ndarray  # (n, M)
    trajectory: np.ndarray


def jacobian_ode(field: DriftField, path: WienerPath, x, sigma: float = 1.0, s: float = 0.0,
                 box: float = DEFAULT_BOX) -> JacobianODE:
    """``J(t) = exp(int_s^t div b(r, phi_r(x)) dr)`` along the simulated trajectory."""
    pts = as_points(x, field.dim)
    k0 = node_index(path.times, s)
    traj, _ = euler_forward(field, sigma, pts, path.times, path.increments, k0, box=box)
    logJ = _log_jacobian(field, path.times[k0:], traj)
    return JacobianODE(path.times[k0:], np.exp(logJ), traj)


def flow_composition_check(field: DriftField, sigma: float, path: WienerPath, s: float, t: float,
                           grid, box: float = DEFAULT_BOX) -> float:
    """``max_x |phi_{s,t}(phi_{0,s}(x)) - phi_{0,t}(x)|`` on a uniform 1-d grid.

    ``phi_{s,t}`` is computed on the grid extended (same spacing) to cover
    ``phi_{0,s}(grid)`` and evaluated there by linear interpolation.
    """
    if field.dim != 1:
        raise ValueError("flow_composition_check works on 1-d grids")
    grid = np.asarray(grid, dtype=float).ravel()
    ks, kt = node_index(path.times, s), node_index(path.times, t)
    if not 0 <= ks <= kt:
        raise ValueError("need 0 <= s <= t")
    full, _ = euler_forward(field, sigma, grid, path.times, path.increments, 0, kt, box)
    direct = full[kt, :, 0]
    if ks == kt:
        return 0.0
    mid = full[ks, :, 0]
    h = grid[1] - grid[0]
    lo = int(np.ceil(max(0.0, grid[0] - mid.min()) / h)) + 1
    hi = int(np.ceil(max(0.0, mid.max() - grid[-1]) / h)) + 1
    ext = np.concatenate([grid[0] - h * np.arange(lo, 0, -1), grid, grid[-1] + h * np.arange(1, hi + 1)])
    later, _ = euler_forward(field, sigma, ext, path.times, path.increments, ks, kt, box, store=False)
    composed = np.interp(mid, ext, later[:, 0])
    return float(np.max(np.abs(composed - direct)))


# ---------------------------------------------------------------------------
# closed-form counterexample helpers


def meeting_time(field: DriftField, xa: float, xb: float, dt: float = 1e-3, T: float = 1.0,
                 sigma: float = 0.0, path: Optional[WienerPath] = None) -> float:
    """First node at which the characteristics from ``xa`` and ``xb`` meet or cross.

    Returns ``nan`` if they stay apart on ``[0, T]``.
    """
    times = uniform_times(T, int(round(T / dt))) if path is None else path.times
    inc = np.zeros((times.size - 1, 1)) if path is None else path.increments
    traj, _ = euler_forward(field, sigma, np.array([[xa], [xb]]), times, inc)
    gap = traj[:, 0, 0] - traj[:, 1, 0]
    hit = np.nonzero((gap == 0) | (np.sign(gap) != np.sign(gap[0])))[0]
    return float(times[hit[0]]) if hit.size else float("nan")


def integral_equation_residual(field: DriftField, X, times, x0, sigma: float = 0.0,
                               W: Optional[np.ndarray] = None) -> float:
    """``max_t |X(t) - x0 - int_0^t b(X) ds - sigma W(t)|`` with trapezoidal time quadrature.

    ``X`` is an array ``(n,)``/``(n, d)`` on ``times`` or a callable of time.
    """
    times = np.asarray(times, dtype=float)
    Xv = np.asarray(X(times) if callable(X) else X, dtype=float).reshape(times.size, -1)
    bv = field(0.0, Xv) if not field.time_dependent else np.vstack([field(t, xi) for t, xi in zip(times, Xv)])
    dt = np.diff(times)[:, None]
    integral = np.vstack([np.zeros((1, Xv.shape[1])), np.cumsum(0.5 * (bv[1:] + bv[:-1]) * dt, axis=0)])
    noise = 0.0 if W is None else sigma * np.asarray(W).reshape(Xv.shape)
    res = Xv - np.asarray(x0, float).reshape(1, -1) - integral - noise
    return float(np.max(np.abs(res)))


# ---------------------------------------------------------------------------
# Monte Carlo stability of flows under drift approximation


@dataclass
class StabilityReport:
    labels: list
    displacement: np.ndarray  # (n_fields,) grid max over x of E sup_r |phi^n - phi_ref|^p
    displacement_se: np.ndarray
    jacobian_moment: np.ndarray  # (n_fields,) grid max over x of E sup_u |D phi^n|^p
    jacobian_moment_se: np.ndarray
    p: float
    n_paths: int
    points: np.ndarray
    note: str = "sup over x is a grid maximum: a lower bound of the true supremum"

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.displacement) < 0))

    def jacobian_bounded(self, factor: float = 2.0) -> bool:
        return bool(self.jacobian_moment.max() <= factor * self.jacobian_moment[0])


def _stability_batch(fields, reference, sigma, p, pts, times, dW, h, box):
    # dW: (P, N, d); all start points share each path's increments
    P, N, d = dW.shape
    M = pts.shape[0]
    X0 = np.tile(pts, (P, 1))
    inc_rep = np.repeat(dW, M, axis=0)  # (P*M, N, d)
    shifts = [np.zeros(d)] + [s * h * e for e in np.eye(d) for s in (1.0, -1.0)]
    ref = X0.copy()
    states = [[X0 + sh for sh in shifts] for _ in fields]
    disp = np.zeros((len(fields), P * M))
    jac = np.ones((len(fields), P * M))  # ||D phi_{0,0}|| = 1
    for k in range(N):
        t, dt = times[k], times[k + 1] - times[k]
        inc = sigma * inc_rep[:, k]
        ref = ref + reference(t, ref) * dt + inc
        for n, f in enumerate(fields):
            st = states[n]
            stacked = np.concatenate(st)
            stacked = stacked + f(t, stacked) * dt + np.tile(inc, (len(st), 1))
            st[:] = np.split(stacked, len(st))
            disp[n] = np.maximum(disp[n], np.sum((st[0] - ref) ** 2, axis=1) ** (p / 2))
            D = np.stack([(st[1 + 2 * j] - st[2 + 2 * j]) / (2 * h) for j in range(d)], axis=2)
            jac[n] = np.maximum(jac[n], np.linalg.norm(D, ord=2, axis=(1, 2)) ** p)
    if np.any(np.abs(ref) > box):
        raise FloatingPointError("reference flow left the escape box")
    return disp.reshape(len(fields), P, M), jac.reshape(len(fields), P, M)


def stability_experiment(fields: Sequence[DriftField], reference: Optional[DriftField], sigma: float, p: float,
                         points, n_paths: int, seed: int, times, h: float = 1e-3,
                         batch: int = 250, workers: int = 1, labels=None,
                         box: float = DEFAULT_BOX) -> StabilityReport:
    """Monte Carlo estimates of the stability statistics of a drift sequence.

    For each field ``b^n``: ``max_x E[sup_r |phi^n_{0,r}(x) - phi_{0,r}(x)|^p]``
    (``phi`` the flow of ``reference``, by default the last, finest field) and ``max_x E[sup_u ||D phi^n_{0,u}(x)||^p]``,
    all on common noise. Paths are processed in batches; batches are merged in
    path-index order regardless of ``workers``.
    """
    if n_paths < 100:
        raise ValueError("stability_experiment needs at least 100 Monte Carlo paths")
    if p < 1:
        raise ValueError("p must be >= 1")
    times = _check_grid(times)
    if reference is None:
        reference = fields[-1]
    d = reference.dim
    pts = as_points(points, d)
    chunks = [range(i, min(i + batch, n_paths)) for i in range(0, n_paths, batch)]

    def run(idx):
        dW = wiener_batch(seed, idx, times, d)
        return _stability_batch(fields, reference, sigma, p, pts, times, dW, h, box)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    disp = np.concatenate([a for a, _ in parts], axis=1)
    jac = np.concatenate([b for _, b in parts], axis=1)
    dm, jm = disp.mean(axis=1), jac.mean(axis=1)  # (n_fields, M)
    ix, jx = np.argmax(dm, axis=1), np.argmax(jm, axis=1)
    r = np.arange(len(fields))
    se = lambda a, i: a.std(axis=1, ddof=1)[r, i] / np.sqrt(n_paths)
    return StabilityReport(
        labels=list(labels) if labels is not None else [f.name for f in fields],
        displacement=dm[r, ix], displacement_se=se(disp, ix),
        jacobian_moment=jm[r, jx], jacobian_moment_se=se(jac, jx),
        p=p, n_paths=n_paths, points=pts,
    )
