"""Backward parabolic problems on truncated boxes and the Zvonkin identity.

Both equations are of the form

    dU/dt + b . grad U + (sigma^2 / 2) Lap U - lam U = f,   U(T) = 0,

solved in reversed time ``tau = T - t``: diffusion and ``lam`` implicitly
(sparse LU, factored once), drift explicitly with upwinding, homogeneous
Neumann conditions through reflecting ghost nodes. ``f = -b_i`` gives the
components of U; ``f = div b^eps`` with ``sigma = 1`` gives F^eps.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import DriftField, as_points, divergence
from .io import write_csv
from .stochastic_flow import WienerPath, euler_forward


class CFLViolation(ValueError):
    pass


@dataclass(frozen=True)
class BoxGrid:
    """Uniform tensor grid on ``[lo, hi]^d`` with ``n`` nodes per axis."""

    lo: float
    hi: float
    n: int
    dim: int = 1

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def shape(self):
        return (self.n,) * self.dim

    def points(self) -> np.ndarray:
        g = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.column_stack([a.ravel() for a in g])

    @staticmethod
    def from_spacing(lo, hi, dx, dim=1) -> "BoxGrid":
        return BoxGrid(float(lo), float(hi), int(round((hi - lo) / dx)) + 1, dim)


@dataclass
class ParabolicSolution:
    grid: BoxGrid
    times: np.ndarray  # ascending, times[-1] = T
    values: np.ndarray  # (n_t, *grid.shape, m) with m components
    lam: float
    sigma: float
    boundary: str = "neumann"
    meta: dict = dc_field(default_factory=dict)

    @property
    def n_components(self) -> int:
        return self.values.shape[-1]

    def gradient(self, k: Optional[int] = None) -> np.ndarray:
        """Central differences (one-sided at the box edge); shape ``(..., m, d)``."""
        v = self.values if k is None else self.values[k]
        off = 0 if k is not None else 1
        parts = np.gradient(v, self.grid.h, axis=tuple(range(off, off + self.grid.dim)))
        parts = parts if isinstance(parts, (list, tuple)) else [parts]
        return np.stack(parts, axis=-1)

    def hessian(self, k: int) -> np.ndarray:
        g = self.gradient(k)  # (*shape, m, d)
        d = self.grid.dim
        rows = []
        for j in range(d):
            parts = np.gradient(g[..., j], self.grid.h, axis=tuple(range(d)))
            parts = parts if isinstance(parts, (list, tuple)) else [parts]
            rows.append(np.stack(parts, axis=-1))
        return np.stack(rows, axis=-2)

    def interp(self, k: int, x, which: str = "value") -> np.ndarray:
        """Linear (d=1) or bilinear (d=2) interpolation of U or grad U at time node k."""
        pts = as_points(x, self.grid.dim)
        src = self.values[k] if which == "value" else self.gradient(k).reshape(self.grid.shape + (-1,))
        return _interp_grid(src, self.grid, pts)

    def to_csv(self, path) -> str:
        m, d = self.n_components, self.grid.dim
        pts = self.grid.points()
        header = ["t"] + [f"x_{i}" for i in range(d)] + [f"U_{i}" for i in range(m)] + ["grad_norm"]
        rows = []
        for k, t in enumerate(self.times):
            vals = self.values[k].reshape(-1, m)
            gn = _opnorm(self.gradient(k)).reshape(-1)
            for j in range(pts.shape[0]):
                rows.append([t, *pts[j], *vals[j], gn[j]])
        return write_csv(path, header, rows)


def _interp_grid(src, grid, pts):
    u = (pts - grid.lo) / grid.h
    i = np.clip(np.floor(u).astype(int), 0, grid.n - 2)
    f = u - i
    if grid.dim == 1:
        a = i[:, 0]
        w = f[:, 0][:, None]
        return (1 - w) * src[a] + w * src[a + 1]
    a, b = i[:, 0], i[:, 1]
    fx, fy = f[:, 0][:, None], f[:, 1][:, None]
    return ((1 - fx) * (1 - fy) * src[a, b] + fx * (1 - fy) * src[a + 1, b]
            + (1 - fx) * fy * src[a, b + 1] + fx * fy * src[a + 1, b + 1])


def _opnorm(G):
    """Euclidean operator norm of the trailing ``(m, d)`` block."""
    m, d = G.shape[-2:]
    if m == 1 or d == 1:
        return np.sqrt(np.sum(G**2, axis=(-2, -1)))
    return np.linalg.norm(G, ord=2, axis=(-2, -1))


def _laplacian_1d(n, h):
    main = -2.0 * np.ones(n)
    up = np.ones(n - 1)
    lo = np.ones(n - 1)
    up[0] = 2.0  # reflecting ghost U_{-1} = U_1
    lo[-1] = 2.0  # U_{n} = U_{n-2}
    return sp.diags([lo, main, up], [-1, 0, 1], format="csr") / h**2


def _laplacian(grid):
    L1 = _laplacian_1d(grid.n, grid.h)
    if grid.dim == 1:
        return L1
    I = sp.identity(grid.n, format="csr")
    return (sp.kron(L1, I) + sp.kron(I, L1)).tocsr()


def _upwind(U, B, h, dim):
    """``b . grad U`` with the upwind side for ``dU/dtau = b . grad U`` (ghost-reflected)."""
    out = np.zeros_like(U)
    for i in range(dim):
        pad = [(0, 0)] * U.ndim
        pad[i] = (1, 1)
        P = np.pad(U, pad, mode="reflect")
        sl = lambda a, b: tuple(slice(a, b if b != 0 else None) if j == i else slice(None) for j in range(U.ndim))
        fwd = (P[sl(2, 0)] - P[sl(1, -1)]) / h
        bwd = (P[sl(1, -1)] - P[sl(0, -2)]) / h
        bi = B[..., i][..., None] if U.ndim > dim else B[..., i]
        out += np.where(bi > 0, bi * fwd, bi * bwd)
    return out


def _march(grid, B, src, lam, sigma, T, dt, src_time=None):
    """March ``dU/dtau = b.grad U + sigma^2/2 Lap U - lam U - f`` from ``tau = 0``.

    ``B`` has shape ``(*grid.shape, d)``, ``src`` ``(*grid.shape, m)``. Returns
    values on ascending physical times.
    """
    n_steps = int(round(T / dt))
    dt = T / n_steps
    cfl = float(np.max(np.sum(np.abs(B), axis=-1)) * dt / grid.h)
    if cfl > 1.0:
        raise CFLViolation(f"explicit drift CFL ratio {cfl:.3f} > 1 (dt={dt:g}, dx={grid.h:g})")
    N = int(np.prod(grid.shape))
    A = (sp.identity(N, format="csc") * (1.0 + lam * dt) - dt * 0.5 * sigma**2 * _laplacian(grid)).tocsc()
    lu = splu(A)
    m = src.shape[-1]
    U = np.zeros(grid.shape + (m,))
    out = [U.copy()]
    for _ in range(n_steps):
        rhs = U + dt * (_upwind(U, B, grid.h, grid.dim) - src)
        U = lu.solve(rhs.reshape(N, m)).reshape(U.shape)
        out.append(U.copy())
    values = np.stack(out[::-1])
    times = np.linspace(0.0, T, n_steps + 1)
    return times, values, cfl


def solve_backward_U(field: DriftField, lam: float, sigma: float, grid: BoxGrid, T: float = 1.0,
                     dt: Optional[float] = None) -> ParabolicSolution:
    """``dU/dt + b . grad U + (sigma^2/2) Lap U = -b + lam U``, ``U(T) = 0``, one solve per component."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if field.time_dependent:
        raise ValueError("time-dependent drifts are not supported by the PDE solver")
    if grid.dim != field.dim or grid.dim > 2:
        raise ValueError("grid dimension must match the field and be <= 2")
    pts = grid.points()
    B = field(0.0, pts).reshape(grid.shape + (grid.dim,))
    if dt is None:
        bmax = float(np.max(np.sum(np.abs(B), axis=-1)))
        dt = min(1e-2, 0.9 * grid.h / bmax) if bmax > 0 else 1e-2
    times, values, cfl = _march(grid, B, -B, lam, sigma, T, dt)
    return ParabolicSolution(grid, times, values, lam, sigma, "neumann",
                             {"cfl": cfl, "field": field.name, "problem": "U"})


def solve_F_eps(field: DriftField, grid: BoxGrid, T: float = 1.0, dt: Optional[float] = None,
                sigma: float = 1.0) -> ParabolicSolution:
    """``dF/dt + (1/2) Lap F + grad F . b^eps = div b^eps``, ``F(T) = 0`` (scalar)."""
    if grid.dim != field.dim or grid.dim > 2:
        raise ValueError("grid dimension must match the field and be <= 2")
    pts = grid.points()
    B = field(0.0, pts).reshape(grid.shape + (grid.dim,))
    D = divergence(field, 0.0, pts).reshape(grid.shape + (1,))
    if not np.all(np.isfinite(D)):
        raise ValueError("divergence is not finite on the grid; mollify the field first")
    if dt is None:
        bmax = float(np.max(np.sum(np.abs(B), axis=-1)))
        dt = min(1e-2, 0.9 * grid.h / bmax) if bmax > 0 else 1e-2
    times, values, cfl = _march(grid, B, D, 0.0, sigma, T, dt)
    return ParabolicSolution(grid, times, values, 0.0, sigma, "neumann",
                             {"cfl": cfl, "field": field.name, "problem": "F"})


def sobolev_norms(sol: ParabolicSolution, p: float = 2.0, window=None) -> dict:
    """Per-time sup norm and ``W^{1,p}`` norm on the box (or an inner window)."""
    g = sol.grid
    ax = g.axis
    m = np.ones(g.n, dtype=bool) if window is None else (ax >= window[0]) & (ax <= window[1])
    sel = np.ix_(*([m] * g.dim))
    cell = g.h ** g.dim
    sup, w1p = [], []
    for k in range(sol.times.size):
        V = sol.values[k][sel]
        G = sol.gradient(k)[sel]
        sup.append(float(np.max(np.abs(V))))
        lp = (np.sum(np.abs(V) ** p) * cell) ** (1 / p)
        glp = (np.sum(_opnorm(G) ** p) * cell) ** (1 / p)
        w1p.append(lp + glp)
    return {"times": sol.times, "sup": np.array(sup), "w1p": np.array(w1p), "p": p}


# ---------------------------------------------------------------------------
# gradient bound


@dataclass
class GradientBoundReport:
    lams: np.ndarray
    sup_grad: np.ndarray
    threshold: Optional[float]  # first lambda in the scan with sup <= bound
    bound: float
    window: tuple
    margin: Optional[np.ndarray] = None  # per lambda, max difference on the window between two box sizes

    @property
    def passed(self) -> bool:
        return self.threshold is not None

    def to_csv(self, path) -> str:
        return write_csv(path, ["lambda", "sup_grad", "pass"],
                         ((l, s, s <= self.bound) for l, s in zip(self.lams, self.sup_grad)))


def gradient_sup(sol: ParabolicSolution, window=None) -> float:
    """Grid sup over times and (inner) points of the operator norm of grad U."""
    G = _opnorm(sol.gradient())  # (n_t, *shape)
    if window is not None:
        ax = sol.grid.axis
        m = (ax >= window[0]) & (ax <= window[1])
        G = G[(slice(None),) + np.ix_(*([m] * sol.grid.dim))]
    return float(np.max(G))


def gradient_bound_check(field: DriftField, sigma: float, grid: BoxGrid, lams: Sequence[float] = (1, 10, 100),
                         T: float = 1.0, dt: Optional[float] = None, window=(-2.0, 2.0), bound: float = 0.5,
                         margin_grid: Optional[BoxGrid] = None, workers: int = 1) -> GradientBoundReport:
    """Scan lambda; report grid sup |grad U| per value and the first lambda meeting ``bound``.

    With ``margin_grid`` (a larger box, same spacing) the boundary influence is
    measured per lambda as the max difference of U(0) on the window.
    """
    lams = np.array(sorted(lams), dtype=float)

    def one(lam):
        return solve_backward_U(field, lam, sigma, grid, T, dt)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            sols = list(ex.map(one, lams))
    else:
        sols = [one(l) for l in lams]
    sups = np.array([gradient_sup(s, window) for s in sols])
    ok = np.nonzero(sups <= bound)[0]
    margin = None
    if margin_grid is not None:
        # boundary influence on the window, one larger-box solve per lambda
        pts = grid.points()
        inner = np.all((pts >= window[0]) & (pts <= window[1]), axis=1)
        margin = []
        for lam, sol in zip(lams, sols):
            big = solve_backward_U(field, lam, sigma, margin_grid, T, dt)
            a = sol.values[0].reshape(-1, sol.n_components)[inner]
            b = _interp_grid(big.values[0], margin_grid, pts[inner])
            margin.append(float(np.max(np.abs(a - b))))
        margin = np.array(margin)
    return GradientBoundReport(lams, sups, float(lams[ok[0]]) if ok.size else None, bound, tuple(window), margin)


# ---------------------------------------------------------------------------
# Zvonkin identity along simulated paths


@dataclass
class ZvonkinReport:
    per_path: np.ndarray  # max over nodes of |residual|
    terminal: np.ndarray  # signed residual at T
    n_paths: int
    dropped: int

    @property
    def max(self) -> float:
        return float(self.per_path.max()) if self.per_path.size else float("nan")

    @property
    def mean(self) -> float:
        return float(self.per_path.mean()) if self.per_path.size else float("nan")

    @property
    def terminal_bias(self) -> float:
        return float(self.terminal.mean()) if self.terminal.size else float("nan")


def zvonkin_residual(field: DriftField, lam: float, sigma: float, U: ParabolicSolution,
                     paths: Sequence[WienerPath], x0) -> ZvonkinReport:
    """Residual of ``X = x0 + U(0,x0) - U(t,X) + int lam U + sigma int grad U dW + sigma W``.

    ``X`` is the Euler path of ``(field, sigma)``; time integrals are
    left-point sums on the path grid, U and grad U are interpolated in space.
    The PDE time grid must contain the path nodes. Paths leaving the PDE box
    are dropped and counted.
    """
    if field.dim != 1:
        raise ValueError("Zvonkin residual is implemented in one dimension")
    if not paths:
        raise ValueError("need at least one path")
    x0 = float(np.ravel(x0)[0])
    times = paths[0].times
    for pth in paths:
        if pth.times.shape != times.shape or not np.array_equal(pth.times, times):
            raise ValueError("all paths must share one time grid")
    n_steps = times.size - 1
    stride = (U.times.size - 1) / n_steps
    if abs(stride - round(stride)) > 1e-9 or abs(U.times[-1] - times[-1]) > 1e-12:
        raise ValueError("PDE time grid does not contain the path nodes")
    idx = np.arange(n_steps + 1) * int(round(stride))
    dW = np.stack([pth.increments for pth in paths])  # (P, N, 1)
    traj, esc = euler_forward(field, sigma, np.full((len(paths), 1), x0), times, dW)
    X = traj[:, :, 0]  # (N+1, P)
    keep = (esc < 0) & (X.min(axis=0) >= U.grid.lo) & (X.max(axis=0) <= U.grid.hi)
    X = X[:, keep]
    Uv = np.stack([U.interp(k, X[j], "value")[:, 0] for j, k in enumerate(idx)])
    Gv = np.stack([U.interp(k, X[j], "grad")[:, 0] for j, k in enumerate(idx)])
    dt = np.diff(times)[:, None]
    inc = dW[keep, :, 0].T  # (N, P')
    W = np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)])
    cum = lambda a: np.vstack([np.zeros((1, a.shape[1])), np.cumsum(a, axis=0)])
    rhs = x0 + Uv[0] - Uv + cum(lam * Uv[:-1] * dt) + sigma * cum(Gv[:-1] * inc) + sigma * W
    r = X - rhs
    return ZvonkinReport(np.max(np.abs(r), axis=0), r[-1], len(paths), int((~keep).sum()))
