"""Drift vector fields, mollification, divergence and Hölder seminorm estimates.

Points are always handled as arrays of shape ``(M, d)``; evaluators return
``(M, d)`` for the field and ``(M,)`` for its divergence.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate


def as_points(x, d: int) -> np.ndarray:
    """Coerce scalars, ``(M,)`` (d=1) or ``(M, d)`` input to ``(M, d)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1) if d == 1 else x.reshape(1, -1)
    elif x.ndim == 1:
        x = x[:, None] if d == 1 else x.reshape(1, d)
    if x.shape[-1] != d:
        raise ValueError(f"expected points with trailing dimension {d}, got shape {x.shape}")
    return x.reshape(-1, d)


@dataclass(frozen=True)
class DriftField:
    """A drift ``b(t, x)`` on ``[0, T] x R^d``.

    ``func(t, x)`` maps ``(M, d)`` to ``(M, d)``. ``div`` is optional; when
    present it is treated as the analytic divergence. ``singular_points`` lists
    stagnation points where the field fails to be Lipschitz (used to locate
    non-unique characteristics). ``bound`` may be ``inf`` for diagnostic fields.
    """

    dim: int
    func: Callable
    div: Optional[Callable] = None
    alpha: float = 1.0
    bound: float = np.inf
    time_dependent: bool = False
    name: str = "field"
    singular_points: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 1)))
    domain: Optional[tuple] = None
    meta: dict = dc_field(default_factory=dict)

    def __call__(self, t, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        out = np.asarray(self.func(t, pts), dtype=float).reshape(pts.shape)
        if np.isnan(out).any():
            bad = pts[np.isnan(out).any(axis=1)][0]
            raise FloatingPointError(f"{self.name}: NaN drift at t={t}, x={bad}")
        return out

    def divergence(self, t, x, h: float = 1e-4) -> np.ndarray:
        return divergence(self, t, x, h)

    @property
    def has_div(self) -> bool:
        return self.div is not None


# ---------------------------------------------------------------------------
# concrete fields


def make_sqrt_drift(sign: int = 1) -> DriftField:
    """``b(x) = sign * 2 sgn(x) sqrt|x|`` in one dimension (sgn(0) = 0)."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    s = float(sign)

    def func(t, x):
        return s * 2.0 * np.sign(x) * np.sqrt(np.abs(x))

    def div(t, x):
        r = np.abs(x[:, 0])
        with np.errstate(divide="ignore"):
            return np.where(r > 0, s / np.sqrt(r), np.inf)

    return DriftField(
        dim=1, func=func, div=div, alpha=0.5, bound=np.inf,
        name=f"sqrt({sign:+d})", singular_points=np.zeros((1, 1)),
        meta={"kind": "sqrt", "sign": sign},
    )


def make_linear_drift(a, c=None) -> DriftField:
    """``b(x) = A x + c``; a scalar ``a`` gives a one-dimensional field."""
    A = np.atleast_2d(np.asarray(a, dtype=float))
    d = A.shape[0]
    c = np.zeros(d) if c is None else np.asarray(c, dtype=float).reshape(d)
    tr = float(np.trace(A))

    def func(t, x):
        return x @ A.T + c

    def div(t, x):
        return np.full(x.shape[0], tr)

    bound = float(np.linalg.norm(c)) if not A.any() else np.inf
    return DriftField(dim=d, func=func, div=div, alpha=1.0, bound=bound,
                      name="linear", meta={"kind": "linear", "A": A.tolist(), "c": c.tolist()})


def make_constant_drift(c) -> DriftField:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    f = make_linear_drift(np.zeros((c.size, c.size)), c)
    return replace(f, name="constant", meta={"kind": "constant", "c": c.tolist()})


def make_zero_drift(d: int = 1) -> DriftField:
    f = make_constant_drift(np.zeros(d))
    return replace(f, name="zero", bound=0.0, meta={"kind": "zero", "d": d})


def make_rotation_drift(omega: float = 1.0) -> DriftField:
    """Divergence-free rotation ``b(x, y) = omega * (-y, x)``."""
    A = omega * np.array([[0.0, -1.0], [1.0, 0.0]])
    f = make_linear_drift(A)
    return replace(f, name="rotation", meta={"kind": "rotation", "omega": omega})


def make_sqrt2d_drift(sign: int = -1, scale: float = 1.0) -> DriftField:
    """Bounded 1/2-Hölder field on R^2 with divergence in L^p for p < 2.

    ``b_i(x) = sign * sgn(x_i) sqrt|x_i| * exp(-|x|^2 / 2)``.
    """
    s = float(sign) * scale

    def func(t, x):
        g = np.exp(-0.5 * np.sum(x * x, axis=1))[:, None]
        return s * np.sign(x) * np.sqrt(np.abs(x)) * g

    def div(t, x):
        g = np.exp(-0.5 * np.sum(x * x, axis=1))
        r = np.abs(x)
        with np.errstate(divide="ignore"):
            core = np.where(r > 0, 0.5 / np.sqrt(r), np.inf)
        # d/dx_i [sgn sqrt|x_i| g] = g/(2 sqrt|x_i|) - x_i sgn(x_i) sqrt|x_i| g
        return s * g * np.sum(core - r * np.sqrt(r), axis=1)

    # sup |b| = exp(-1/4), attained at |x1| = |x2| = 1/2
    bound = abs(s) * np.exp(-0.25)
    return DriftField(dim=2, func=func, div=div, alpha=0.5, bound=float(bound),
                      name=f"sqrt2d({sign:+d})", singular_points=np.zeros((1, 2)),
                      meta={"kind": "sqrt2d", "sign": sign, "scale": scale})


def make_polynomial_drift_2d() -> DriftField:
    """``b(x, y) = (x^2 y, x y^3)``: a smooth test field with known divergence."""

    def func(t, x):
        X, Y = x[:, 0], x[:, 1]
        return np.stack([X * X * Y, X * Y ** 3], axis=1)

    def div(t, x):
        X, Y = x[:, 0], x[:, 1]
        return 2 * X * Y + 3 * X * Y * Y

    return DriftField(dim=2, func=func, div=div, name="poly2d", meta={"kind": "poly2d"})


# ---------------------------------------------------------------------------
# mollifier


def _transition(r):
    """Smooth step: 1 for r <= 1, 0 for r >= 2, C-infinity in between."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    out[r <= 1.0] = 1.0
    mid = (r > 1.0) & (r < 2.0)
    a = np.exp(-1.0 / (2.0 - r[mid]))
    b = np.exp(-1.0 / (r[mid] - 1.0))
    out[mid] = a / (a + b)
    return out


def _transition_deriv(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    mid = (r > 1.0) & (r < 2.0)
    u, v = 2.0 - r[mid], r[mid] - 1.0
    a, b = np.exp(-1.0 / u), np.exp(-1.0 / v)
    out[mid] = -(a * b) * (1.0 / u ** 2 + 1.0 / v ** 2) / (a + b) ** 2
    return out


@lru_cache(maxsize=None)
def plateau_mass(d: int) -> float:
    """Lebesgue mass of the unnormalised plateau bump in dimension ``d``."""
    if d == 1:
        return 3.0  # 2 * (1 + 1/2) by the symmetry psi(r) + psi(3 - r) = 1
    shell, _ = integrate.quad(lambda r: _transition(r) * r ** (d - 1), 1.0, 2.0,
                              epsabs=1e-14, epsrel=1e-14, limit=200)
    area = 2 * np.pi ** (d / 2) / _gamma(d / 2)
    return float(area * (1.0 / d + shell))


def _gamma(x):
    from math import gamma
    return gamma(x)


def _gl_panels(n_panels: int, n_per_panel: int):
    nodes, weights = np.polynomial.legendre.leggauss(n_per_panel)
    edges = np.linspace(-2.0, 2.0, n_panels + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs.append(0.5 * (hi - lo) * nodes + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * weights)
    return np.concatenate(xs), np.concatenate(ws)


@dataclass(frozen=True)
class MollifierKernel:
    """``theta_eps(x) = eps^-d theta(x / eps)``, theta the normalised plateau bump.

    ``nodes_per_axis`` Gauss-Legendre nodes cover the support ``[-2 eps, 2 eps]``
    per axis (composite rule, 4 panels aligned with the plateau edges in 1-d).
    """

    eps: float
    dim: int = 1
    nodes_per_axis: int = 64

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("mollifier scale must be positive")
        if self.nodes_per_axis % 4:
            raise ValueError("nodes_per_axis must be a multiple of 4")

    @property
    def support_radius(self) -> float:
        return 2.0 * self.eps

    def __call__(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        r = np.linalg.norm(pts, axis=1) / self.eps
        return _transition(r) / (plateau_mass(self.dim) * self.eps ** self.dim)

    def gradient(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        rr = np.linalg.norm(pts, axis=1)
        r = rr / self.eps
        dpsi = _transition_deriv(r) / (plateau_mass(self.dim) * self.eps ** (self.dim + 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rr[:, None] > 0, pts / rr[:, None], 0.0)
        return dpsi[:, None] * unit

    def mass(self) -> float:
        """Continuous mass of the kernel by adaptive radial quadrature."""
        e, d = self.eps, self.dim
        if d == 1:
            val, _ = integrate.quad(lambda s: float(self(np.array([s]))[0]), -2 * e, 2 * e,
                                    points=[-e, e], epsabs=1e-13, epsrel=1e-12, limit=400)
            return val
        area = 2 * np.pi ** (d / 2) / _gamma(d / 2)
        val, _ = integrate.quad(lambda r: float(self(np.array([[r] + [0.0] * (d - 1)]))[0]) * r ** (d - 1),
                                0, 2 * e, points=[e], epsabs=1e-13, epsrel=1e-12, limit=400)
        return area * val

    @property
    def quadrature(self):
        """Offsets ``z`` (K, d), kernel weights and kernel-gradient weights.

        Kernel weights are renormalised to sum to one, so constants are
        reproduced exactly; the node set is symmetric, so odd moments vanish.
        """
        return _kernel_rule(self.eps, self.dim, self.nodes_per_axis)


@lru_cache(maxsize=32)
def _kernel_rule(eps: float, d: int, n: int):
    x1, w1 = _gl_panels(4, n // 4)
    x1, w1 = x1 * eps, w1 * eps
    grids = np.meshgrid(*([x1] * d), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=1)
    wv = np.ones(z.shape[0])
    for g in np.meshgrid(*([w1] * d), indexing="ij"):
        wv = wv * g.ravel()
    k = MollifierKernel(eps, d, n)
    vals = k(z)
    keep = vals > 0
    z, wv = z[keep], wv[keep]
    wk = wv * vals[keep]
    scale = wk.sum()
    wk = wk / scale
    wg = wv[:, None] * k.gradient(z) / scale
    z.setflags(write=False)
    wk.setflags(write=False)
    wg.setflags(write=False)
    return z, wk, wg


def _convolve(field: DriftField, kernel: MollifierKernel, t, pts: np.ndarray, chunk: int = 1 << 21):
    z, wk, wg = kernel.quadrature
    M, d = pts.shape
    K = z.shape[0]
    val = np.empty((M, d))
    div = np.empty(M)
    step = max(1, chunk // K)
    for i in range(0, M, step):
        p = pts[i:i + step]
        y = (p[:, None, :] - z[None, :, :]).reshape(-1, d)
        by = field(t, y).reshape(p.shape[0], K, d)
        val[i:i + step] = np.einsum("mkd,k->md", by, wk)
        div[i:i + step] = np.einsum("mkd,kd->m", by, wg)
    return val, div


def mollify(field: DriftField, kernel: MollifierKernel | float, domain=None) -> DriftField:
    """Convolve ``field`` with the mollifier; the divergence uses grad(theta_eps).

    ``domain`` (or ``field.domain``) is a box ``(lo, hi)`` on which the input is
    trusted; evaluating closer than ``2 eps`` to its boundary raises.
    """
    if not isinstance(kernel, MollifierKernel):
        kernel = MollifierKernel(float(kernel), field.dim)
    if kernel.dim != field.dim:
        raise ValueError("kernel and field dimensions differ")
    dom = domain if domain is not None else field.domain
    pad = kernel.support_radius
    if dom is not None:
        lo, hi = (np.broadcast_to(np.asarray(v, float), (field.dim,)) for v in dom)
        if np.any(hi - lo <= 2 * pad):
            raise ValueError(f"padding violation: domain narrower than 4*eps={2 * pad}")

    def check(pts):
        if dom is not None and (np.any(pts - pad < lo) or np.any(pts + pad > hi)):
            raise ValueError(f"padding violation: evaluation within 2*eps={pad} of the domain edge")

    def func(t, x):
        check(x)
        return _convolve(field, kernel, t, x)[0]

    def div(t, x):
        check(x)
        return _convolve(field, kernel, t, x)[1]

    meta = dict(field.meta, eps=kernel.eps, base=field.name)
    return DriftField(dim=field.dim, func=func, div=div, alpha=field.alpha, bound=field.bound,
                      time_dependent=field.time_dependent, name=f"{field.name}*eps={kernel.eps:g}",
                      singular_points=np.zeros((0, field.dim)), domain=None, meta=meta)


def tabulate(field: DriftField, lo: float, hi: float, n: int = 200001) -> DriftField:
    """Piecewise-linear table of a time-independent 1-d field and its divergence.

    Outside ``[lo, hi]`` the original evaluator is used.
    """
    if field.dim != 1 or field.time_dependent:
        raise ValueError("tabulation supports time-independent 1-d fields only")
    xs = np.linspace(lo, hi, n)
    vals = field(0.0, xs)[:, 0]
    divs = divergence(field, 0.0, xs)

    def func(t, x):
        v = np.interp(x[:, 0], xs, vals)
        out = (x[:, 0] < lo) | (x[:, 0] > hi)
        if out.any():
            v[out] = field(t, x[out])[:, 0]
        return v[:, None]

    def div(t, x):
        v = np.interp(x[:, 0], xs, divs)
        out = (x[:, 0] < lo) | (x[:, 0] > hi)
        if out.any():
            v[out] = divergence(field, t, x[out])
        return v

    return replace(field, func=func, div=div, name=field.name + "[tab]",
                   meta=dict(field.meta, table=(lo, hi, n)))


def _bilinear(tab, lo, h, pts):
    n = tab.shape[0]
    u = (pts - lo) / h
    i = np.clip(np.floor(u).astype(int), 0, n - 2)
    f = u - i
    a, b = i[:, 0], i[:, 1]
    fx, fy = f[:, 0], f[:, 1]
    return ((1 - fx) * (1 - fy) * tab[a, b] + fx * (1 - fy) * tab[a + 1, b]
            + (1 - fx) * fy * tab[a, b + 1] + fx * fy * tab[a + 1, b + 1])


def mollify_on_grid(field: DriftField, eps: float, lo: float, hi: float, h: float) -> DriftField:
    """2-d mollification by FFT convolution on a uniform grid, read back bilinearly.

    The kernel is sampled on the same grid and its weights renormalised to
    unit sum, so constants are kept exactly. The table is trusted on
    ``[lo + 2 eps, hi - 2 eps]^2``; outside it the field is the unmollified
    input (small by construction for the decaying test fields).
    """
    from scipy.signal import fftconvolve

    if field.dim != 2 or field.time_dependent:
        raise ValueError("grid mollification supports time-independent 2-d fields")
    n = int(round((hi - lo) / h)) + 1
    xs = lo + h * np.arange(n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    B = field(0.0, np.column_stack([X.ravel(), Y.ravel()])).reshape(n, n, 2)
    m = int(np.ceil(2 * eps / h))
    zs = h * np.arange(-m, m + 1)
    ZX, ZY = np.meshgrid(zs, zs, indexing="ij")
    Z = np.column_stack([ZX.ravel(), ZY.ravel()])
    kern = MollifierKernel(eps, 2)
    w = kern(Z)
    scale = w.sum()
    K = (w / scale).reshape(ZX.shape)
    G = (kern.gradient(Z) / scale).reshape(ZX.shape + (2,))
    val = np.stack([fftconvolve(B[..., i], K, mode="same") for i in range(2)], axis=-1)
    div = sum(fftconvolve(B[..., i], G[..., i], mode="same") for i in range(2))
    inner = (lo + 2 * eps, hi - 2 * eps)

    def outside(pts):
        return np.any((pts < inner[0]) | (pts > inner[1]), axis=1)

    def func(t, x):
        out = np.column_stack([_bilinear(val[..., i], lo, h, x) for i in range(2)])
        o = outside(x)
        if o.any():
            out[o] = field(t, x[o])
        return out

    def dfun(t, x):
        out = _bilinear(div, lo, h, x)
        o = outside(x)
        if o.any():
            out[o] = divergence(field, t, x[o])
        return out

    meta = dict(field.meta, eps=eps, base=field.name, table=(lo, hi, h))
    return DriftField(dim=2, func=func, div=dfun, alpha=field.alpha, bound=field.bound,
                      name=f"{field.name}*eps={eps:g}[grid]", singular_points=np.zeros((0, 2)), meta=meta)


def divergence(field: DriftField, t, x, h: float = 1e-4) -> np.ndarray:
    """Analytic divergence when declared, else central differences with step ``h``.

    At declared singular points the analytic divergence is non-finite; that
    value is returned as-is for the caller to mask.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    pts = as_points(x, field.dim)
    if field.div is not None:
        return np.asarray(field.div(t, pts), dtype=float).reshape(pts.shape[0])
    total = np.zeros(pts.shape[0])
    for i in range(field.dim):
        e = np.zeros(field.dim)
        e[i] = h
        total += (field(t, pts + e)[:, i] - field(t, pts - e)[:, i]) / (2 * h)
    return total


# ---------------------------------------------------------------------------
# Hölder seminorm


@dataclass
class HolderReport:
    alpha: float
    seminorm: float
    argmax: tuple  # (t, x, y)
    n_points: int
    n_times: int
    subsampled: bool = False


def estimate_holder_seminorm(f, alpha: float, xs, ts=(0.0,), max_points: int = 20000,
                             chunk: int = 1 << 22) -> HolderReport:
    """Max of ``|f(t,x) - f(t,y)| / |x-y|^alpha`` over all sampled pairs and times.

    ``f`` is a :class:`DriftField` or a callable ``f(t, x)`` on ``(M, d)``
    points returning scalars or vectors. On more than ``max_points`` points an
    evenly strided subsample is scanned.
    """
    if not (0 < alpha <= 1):
        raise ValueError("alpha must lie in (0, 1]")
    xs = np.asarray(xs, dtype=float)
    pts = xs[:, None] if xs.ndim == 1 else xs
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] < 2:
        raise ValueError("degenerate grid: need at least two distinct points")
    subsampled = False
    if pts.shape[0] > max_points:
        idx = np.linspace(0, pts.shape[0] - 1, max_points).round().astype(int)
        pts = pts[np.unique(idx)]
        subsampled = True
    M = pts.shape[0]
    best, arg = 0.0, (ts[0], pts[0], pts[0])
    step = max(1, chunk // M)
    for t in ts:
        vals = np.asarray(f(t, pts), dtype=float).reshape(M, -1)
        for i in range(0, M, step):
            dx = np.linalg.norm(pts[i:i + step, None, :] - pts[None, :, :], axis=2)
            df = np.linalg.norm(vals[i:i + step, None, :] - vals[None, :, :], axis=2)
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(dx > 0, df / dx ** alpha, 0.0)
            k = int(np.argmax(q))
            if q.flat[k] > best:
                a, b = divmod(k, M)
                best = float(q.flat[k])
                arg = (t, pts[i + a].copy(), pts[b].copy())
    return HolderReport(alpha=alpha, seminorm=best, argmax=arg, n_points=M,
                        n_times=len(ts), subsampled=subsampled)


# ---------------------------------------------------------------------------
# config parsing


def field_from_spec(spec: dict) -> DriftField:
    """Build a field from a tag tree such as ``{kind: sqrt, sign: -1, eps: 0.05}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    eps = spec.pop("eps", None)
    allowed = {
        "sqrt": {"sign"}, "linear": {"a", "c"}, "constant": {"c"}, "zero": {"d"},
        "rotation": {"omega"}, "sqrt2d": {"sign", "scale"}, "poly2d": set(),
    }
    if kind not in allowed:
        raise ValueError(f"unknown field kind {kind!r}")
    extra = set(spec) - allowed[kind]
    if extra:
        raise ValueError(f"field.{sorted(extra)[0]}: unknown key for kind {kind!r}")
    builder = {
        "sqrt": lambda: make_sqrt_drift(int(spec.get("sign", 1))),
        "linear": lambda: make_linear_drift(spec.get("a", 1.0), spec.get("c")),
        "constant": lambda: make_constant_drift(spec.get("c", 1.0)),
        "zero": lambda: make_zero_drift(int(spec.get("d", 1))),
        "rotation": lambda: make_rotation_drift(float(spec.get("omega", 1.0))),
        "sqrt2d": lambda: make_sqrt2d_drift(int(spec.get("sign", -1)), float(spec.get("scale", 1.0))),
        "poly2d": make_polynomial_drift_2d,
    }[kind]
    f = builder()
    if eps is not None:
        f = mollify(f, MollifierKernel(float(eps), f.dim))
    return f
