"""Boundary layers, strong traces on the hyperbolic boundary and weak normal traces.

The domain is the rectangle ``[0, L'] x [0, L'']``. The hyperbolic boundary
``x' in {0, L'}`` carries no boundary condition; its traces are extracted
along inward deformations. The Dirichlet boundary ``x'' in {0, L''}`` is
checked against the imposed data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import FieldPath, write_csv
from .kinetic import TestFunction
from .model import ModelSpec, kruzhkov_fields
from .noise import NoisePath

__all__ = [
    "ResolutionError", "BoundaryLayer", "DMField", "translation", "graph_deformation",
    "TraceRecord", "strong_trace_gamma_prime", "chi_gap", "dirichlet_trace_check",
    "WeakTrace", "weak_normal_trace", "gauss_green", "dirichlet_condition_functional",
    "layer_diagnostic",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


class ResolutionError(ValueError):
    """A boundary layer is thinner than the grid can resolve."""


# -- boundary layers ------------------------------------------------------------

Face = tuple[int, int]          # (axis, side) with side 0 = lower, 1 = upper


@dataclass(frozen=True)
class BoundaryLayer:
    """``zeta_delta = min(delta, h) / delta`` with ``h`` the distance to a boundary piece.

    Parameters
    ----------
    delta : float
        Layer width.
    lower, upper : sequence of float
        Box corners; any dimension.
    faces : sequence of (axis, side)
        The boundary piece, a union of box faces.
    """

    delta: float
    lower: tuple
    upper: tuple
    faces: tuple

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("layer width must be positive")
        ext = np.subtract(self.upper, self.lower)
        for axis, side in self.faces:
            if self.delta > 0.5 * ext[axis]:
                raise ValueError("layer wider than half the box")

    @classmethod
    def gamma_prime(cls, delta, lengths=(1.0, 1.0)):
        """Layer along the hyperbolic boundary ``x' in {0, L'}``."""
        return cls(delta, (0.0, 0.0), tuple(lengths), ((0, 0), (0, 1)))

    @classmethod
    def gamma_dprime(cls, delta, lengths=(1.0, 1.0)):
        """Layer along the Dirichlet boundary ``x'' in {0, L''}``."""
        return cls(delta, (0.0, 0.0), tuple(lengths), ((1, 0), (1, 1)))

    @classmethod
    def whole(cls, delta, lower, upper):
        dim = len(lower)
        return cls(delta, tuple(lower), tuple(upper),
                   tuple((a, s) for a in range(dim) for s in (0, 1)))

    def with_delta(self, delta) -> "BoundaryLayer":
        return BoundaryLayer(delta, self.lower, self.upper, self.faces)

    def level(self, x):
        """Distance ``h`` to the piece; ``x`` has a trailing coordinate axis."""
        x = np.asarray(x, float)
        d = [x[..., a] - self.lower[a] if s == 0 else self.upper[a] - x[..., a]
             for a, s in self.faces]
        return np.min(d, axis=0)

    def zeta(self, x):
        return np.minimum(self.delta, self.level(x)) / self.delta

    def grad_zeta(self, x):
        """``grad zeta``: ``grad h / delta`` inside the layer, zero outside."""
        x = np.asarray(x, float)
        d = np.stack([x[..., a] - self.lower[a] if s == 0 else self.upper[a] - x[..., a]
                      for a, s in self.faces])
        nearest = np.argmin(d, axis=0)
        inside = d.min(axis=0) < self.delta
        g = np.zeros(x.shape)
        for i, (a, s) in enumerate(self.faces):
            g[..., a] += np.where((nearest == i) & inside, (1.0 if s == 0 else -1.0) / self.delta, 0.0)
        return g

    def piece_area(self) -> float:
        ext = np.subtract(self.upper, self.lower)
        return float(sum(np.prod(np.delete(ext, a)) for a, _ in self.faces))

    def total_variation(self, points: int = 64) -> float:
        """``int |grad zeta| dx`` by exact integration of the piecewise-linear profile.

        Each face strip is integrated along its normal on a grid containing
        the kink at ``delta``; with corners split along the diagonals the
        cross-sections shrink linearly and the integral is exact.
        """
        total = 0.0
        for face in self.faces:
            t = np.unique(np.concatenate([np.linspace(0.0, self.delta, points),
                                          np.linspace(self.delta, self._depth(face), points)]))
            cross = self._cross_section(face, t)
            # |d zeta / dh| = 1/delta on [0, delta); trapezoid is exact on linear cross sections
            slope = np.where(t[:-1] < self.delta, 1.0 / self.delta, 0.0)
            total += float(np.sum(slope * 0.5 * (cross[:-1] + cross[1:]) * np.diff(t)))
        return total

    # strip geometry: points whose nearest listed face is `face`
    def _depth(self, face):
        a, _ = face
        return 0.5 * (self.upper[a] - self.lower[a])

    def _bounds(self, face, t):
        """Cross-section box of the strip of ``face`` at normal distance ``t``."""
        a, _ = face
        listed = set(self.faces)
        lo, hi = [], []
        for j in range(len(self.lower)):
            if j == a:
                continue
            lo.append(self.lower[j] + (t if (j, 0) in listed else 0.0))
            hi.append(self.upper[j] - (t if (j, 1) in listed else 0.0))
        return lo, hi

    def _cross_section(self, face, t):
        lo, hi = self._bounds(face, np.asarray(t, float))
        out = np.ones_like(np.asarray(t, float))
        for l, h in zip(lo, hi):
            out = out * np.maximum(np.asarray(h) - np.asarray(l), 0.0)
        return out

    def strip_quadrature(self, face, depth: float):
        """Nodes and weights exact for polynomials on the strip ``0 <= h < depth``."""
        a, s = face
        dim = len(self.lower)
        tn = 0.5 * depth * (_GL_X + 1.0)
        tw = 0.5 * depth * _GL_W
        nodes, weights = [], []
        for t, w in zip(tn, tw):
            lo, hi = self._bounds(face, t)
            grids = [0.5 * (h - l) * (_GL_X + 1.0) + l for l, h in zip(lo, hi)]
            ws = [0.5 * (h - l) * _GL_W for l, h in zip(lo, hi)]
            mesh = np.meshgrid(*grids, indexing="ij") if grids else []
            wmesh = np.ones(()) * w
            for wj in ws:
                wmesh = np.multiply.outer(wmesh, wj)
            pts = np.empty(wmesh.shape + (dim,))
            pts[..., a] = self.lower[a] + t if s == 0 else self.upper[a] - t
            others = [j for j in range(dim) if j != a]
            for j, m in zip(others, mesh):
                pts[..., j] = m
            nodes.append(pts.reshape(-1, dim))
            weights.append(np.ravel(wmesh))
        return np.concatenate(nodes), np.concatenate(weights)


# -- deformations of the hyperbolic boundary -------------------------------------

Deformation = Callable[[float, np.ndarray], np.ndarray]


def translation(s: float, x2: np.ndarray) -> np.ndarray:
    """Inward translation by ``s``: depth ``s`` at every boundary point."""
    return np.full(np.shape(x2), float(s))


def graph_deformation(s: float, x2: np.ndarray, length: float = 1.0) -> np.ndarray:
    """Graph deformation with depth ``s (1 + 0.5 sin(pi x''/L''))``."""
    return s * (1.0 + 0.5 * np.sin(np.pi * np.asarray(x2) / length))


def _sample_at_depth(values, x1, depth, side):
    """Linear interpolation of ``values[..., n1, n2]`` at ``x' = depth`` (or ``L' - depth``).

    ``depth`` has shape ``(n2,)``; points beyond the outermost cell centre use
    that centre's value.
    """
    h = x1[1] - x1[0]
    L1 = x1[-1] + 0.5 * h
    pos = depth if side == 0 else L1 - depth
    r = np.clip((pos - x1[0]) / h, 0.0, x1.size - 1.0)
    i = np.minimum(r.astype(int), x1.size - 2)
    w = r - i
    cols = np.arange(values.shape[-1])
    return (1 - w) * values[..., i, cols] + w * values[..., i + 1, cols]


@dataclass
class TraceRecord:
    """Strong-trace estimate on the hyperbolic boundary.

    Attributes
    ----------
    s : ndarray
        Layer depths, decreasing.
    trace : ndarray, shape (P, T, 2, n2)
        ``u`` at the smallest depth on the sides ``x' = 0`` and ``x' = L'``.
    cauchy : ndarray, shape (P, S, S)
        Path-wise ``d(s_i, s_j)``.
    """

    s: np.ndarray
    times: np.ndarray
    x2: np.ndarray
    trace: np.ndarray
    cauchy: np.ndarray
    samples: np.ndarray = field(repr=False, default=None)

    @property
    def mean_cauchy(self) -> np.ndarray:
        return self.cauchy.mean(axis=0)

    def successive(self) -> np.ndarray:
        """Ensemble mean of ``d(s_i, s_{i+1})``."""
        m = self.mean_cauchy
        return np.array([m[i, i + 1] for i in range(self.s.size - 1)])

    def to_csv(self, path, p: int = 0):
        rows = [(t, side, x, self.trace[p, i, side, j])
                for i, t in enumerate(self.times) for side in (0, 1)
                for j, x in enumerate(self.x2)]
        write_csv(path, ["t", "side", "x2", "value"], rows)


def _layer_l1(a, b, times, h2):
    """``int_0^T int_{Gamma'} |a - b|`` for arrays ``(P, T, 2, n2)``."""
    per_t = np.abs(a - b).sum(axis=(2, 3)) * h2
    return np.trapezoid(per_t, times, axis=1)


def strong_trace_gamma_prime(run: FieldPath, s_list: Sequence[float],
                             deformation: Deformation = translation) -> TraceRecord:
    """Trace on ``x' in {0, L'}`` with a Cauchy certificate over layer depths.

    Parameters
    ----------
    run : FieldPath
        Cell-centred solution samples.
    s_list : sequence of float
        Decreasing depths in ``(0, L'/4]``; the smallest must span two cells.
    deformation : callable
        ``deformation(s, x2)`` gives the inward depth along the boundary.
    """
    s = np.asarray(s_list, float)
    if s.ndim != 1 or s.size < 2 or np.any(np.diff(s) >= 0):
        raise ValueError("s_list must be strictly decreasing with at least two entries")
    h1 = run.x1[1] - run.x1[0]
    L1 = run.x1[-1] + 0.5 * h1
    if s[0] > 0.25 * L1 + 1e-12:
        raise ValueError("layer depths must not exceed L'/4")
    if s[-1] < 2.0 * h1 - 1e-12:
        raise ResolutionError(f"smallest layer {s[-1]:g} spans fewer than two cells (h = {h1:g})")
    h2 = run.x2[1] - run.x2[0]
    samples = np.stack([
        np.stack([_sample_at_depth(run.values, run.x1, deformation(si, run.x2), side)
                  for side in (0, 1)], axis=2)
        for si in s])                                    # (S, P, T, 2, n2)
    S = s.size
    cauchy = np.zeros((run.paths, S, S))
    for i in range(S):
        for j in range(i + 1, S):
            cauchy[:, i, j] = cauchy[:, j, i] = _layer_l1(samples[i], samples[j], run.times, h2)
    return TraceRecord(s, run.times, run.x2, samples[-1], cauchy, samples)


def chi_gap(run: FieldPath, s_list: Sequence[float]) -> np.ndarray:
    """Distance of the layer-averaged kinetic function from a chi-function.

    For each depth ``s`` the function ``f(xi) = mean chi(xi; u(x))`` over the
    cells with ``x'`` within ``s`` of the hyperbolic boundary is formed at
    every boundary point; the returned value is the space-time mean of
    ``int (|f| - f^2) dxi``, which vanishes exactly for chi-functions.
    """
    h1 = run.x1[1] - run.x1[0]
    out = []
    for s in s_list:
        m = max(1, int(np.floor(s / h1 + 1e-9)))
        layers = [run.values[:, :, :m, :], run.values[:, :, ::-1, :][:, :, :m, :]]
        gaps = [_chi_gap_values(np.moveaxis(v, 2, -1)) for v in layers]
        out.append(float(np.mean(gaps)))
    return np.array(out)


def _chi_gap_values(vals):
    """``int (|f| - f^2) dxi`` for ``f = mean_i chi(xi; vals[..., i])``."""
    m = vals.shape[-1]
    pts = np.sort(np.concatenate([vals, np.zeros(vals.shape[:-1] + (1,))], axis=-1), axis=-1)
    mid = 0.5 * (pts[..., 1:] + pts[..., :-1])
    width = np.diff(pts, axis=-1)
    pos = ((vals[..., None, :] > mid[..., :, None]) & (mid[..., :, None] > 0)).sum(-1)
    neg = ((vals[..., None, :] < mid[..., :, None]) & (mid[..., :, None] < 0)).sum(-1)
    f = (pos - neg) / m
    return np.sum((np.abs(f) - f * f) * width, axis=-1)


def dirichlet_trace_check(run: FieldPath, model: ModelSpec,
                          boundary: Callable | None = None) -> float:
    """Extrapolated ``||B(u) - B(u_b)||_{L^2((0,T) x Gamma'')}``.

    Evaluated at depths ``2 h''`` and ``4 h''`` by linear interpolation and
    extrapolated linearly to depth zero (the value can be slightly negative
    when the discrepancy is below the discretisation error).
    """
    h2 = run.x2[1] - run.x2[0]
    bfun = boundary or model.ub
    ub = np.stack([np.asarray(bfun(t, run.x1), float) for t in run.times])    # (T, n1)
    Bb = model.diffusion(ub)[..., 0]
    swapped = np.swapaxes(run.values, -1, -2)                                # x2 leading the cells
    norms = []
    for depth in (2.0 * h2, 4.0 * h2):
        d = np.full(run.x1.size, depth)
        sides = [_sample_at_depth(swapped, run.x2, d, side) for side in (0, 1)]
        sq = sum((model.diffusion(v)[..., 0] - Bb) ** 2 for v in sides)      # (P, T, n1)
        per_t = sq.sum(axis=-1) * (run.x1[1] - run.x1[0])
        norms.append(np.sqrt(np.trapezoid(per_t, run.times, axis=1)))
    return float(np.mean(2.0 * norms[0] - norms[1]))


# -- divergence-measure fields and weak normal traces ------------------------------

@dataclass(frozen=True)
class DMField:
    """A vector field on a box with a closed-form or discrete divergence.

    ``field(x)`` and ``divergence(x)`` take points with a trailing coordinate
    axis (time, when present, is just the first coordinate).
    """

    field: Callable[[np.ndarray], np.ndarray]
    divergence: Callable[[np.ndarray], np.ndarray]
    lower: tuple
    upper: tuple

    def __call__(self, x):
        F = np.asarray(self.field(x), float)
        if not np.all(np.isfinite(F)):
            raise FloatingPointError("field has non-finite components")
        return F


@dataclass
class WeakTrace:
    """Layer functionals over width halvings and their extrapolated limit."""

    deltas: np.ndarray
    values: np.ndarray
    limit: float


def _box_quadrature(lower, upper):
    grids = [0.5 * (h - l) * (_GL_X + 1.0) + l for l, h in zip(lower, upper)]
    ws = [0.5 * (h - l) * _GL_W for l, h in zip(lower, upper)]
    mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(lower))
    w = ws[0]
    for wj in ws[1:]:
        w = np.multiply.outer(w, wj)
    return mesh, np.ravel(w)


def _layer_functional(F: DMField, layer: BoundaryLayer, g) -> float:
    total = 0.0
    for face in layer.faces:
        a, s = face
        x, w = layer.strip_quadrature(face, layer.delta)
        normal_h = 1.0 if s == 0 else -1.0            # grad h on this strip
        total += np.sum(w * g(x) * normal_h * F(x)[:, a])
    return -total / layer.delta


def weak_normal_trace(F: DMField, layer: BoundaryLayer, g: Callable,
                      halvings: int = 8) -> WeakTrace:
    """``-delta^{-1} int_{L_delta} g grad h . F dx`` over width halvings.

    The limit is obtained by polynomial extrapolation to ``delta = 0``; for
    polynomial fields and tests the layer functional is itself a polynomial
    in ``delta`` and the extrapolation is exact.
    """
    deltas = layer.delta * 0.5 ** np.arange(halvings + 1)
    values = np.array([_layer_functional(F, layer.with_delta(d), g) for d in deltas])
    limit = _neville_at_zero(deltas, values)
    return WeakTrace(deltas, values, limit)


def _neville_at_zero(x, y):
    p = np.array(y, float)
    x = np.asarray(x, float)
    n = x.size
    for k in range(1, n):
        p[:n - k] = (x[k:] * p[:n - k] - x[:n - k] * p[1:n - k + 1]) / (x[k:] - x[:n - k])
    return float(p[0])


def gauss_green(F: DMField, g: Callable, g_grad: Callable) -> float:
    """``int grad g . F + int g div F`` over the box."""
    x, w = _box_quadrature(F.lower, F.upper)
    return float(np.sum(w * (np.sum(g_grad(x) * F(x), axis=-1) + g(x) * F.divergence(x))))


# -- Dirichlet condition functional -----------------------------------------------

def _as_values(lift, run: FieldPath):
    if isinstance(lift, FieldPath):
        return lift.values
    if callable(lift):
        return np.stack([lift(t, run.x1[:, None], run.x2[None, :]) for t in run.times])
    return np.broadcast_to(np.asarray(lift, float), run.values.shape)


def dirichlet_condition_functional(model: ModelSpec, run: FieldPath, lift, phi: TestFunction,
                                   noise: Sequence[NoisePath]) -> np.ndarray:
    """Per-path ``-lhs / ||phi||_{L^2}`` of the boundary entropy inequality.

    ``lhs`` collects ``int |u - u_B| d_t phi - K(u, u_B) . grad phi`` and the
    Ito sum of ``G_k(u, u_B) phi`` (left-point on the stored time grid). The
    test ``phi`` may be nonzero on the Dirichlet boundary.

    Parameters
    ----------
    lift : FieldPath, array or callable
        ``u_B`` on the run's grid; a callable takes ``(t, x1, x2)``.
    noise : sequence of NoisePath
        The increments that drove each path.
    """
    if isinstance(noise, NoisePath):
        noise = [noise]
    uB = _as_values(lift, run)
    u = run.values
    t = run.times
    h1, h2 = run.x1[1] - run.x1[0], run.x2[1] - run.x2[0]
    cell = h1 * h2
    p1 = np.ones_like(run.x1) if phi.x1 is None else phi.x1(run.x1)
    d1 = np.zeros_like(run.x1) if phi.x1 is None else phi.x1(run.x1, 1)
    p2, d2 = phi.x2(run.x2), phi.x2(run.x2, 1)
    theta = phi.theta(t)
    dtheta = np.zeros_like(t) if phi.time is None else phi.time(t, 1)
    space = np.outer(p1, p2)
    kz = kruzhkov_fields(model, u, uB)
    F = kz["F"]
    Bdiff = kz["B"][..., 0]
    K1 = -F[..., 0]
    K2 = np.gradient(Bdiff, h2, axis=-1) - F[..., 1]
    absd = np.abs(u - uB)
    integrand = (absd * space * dtheta[:, None, None]
                 - (K1 * np.outer(d1, p2) + K2 * np.outer(p1, d2)) * theta[:, None, None])
    det = np.trapezoid(integrand.sum(axis=(-1, -2)) * cell, t, axis=1)
    G = kz["G"]                                                   # (K, P, T, n1, n2)
    paired = (G * space).sum(axis=(-1, -2)) * cell * theta        # (K, P, T)
    ito = np.zeros(run.paths)
    for p, nz in enumerate(noise):
        idx = np.searchsorted(nz.times, t - 1e-12)
        if not np.allclose(nz.times[idx], t, atol=1e-12):
            raise ValueError("stored times are not on the noise grid")
        beta = nz.brownian()[:, idx]
        ito[p] = np.sum(paired[:, p, :-1] * np.diff(beta, axis=1))
    lhs = det + ito
    norm = np.sqrt(np.trapezoid((theta ** 2) * np.sum(space ** 2) * cell, t))
    return -lhs / norm


def layer_diagnostic(model: ModelSpec, run: FieldPath, other: FieldPath, lift,
                     delta: float) -> np.ndarray:
    """Time series of ``int H(u, v, u_B) . grad zeta_delta dx`` on the Dirichlet layer.

    ``H(u, v, w) = K(u, v) + K(u, w) - K(w, v)`` with both solutions on the
    same grid (the diagonal ``x = y`` of the doubled variables). Exported as
    a diagnostic only; no sign is asserted.
    """
    uB = _as_values(lift, run)
    h2 = run.x2[1] - run.x2[0]
    cell = (run.x1[1] - run.x1[0]) * h2
    layer = BoundaryLayer.gamma_dprime(delta, model.lengths)
    X1, X2 = np.meshgrid(run.x1, run.x2, indexing="ij")
    grad = layer.grad_zeta(np.stack([X1, X2], axis=-1))

    def K(a, b):
        kz = kruzhkov_fields(model, a, b)
        k2 = np.gradient(kz["B"][..., 0], h2, axis=-1) - kz["F"][..., 1]
        return np.stack([-kz["F"][..., 0], k2], axis=-1)

    u, v = run.values, other.values
    H = K(u, v) + K(u, uB) - K(uB, v)
    return np.sum(H * grad, axis=(-1, -2, -3)) * cell
