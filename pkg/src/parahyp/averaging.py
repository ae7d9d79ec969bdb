"""Kinetic symbol, quantitative nondegeneracy scan and the averaging decomposition."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import write_csv
from .model import ModelSpec

__all__ = [
    "ShellError", "symbol", "SymbolScan", "nondegeneracy_scan", "zero_set_measure",
    "degenerate_model", "radial_cutoff", "Decomposition", "multiplier_decomposition",
]


class ShellError(ValueError):
    """A frequency shell contains no lattice points."""


def symbol(model: ModelSpec, tau, n, xi, *, reduced: bool = False, eps: float = 0.0):
    """``i (tau + a(xi) . n) + n''^T b(xi) n''`` (plus ``eps |n'|^2`` when viscous).

    Parameters
    ----------
    tau : array_like
        Time frequency; broadcast against ``n[..., 0]`` and ``xi``.
    n : array_like, shape (..., d)
        Space frequency ``(n', n'')``.
    reduced : bool
        Drop ``a''(xi) . n''`` from the imaginary part.
    eps : float
        Viscosity acting on ``x'``.
    """
    n = np.asarray(n, float)
    xi = np.asarray(xi, float)
    d1 = model.d_prime
    a = model.flux_deriv(xi)
    b = model.diffusion_deriv(xi)
    if reduced:
        transport = np.sum(a[..., :d1] * n[..., :d1], axis=-1)
    else:
        transport = np.sum(a * n, axis=-1)
    diffusion = np.sum(b * n[..., d1:] ** 2, axis=-1) + eps * np.sum(n[..., :d1] ** 2, axis=-1)
    return diffusion + 1j * (np.asarray(tau, float) + transport)


def _shell(J: int, d: int, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Integer vectors with ``J <= |m| < 2J``: all axis points plus a random fill."""
    r = np.arange(-2 * J + 1, 2 * J)
    grid = np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1).reshape(-1, d)
    norm = np.linalg.norm(grid, axis=1)
    pts = grid[(norm >= J) & (norm < 2 * J)]
    if pts.size == 0:
        raise ShellError(f"empty shell at J = {J}")
    if len(pts) <= samples:
        return pts
    on_axis = np.count_nonzero(pts, axis=1) == 1
    fixed = pts[on_axis]
    rest = pts[~on_axis]
    fill = rest[rng.choice(len(rest), max(0, samples - len(fixed)), replace=False)]
    return np.concatenate([fixed, fill])


def _tau_candidates(model, n, xi, coarse: int = 16):
    """Times where ``tau + a(xi) . n`` vanishes at a critical or coarse-grid ``xi``."""
    phase = model.flux_deriv(xi) @ n
    grad = np.diff(phase)
    turns = np.nonzero(np.sign(grad[1:]) != np.sign(grad[:-1]))[0] + 1
    picks = np.unique(np.concatenate([turns, np.linspace(0, xi.size - 1, coarse).astype(int)]))
    return -phase[picks]


@dataclass
class SymbolScan:
    """Measured ``omega(J; delta)`` with fitted exponents.

    ``omega[i, j]`` is the largest measure of ``{xi in window : |L| <= delta_j}``
    over the sampled ``(tau, n)`` with ``|n| ~ J_i``.
    """

    window: tuple
    lattice: float
    deltas: np.ndarray
    J: np.ndarray
    omega: np.ndarray
    alpha: float
    beta: float
    residual: float
    nondeg_measure: float
    nondeg_passed: bool
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        rows = [(float(J), float(d), float(self.omega[i, j]))
                for i, J in enumerate(self.J) for j, d in enumerate(self.deltas)]
        write_csv(path, ["J", "delta", "omega"], rows)


def nondegeneracy_scan(model: ModelSpec, window=None, deltas=None, J=None, *,
                       samples: int = 256, xi_points: int = 4096, period: float = 2 * np.pi,
                       eps: float = 0.0, seed: int = 0) -> SymbolScan:
    """Measure ``omega(J; delta)`` and fit ``omega ~ (delta / J^beta)^alpha``.

    Parameters
    ----------
    window : (lo, hi), optional
        Support of the cutoff in ``xi``; defaults to ``[u_min, u_max]``.
    deltas, J : array_like, optional
        Log-spaced grids with at least four points each; ``J`` counts lattice
        steps.
    samples : int
        Lattice frequencies per shell; each is paired with several times
        ``tau`` that make ``tau + a . n`` vanish at critical points.
    period : float
        Periodisation length; the lattice spacing is ``2 pi / period``.
    """
    lo, hi = window or (model.u_min, model.u_max)
    deltas = np.asarray(deltas if deltas is not None else np.logspace(-3, -1, 5), float)
    J = np.asarray(J if J is not None else [2, 4, 8, 16], int)
    if deltas.size < 4 or J.size < 4:
        raise ValueError("scan grids need at least four points each")
    ell = 2 * np.pi / period
    xi = lo + (np.arange(xi_points) + 0.5) * (hi - lo) / xi_points
    dxi = (hi - lo) / xi_points
    rng = np.random.default_rng(seed)
    omega = np.zeros((J.size, deltas.size))
    for i, Jm in enumerate(J):
        for m in _shell(int(Jm), model.dim, samples, rng):
            n = ell * m
            taus = _tau_candidates(model, n, xi)
            mag = np.abs(symbol(model, taus[:, None], n, xi[None, :], eps=eps))
            counts = (mag[:, :, None] <= deltas).sum(axis=1).max(axis=0)
            omega[i] = np.maximum(omega[i], counts * dxi)
    alpha, beta, resid = _fit(omega, deltas, J * ell)
    zero = zero_set_measure(model, (lo, hi), xi_points=xi_points, eps=eps)
    return SymbolScan((lo, hi), ell, deltas, J * ell, omega, alpha, beta, resid,
                      zero, zero <= 4 * dxi,
                      {"samples": samples, "xi_points": xi_points, "seed": seed, "eps": eps})


def _fit(omega, deltas, J):
    D, JJ = np.meshgrid(deltas, J)
    ok = omega > 0
    if ok.sum() < 3:
        return np.nan, np.nan, np.nan
    A = np.stack([np.ones(ok.sum()), np.log(D[ok]), np.log(JJ[ok])], axis=1)
    y = np.log(omega[ok])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    alpha = float(coef[1])
    beta = float(-coef[2] / alpha) if alpha != 0.0 else np.nan
    return alpha, beta, resid


def zero_set_measure(model: ModelSpec, window, *, directions: int = 512, xi_points: int = 4096,
                     eps: float = 0.0, tol: float = 1e-14, seed: int = 0) -> float:
    """Largest measure of ``{xi : |tau + a . k|^2 + (k''^T b k'')^2 = 0}`` over unit ``(tau, k)``.

    Directions are the coordinate axes plus uniformly random points of the
    unit sphere in ``R^{d+1}``; each direction also contributes its rotation
    that makes ``tau + a(xi_c) . k`` vanish at every coarse-grid ``xi_c``.
    Isolated zeros give at most a few samples; an interval of zeros gives a
    measure comparable to its length.
    """
    lo, hi = window
    xi = lo + (np.arange(xi_points) + 0.5) * (hi - lo) / xi_points
    dxi = (hi - lo) / xi_points
    d = model.dim
    rng = np.random.default_rng(seed)
    dirs = np.concatenate([np.eye(d + 1), rng.normal(size=(directions, d + 1))])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    a = model.flux_deriv(xi)
    b = model.diffusion_deriv(xi)
    worst = 0.0
    for v in dirs:
        k = v[1:]
        phase = a @ k
        diff = np.sum(b * k[model.d_prime:] ** 2, axis=-1) + eps * np.sum(k[:model.d_prime] ** 2)
        for tau in np.concatenate([[v[0]], -phase[::256]]):
            scale = np.sqrt(tau ** 2 + k @ k)
            if scale == 0.0:
                continue
            val = ((tau + phase) ** 2 + diff ** 2) / scale ** 4
            worst = max(worst, np.count_nonzero(val <= tol) * dxi)
    return worst


def degenerate_model(base: ModelSpec, interval=(0.4, 0.6)) -> ModelSpec:
    """Copy of ``base`` whose ``a`` and ``b`` vanish identically on ``interval``.

    Outside the interval ``a = (dist^3, 0)`` and ``b = dist^2`` with ``dist``
    the distance to the interval; a counterexample to nondegeneracy.
    """
    lo, hi = interval

    def dist(u):
        u = np.asarray(u, float)
        return np.maximum(lo - u, 0.0) + np.maximum(u - hi, 0.0)

    def flux_deriv(u):
        r = dist(u) ** 3
        return np.stack([r, np.zeros_like(r)], axis=-1)

    return base.replace(name="degenerate", flux_deriv=flux_deriv,
                        diffusion_deriv=lambda u: (dist(u) ** 2)[..., None])


# -- averaging decomposition --------------------------------------------------------

def radial_cutoff(r):
    """``1`` on ``r <= 1``, ``(1 - (r-1)^2)^4`` on ``1 < r < 2``, ``0`` beyond."""
    r = np.abs(np.asarray(r, float))
    s = np.clip(r - 1.0, 0.0, 1.0)
    return np.where(r <= 1.0, 1.0, (1.0 - s * s) ** 4)


@dataclass
class Decomposition:
    """The four averaged pieces ``v1..v4`` and the full average."""

    pieces: np.ndarray            # (4, *grid)
    average: np.ndarray
    cell: float

    def norms_sq(self) -> np.ndarray:
        return np.sum(self.pieces ** 2, axis=tuple(range(1, self.pieces.ndim))) * self.cell

    def reconstruction_error(self) -> float:
        return float(np.max(np.abs(self.pieces.sum(axis=0) - self.average)))


def multiplier_decomposition(f, xi, xi_weights, alpha0, alpha_prime, beta, gamma, delta,
                             period, *, n_prime: int, xi_bound: float | None = None
                             ) -> Decomposition:
    """Split ``int f dxi`` by frequency cutoffs into four pieces.

    Parameters
    ----------
    f : ndarray, shape (*grid, n_xi)
        Samples on a periodic grid in ``y = (y0, y', y'')`` and ``xi`` nodes.
    xi, xi_weights : ndarray
        ``xi`` nodes and quadrature weights.
    alpha0 : callable
        ``xi -> alpha0`` (the coefficient of ``d/dy0``).
    alpha_prime : callable
        ``xi -> (n_xi, N')`` coefficients of ``grad_{y'}``.
    beta : callable
        ``xi -> (n_xi, N'', N'')`` symmetric diffusion matrices.
    gamma, delta : float
        Low-frequency radius and nondegeneracy threshold.
    period : float or sequence
        Box lengths.
    n_prime : int
        Number of ``y'`` coordinates (``N' >= 0``).
    xi_bound : float, optional
        ``f`` must vanish for ``|xi| > xi_bound``.
    """
    f = np.asarray(f, float)
    xi = np.asarray(xi, float)
    grid = f.shape[:-1]
    N = len(grid)
    n_dd = N - 1 - n_prime
    if n_dd < 0:
        raise ValueError("n_prime too large for the grid dimension")
    if xi_bound is not None:
        outside = np.abs(xi) > xi_bound
        if np.any(f[..., outside] != 0.0):
            raise ValueError("f is supported beyond the declared xi bound")
    period = np.broadcast_to(np.asarray(period, float), (N,))
    kappa = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(m, L / m) for m, L in zip(grid, period)],
                        indexing="ij")
    kappa = np.stack(kappa, axis=-1)                                   # (*grid, N)
    kt = kappa[..., :1 + n_prime]
    kdd = kappa[..., 1 + n_prime:]
    kt_norm = np.linalg.norm(kt, axis=-1)
    kdd_sq = np.sum(kdd ** 2, axis=-1)
    zeta1 = radial_cutoff(np.linalg.norm(kappa, axis=-1) / gamma)
    psi1 = 1.0 - zeta1
    a0 = np.asarray(alpha0(xi), float)
    ap = np.asarray(alpha_prime(xi), float).reshape(xi.size, n_prime)
    bt = np.asarray(beta(xi), float).reshape(xi.size, n_dd, n_dd)
    Ff = np.fft.fftn(f, axes=tuple(range(N)))
    pieces = np.zeros((4,) + grid, dtype=complex)
    safe_t = np.where(kt_norm > 0, kt_norm, 1.0)
    safe_dd = np.where(kdd_sq > 0, kdd_sq, 1.0)
    for j in range(xi.size):
        transport = kt[..., 0] * a0[j] + (kt[..., 1:] @ ap[j] if n_prime else 0.0)
        zeta2 = np.where(kt_norm > 0, radial_cutoff(np.abs(transport) / (delta * safe_t)), 1.0)
        quad = np.einsum("...i,ij,...j->...", kdd, bt[j], kdd) if n_dd else np.zeros(grid)
        zeta3 = np.where(kdd_sq > 0, radial_cutoff(quad / (delta * safe_dd)), 1.0)
        m2 = psi1 * zeta2
        m3 = psi1 * (1.0 - zeta2) * zeta3
        m4 = psi1 * (1.0 - zeta2) * (1.0 - zeta3)
        w = xi_weights[j] * Ff[..., j]
        pieces[0] += zeta1 * w
        pieces[1] += m2 * w
        pieces[2] += m3 * w
        pieces[3] += m4 * w
    v = np.real(np.fft.ifftn(pieces, axes=tuple(range(1, N + 1))))
    average = f @ xi_weights
    return Decomposition(v, average, float(np.prod(period / np.asarray(grid))))
