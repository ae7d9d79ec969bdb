r"""Fourth-order regularised problem solved by Picard iteration of its mild form.

The operator :math:`A = -\varepsilon\Delta + \mu\partial_{x''}^4` (Neumann in
``x'``, clamped in ``x''``) is diagonal on the tensor basis of
:mod:`parahyp.spectral`. For a given input path ``v`` the Duhamel map reads

.. math::

    K[v](t) = \tilde u_b + S(t)u_0 + \int_0^t S(t-s)\,G(v(s))\,ds
              + \int_0^t S(t-s)\Phi(v(s))\,dW(s),

with ``<G(v), phi> = <A(v), grad phi> + <B(v), d''^2 phi>``; the first term
is the Gauss-Green combination of the volume term ``-div A(v)`` and the
boundary-flux correction ``w^v``. Deterministic convolutions integrate the
piecewise linear interpolant of the forcing exactly against the semigroup;
stochastic convolutions are left-point Itô sums.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import FieldPath
from .model import ModelSpec
from .noise import NoisePath, path_seed, sample_noise
from .spectral import TensorOperator, build_modes_1d, tensorize

__all__ = [
    "SpectralSetup",
    "BoundaryData",
    "BoundaryLift",
    "PicardReport",
    "CompatibilityError",
    "AdaptednessError",
    "etd_weights",
    "ensemble_noise",
    "solve_boundary_lift",
    "solve_flux_correction",
    "duhamel_map",
    "solve_first_approx",
    "relative_energy_check",
    "uniform_energy",
    "star_norm",
]


class CompatibilityError(ValueError):
    """Boundary data violate the initial compatibility of the lift."""


class AdaptednessError(ValueError):
    """Input path is not sampled on the noise grid."""


def etd_weights(lam, h):
    """Weights of ``int_0^h exp(-lam (h - s)) f(s) ds`` for linear ``f``.

    Returns ``(e, w0, w1)`` with the integral equal to ``w0 f(0) + w1 f(h)``
    and ``e = exp(-lam h)``.
    """
    z = np.asarray(lam, dtype=float) * h
    e = np.exp(-z)
    w0 = np.empty_like(z)
    w1 = np.empty_like(z)
    small = z < 0.2
    zs = z[small]
    # series in z: w0/h = sum (-z)^k / (k! (k+2)), w1/h = sum (-z)^k / (k! (k+1)(k+2))
    s0 = np.zeros_like(zs)
    s1 = np.zeros_like(zs)
    term = np.ones_like(zs)
    for k in range(18):
        s0 += term / (k + 2)
        s1 += term / ((k + 1) * (k + 2))
        term = term * (-zs) / (k + 1)
    w0[small] = h * s0
    w1[small] = h * s1
    zb = z[~small]
    eb = e[~small]
    w0[~small] = h * (1.0 - eb - zb * eb) / zb ** 2
    w1[~small] = h * (zb - 1.0 + eb) / zb ** 2
    return e, w0, w1


@dataclass(frozen=True, eq=False)
class SpectralSetup:
    """Tensor operator plus cached evaluation matrices for one ``(eps, mu)``."""

    op: TensorOperator
    eps: float
    mu: float

    @classmethod
    def build(cls, model: ModelSpec, eps: float, mu: float,
              modes: tuple[int, int] = (32, 32)) -> "SpectralSetup":
        L1, L2 = model.lengths
        first = build_modes_1d("neumann", eps, 0.0, L1, modes[0])
        second = build_modes_1d("clamped", eps, mu, L2, modes[1])
        return cls(tensorize(first, second), eps, mu)

    @property
    def lam(self):
        return self.op.eigenvalues

    @property
    def shape(self):
        return self.op.shape

    def project(self, values, d1=0, d2=0):
        return self.op.from_grid(values, d1, d2)

    def grid(self, coeffs, d1=0, d2=0):
        return self.op.to_grid(coeffs, d1, d2)

    def evaluate(self, coeffs, x1, x2, d1=0, d2=0):
        return self.op.to_grid(coeffs, d1, d2, x1=x1, x2=x2)


# -- boundary lift ----------------------------------------------------------

@dataclass(frozen=True)
class BoundaryData:
    """Separable Dirichlet data ``u_b(t, x') = ramp(t) * profile(x')``.

    ``profile`` must satisfy ``profile'(0) = profile'(L') = 0``.
    """

    profile: Callable
    dprofile: Callable
    ramp: Callable
    dramp: Callable

    def __call__(self, t, x1):
        return self.ramp(t) * self.profile(np.asarray(x1, float))


def _cutoff(x, L):
    # equals 1 with zero slope at both ends of (0, L)
    return np.cos(np.pi * x / L) ** 2


def _cutoff_d(x, L, order):
    c = 2 * np.pi * x / L
    k = 2 * np.pi / L
    if order == 1:
        return -0.5 * k * np.sin(c)
    if order == 2:
        return -0.5 * k ** 2 * np.cos(c)
    raise ValueError(order)


@dataclass
class BoundaryLift:
    """Lift ``u_b~ = f + z``: explicit extension ``f`` plus Galerkin part ``z``."""

    setup: SpectralSetup
    times: np.ndarray
    z: np.ndarray
    data: BoundaryData | None

    @property
    def is_zero(self) -> bool:
        return self.data is None

    def extension(self, n, x1=None, x2=None):
        """Grid values of ``f(t_n)`` (quadrature grid by default)."""
        op = self.setup.op
        x1 = op.first.nodes if x1 is None else np.asarray(x1, float)
        x2 = op.second.nodes if x2 is None else np.asarray(x2, float)
        if self.data is None:
            return np.zeros((np.size(x1), np.size(x2)))
        t = self.times[n]
        return (self.data.ramp(t) * self.data.profile(x1)[:, None]
                * _cutoff(x2, op.second.length)[None, :])

    def values(self, n, x1=None, x2=None):
        op = self.setup.op
        z = self.setup.evaluate(self.z[n], op.first.nodes if x1 is None else x1,
                                op.second.nodes if x2 is None else x2)
        return z + self.extension(n, x1, x2)


def _zero_lift(setup, times):
    return BoundaryLift(setup, times, np.zeros((times.size,) + setup.shape), None)


def solve_boundary_lift(setup: SpectralSetup, data: BoundaryData | None, times,
                        strict: bool = True) -> BoundaryLift:
    """Galerkin solution of the homogenised lift problem.

    ``z`` solves ``d/dt <z, phi> + a(z, phi) = -<d_t f, phi> - a(f, phi)`` for
    every retained ``phi`` where ``a`` is the bilinear form of ``A`` and
    ``f = ramp(t) profile(x') cos^2(pi x''/L'')``.

    Parameters
    ----------
    strict : bool
        Require ``u_b(0) = 0`` so that the lift starts from zero; otherwise
        the lift starts from the extension ``f(0)``.
    """
    times = np.asarray(times, float)
    if data is None:
        return _zero_lift(setup, times)
    op = setup.op
    x1, w1 = op.first.nodes, op.first.weights
    x2, w2 = op.second.nodes, op.second.weights
    L2 = op.second.length
    if strict and np.max(np.abs(data(times[0], x1))) > 0.0:
        raise CompatibilityError(
            "boundary data do not vanish at t = 0; use strict=False for an extension start")
    p = data.profile(x1)
    dp = data.dprofile(x1)
    chi, dchi, d2chi = _cutoff(x2, L2), _cutoff_d(x2, L2, 1), _cutoff_d(x2, L2, 2)
    P0 = op.first.quadrature_matrix(0) @ (w1 * p)
    P1 = op.first.quadrature_matrix(1) @ (w1 * dp)
    X0 = op.second.quadrature_matrix(0) @ (w2 * chi)
    X1 = op.second.quadrature_matrix(1) @ (w2 * dchi)
    X2 = op.second.quadrature_matrix(2) @ (w2 * d2chi)
    mass = np.outer(P0, X0)
    stiff = setup.eps * (np.outer(P1, X0) + np.outer(P0, X1)) + setup.mu * np.outer(P0, X2)

    def forcing(t):
        return -data.dramp(t) * mass - data.ramp(t) * stiff

    z = np.zeros((times.size,) + setup.shape)
    f_prev = forcing(times[0])
    for n in range(times.size - 1):
        e, w0, w1_ = etd_weights(setup.lam, times[n + 1] - times[n])
        f_next = forcing(times[n + 1])
        z[n + 1] = e * z[n] + w0 * f_prev + w1_ * f_next
        f_prev = f_next
    return BoundaryLift(setup, times, z, data)


# -- Duhamel map --------------------------------------------------------------

def _has_second_flux(model):
    probe = np.linspace(model.u_min - 0.5, model.u_max + 0.5, 7)
    return bool(np.any(model.flux(probe)[..., 1] != 0.0))


def _drift_coeffs(setup, model, v, second_flux=True):
    """``<A(v), grad phi> + <B(v), d''^2 phi>`` for grid values ``v``."""
    A = model.flux(v)
    out = setup.project(A[..., 0], 1, 0)
    if second_flux:
        out = out + setup.project(A[..., 1], 0, 1)
    out = out + setup.project(model.diffusion(v)[..., 0], 0, 2)
    return out


def _noise_kick(setup, model, v, inc):
    """Projection of ``sum_k g_k(v) dbeta_k``; ``inc`` broadcasts against ``v``."""
    acc = np.zeros_like(v)
    for k, g in enumerate(model.noise):
        acc += g(v) * inc[k]
    return setup.project(acc)


def _recursion(setup, c0, forcing, kicks, times):
    """Exponential-trapezoid recursion on coefficients.

    ``forcing`` has shape (..., N + 1, M1, M2), ``kicks`` (..., N, M1, M2).
    """
    N = times.size - 1
    out = np.empty(forcing.shape[:-3] + (N + 1,) + setup.shape)
    out[..., 0, :, :] = c0
    cache = {}
    for n in range(N):
        h = times[n + 1] - times[n]
        key = round(h, 15)
        if key not in cache:
            cache[key] = etd_weights(setup.lam, h)
        e, w0, w1 = cache[key]
        out[..., n + 1, :, :] = (e * (out[..., n, :, :] + kicks[..., n, :, :])
                                 + w0 * forcing[..., n, :, :] + w1 * forcing[..., n + 1, :, :])
    return out


def _stack_noise(noise):
    if isinstance(noise, NoisePath):
        noise = [noise]
    noise = list(noise)
    times = noise[0].times
    for nz in noise[1:]:
        if not np.array_equal(nz.times, times):
            raise ValueError("all noise paths must share a time grid")
    return noise, times, np.stack([nz.increments for nz in noise])


def duhamel_map(model: ModelSpec, setup: SpectralSetup, v_coeffs, noise,
                lift: BoundaryLift | None = None, u0_coeffs=None,
                v_times=None) -> np.ndarray:
    """Apply ``K`` to an input path given by coefficients.

    Parameters
    ----------
    v_coeffs : ndarray, shape (P, N + 1, M1, M2) or (N + 1, M1, M2)
        Galerkin part of the input; the lift extension is added internally.
    noise : NoisePath or sequence of NoisePath
        One path per ensemble member.
    v_times : ndarray, optional
        Sampling times of ``v``; must coincide with the noise grid.

    Returns
    -------
    ndarray, shape (P, N + 1, M1, M2)
        Galerkin part of ``K[v]`` (the lift extension ``f`` is not included).
        Entry ``n`` uses increments with index below ``n`` only.
    """
    noise, times, inc = _stack_noise(noise)
    if v_times is not None and not np.array_equal(np.asarray(v_times), times):
        raise AdaptednessError("input path is not sampled on the noise grid")
    v = np.asarray(v_coeffs, float)
    if v.ndim == 3:
        v = np.broadcast_to(v, (len(noise),) + v.shape)
    if v.shape[1] != times.size:
        raise AdaptednessError(f"input path has {v.shape[1]} samples, noise grid {times.size}")
    lift = lift or _zero_lift(setup, times)
    if u0_coeffs is None:
        u0_coeffs = initial_coeffs(model, setup, lift)
    c0 = np.broadcast_to(u0_coeffs, (v.shape[0],) + setup.shape)
    return _window_map(setup, model, v, c0, lift, inc, times, 0, _has_second_flux(model))


def initial_coeffs(model, setup, lift=None):
    x1, x2 = setup.op.grid
    u0 = model.u0(x1[:, None], x2[None, :])
    if lift is not None and not lift.is_zero:
        u0 = u0 - lift.extension(0)
    return setup.project(u0)


def solve_flux_correction(model: ModelSpec, setup: SpectralSetup, v_coeffs, times,
                          lift: BoundaryLift | None = None) -> np.ndarray:
    """Galerkin solution ``w^v`` of the boundary-flux sub-problem.

    The forcing functional is ``F(t)[phi] = int_{O''} [A_1(v) phi]_{x'=0}^{x'=L'}``,
    computed by Gauss quadrature in ``x''``; ``w^v(0) = 0``.
    """
    times = np.asarray(times, float)
    v = np.asarray(v_coeffs, float)
    op = setup.op
    L1 = op.first.length
    x2, w2 = op.second.nodes, op.second.weights
    ends = np.array([0.0, L1])
    E1 = op.first.values(ends)                    # (M1, 2)
    V2 = op.second.quadrature_matrix() * w2       # (M2, n2)
    forcing = np.empty(v.shape)
    for n in range(times.size):
        vb = setup.evaluate(v[..., n, :, :], ends, x2)            # (..., 2, n2)
        if lift is not None and not lift.is_zero:
            vb = vb + lift.extension(n, ends, x2)
        A1 = model.flux(vb)[..., 0]
        right = np.einsum("m,...j,kj->...mk", E1[:, 1], A1[..., 1, :], V2)
        left = np.einsum("m,...j,kj->...mk", E1[:, 0], A1[..., 0, :], V2)
        forcing[..., n, :, :] = right - left
    kicks = np.zeros(forcing.shape[:-3] + (times.size - 1,) + setup.shape)
    return _recursion(setup, np.zeros(setup.shape), forcing, kicks, times)


# -- Picard iteration ---------------------------------------------------------

@dataclass
class PicardReport:
    """Convergence record of the windowed Picard iteration."""

    iterations: int
    residuals: list[list[float]]
    contraction: float
    converged: bool
    terminal_residual: float
    windows: int
    C_star: float = 1.0

    def summary(self) -> dict:
        return {"iterations": self.iterations, "windows": self.windows,
                "contraction": self.contraction, "converged": self.converged,
                "terminal_residual": self.terminal_residual, "C_star": self.C_star}


def star_norm(setup, diff, times, C_star=1.0):
    """Weighted energy norm of a coefficient path difference.

    ``sup_t exp(-C t) E sup_{s<=t} (1/2 |r(s)|^2 + int_0^s <A r, r>)`` under
    the square root; ``diff`` has shape (P, T, M1, M2).
    """
    diff = np.asarray(diff)
    if diff.ndim == 3:
        diff = diff[None]
    l2 = 0.5 * np.sum(diff ** 2, axis=(-2, -1))
    form = np.sum(setup.lam * diff ** 2, axis=(-2, -1))
    dt = np.diff(times)
    cum = np.zeros_like(l2)
    cum[:, 1:] = np.cumsum(0.5 * (form[:, 1:] + form[:, :-1]) * dt, axis=1)
    inner = np.maximum.accumulate(l2 + cum, axis=1)
    val = np.exp(-C_star * (times - times[0])) * inner.mean(axis=0)
    return float(np.sqrt(val.max()))


def ensemble_noise(seed: int, paths: int, K: int, times) -> list[NoisePath]:
    """One independent noise path per ensemble member."""
    return [sample_noise(path_seed(seed, p), K, times) for p in range(paths)]


def _cell_centres(L, n):
    return (np.arange(n) + 0.5) * (L / n)


def solve_first_approx(model: ModelSpec, eps: float, mu: float, noise,
                       *, modes=(32, 32), window: float = 0.05, tol: float = 1e-10,
                       max_iter: int = 200, stride: int = 1, output_grid=(32, 32),
                       boundary: BoundaryData | None = None, C_star: float = 1.0,
                       setup: SpectralSetup | None = None,
                       chunk: int = 8) -> tuple[FieldPath, PicardReport]:
    """Picard iteration ``v_{j+1} = K[v_j]`` on consecutive time windows.

    Each window starts from the semigroup propagation of the previous
    window's endpoint and iterates until the relative weighted residual is
    below ``tol``.

    Returns
    -------
    FieldPath
        Values on a cell-centred output grid at every ``stride``-th step,
        plus coefficients and energy time series in ``extras``.
    PicardReport
    """
    noise, times, inc = _stack_noise(noise)
    if noise[0].K != model.K:
        raise ValueError(f"noise has {noise[0].K} modes, model {model.K}")
    setup = setup or SpectralSetup.build(model, eps, mu, modes)
    lift = solve_boundary_lift(setup, boundary, times)
    c0 = initial_coeffs(model, setup, lift)
    second = _has_second_flux(model)
    N = times.size - 1
    dt = float(np.median(np.diff(times)))
    wsteps = max(1, int(round(window / dt)))
    P = len(noise)
    store = np.arange(0, N + 1, stride)
    if store[-1] != N:
        store = np.append(store, N)
    out_c = np.empty((P, store.size) + setup.shape)

    residuals: list[list[float]] = []
    ratios = [0.0]
    terminal = 0.0
    converged = True
    iterations = 0
    energy_l2 = np.zeros((P, N + 1))
    energy_form = np.zeros((P, N + 1))

    for p0 in range(0, P, chunk):
        sl = slice(p0, min(P, p0 + chunk))
        Pc = sl.stop - sl.start
        c_start = np.broadcast_to(c0, (Pc,) + setup.shape).copy()
        full = np.empty((Pc, N + 1) + setup.shape)
        full[:, 0] = c_start
        n0 = 0
        while n0 < N:
            n1 = min(N, n0 + wsteps)
            wt = times[n0:n1 + 1]
            # warm start: semigroup propagation of the window's initial state
            guess = np.exp(-setup.lam * (wt - wt[0])[:, None, None]) * c_start[:, None]
            guess += lift.z[n0:n1 + 1] - lift.z[n0]
            hist = []
            ok = False
            for it in range(max_iter):
                new = _window_map(setup, model, guess, c_start, lift, inc[sl, :, n0:n1],
                                  wt, n0, second)
                res = star_norm(setup, new - guess, wt, C_star)
                scale = max(star_norm(setup, new, wt, C_star), 1e-300)
                hist.append(res)
                iterations += 1
                guess = new
                if res <= tol * scale:
                    ok = True
                    break
            residuals.append(hist)
            floor = 1e-12 * scale
            for a, b in zip(hist[:-1], hist[1:]):
                if b > floor:
                    ratios.append(b / a)
            terminal = max(terminal, hist[-1])
            converged &= ok
            if not np.all(np.isfinite(guess)):
                bad = n0 + int(np.argmax(~np.isfinite(guess).all(axis=(0, 2, 3))))
                raise FloatingPointError(f"non-finite Picard iterate at step {bad}")
            full[:, n0:n1 + 1] = guess
            c_start = guess[:, -1]
            n0 = n1
        out_c[sl] = full[:, store]
        resid = full - lift.z
        energy_l2[sl] = 0.5 * np.sum(resid ** 2, axis=(-2, -1))
        energy_form[sl] = np.sum(setup.lam * full ** 2, axis=(-2, -1))

    x1 = _cell_centres(model.lengths[0], output_grid[0])
    x2 = _cell_centres(model.lengths[1], output_grid[1])
    vals = setup.evaluate(out_c, x1, x2)
    if not lift.is_zero:
        vals = vals + np.stack([lift.extension(n, x1, x2) for n in store])
    meta = {"solver": "spectral-picard", "model": model.name, "eps": eps, "mu": mu,
            "seeds": [nz.seed for nz in noise], "modes": list(modes), "dt": dt,
            "steps": N, "stride": stride, "window_steps": wsteps, "tol": tol,
            "h1": model.lengths[0] / output_grid[0], "h2": model.lengths[1] / output_grid[1]}
    report = PicardReport(iterations, residuals, float(max(ratios)), converged,
                          float(terminal), len(residuals), C_star)
    extras = {"energy_l2": energy_l2, "energy_form": energy_form, "all_times": times}
    return FieldPath(times[store], x1, x2, vals, meta, out_c, extras), report


def _window_map(setup, model, guess, c_start, lift, inc, wt, n0, second):
    """``K`` restricted to one window, for a batch of paths."""
    P, W1 = guess.shape[:2]
    vg = setup.grid(guess)
    if not lift.is_zero:
        vg = vg + np.stack([lift.extension(n0 + j) for j in range(W1)])
    forcing = _drift_coeffs(setup, model, vg, second)
    kicks = _noise_kick(setup, model, vg[:, :-1],
                        np.moveaxis(inc, 1, 0)[..., None, None])
    base = c_start - lift.z[n0]
    c = _recursion(setup, base, forcing, kicks, wt)
    return c + lift.z[n0:n0 + W1]


# -- energy identities --------------------------------------------------------

@dataclass
class RelativeEnergy:
    """Terms of the relative energy identity at final time, per path."""

    lhs: np.ndarray
    drift: np.ndarray
    martingale: np.ndarray
    correction: np.ndarray

    def defect(self, with_correction: bool = True) -> np.ndarray:
        rhs = self.drift + self.martingale + (self.correction if with_correction else 0.0)
        return self.lhs - rhs

    def mean_defect(self, with_correction: bool = True) -> float:
        return float(np.mean(self.defect(with_correction)))


def relative_energy_check(model: ModelSpec, setup: SpectralSetup, v1, v2, noise,
                          chunk: int = 256, on_grid: bool = False) -> RelativeEnergy:
    """Evaluate every term of the relative energy identity for ``K v1 - K v2``.

    ``v1, v2`` are coefficient paths sampled on the noise grid, either shared
    by all paths (shape (N + 1, M1, M2)) or per path. Deterministic time
    integrals use the trapezoid rule, the martingale term is the realised
    left-point Itô sum, and the Itô correction is
    ``1/2 int sum_k |P(g_k(v1) - g_k(v2))|^2`` with ``P`` the Galerkin
    projection. With ``on_grid`` the inputs are values on the quadrature
    grid instead of coefficients, which avoids projecting data that do not
    satisfy the clamped boundary conditions.
    """
    noise, times, inc = _stack_noise(noise)
    v1 = np.asarray(v1, float)
    v2 = np.asarray(v2, float)
    P = len(noise)
    if v1.shape[-3] != times.size or v2.shape[-3] != times.size:
        raise AdaptednessError("input paths are not sampled on the noise grid")
    second = _has_second_flux(model)
    dt = np.diff(times)

    def inputs(a, b):
        # drift difference, per-mode noise differences and their square sums
        ga, gb = (a, b) if on_grid else (setup.grid(a), setup.grid(b))
        df = _drift_coeffs(setup, model, ga, second) - _drift_coeffs(setup, model, gb, second)
        dG = np.stack([setup.project(g(ga[..., :-1, :, :]) - g(gb[..., :-1, :, :]))
                       for g in model.noise])
        return df, dG, np.sum(dG ** 2, axis=(0, -2, -1))

    shared = v1.ndim == 3 and v2.ndim == 3
    if shared:
        df_s, dG_s, sq_s = inputs(v1, v2)
    parts = {k: np.empty(P) for k in ("lhs", "drift", "martingale", "correction")}
    step = chunk if shared else 1
    for p0 in range(0, P, step):
        sl = slice(p0, min(P, p0 + step))
        if shared:
            df, dG, sq = df_s, dG_s, sq_s
            kicks = np.einsum("pkn,knab->pnab", inc[sl], dG)
        else:
            df, dG, sq = inputs(np.broadcast_to(v1, (P,) + v1.shape[-3:])[p0],
                                np.broadcast_to(v2, (P,) + v2.shape[-3:])[p0])
            kicks = np.einsum("kn,knab->nab", inc[p0], dG)[None]
        dfp = np.broadcast_to(df, (sl.stop - sl.start,) + df.shape[-3:])
        e = _recursion(setup, np.zeros(setup.shape), dfp, kicks, times)
        form = np.sum(setup.lam * e ** 2, axis=(-2, -1))
        pair = np.sum(dfp * e, axis=(-2, -1))
        parts["lhs"][sl] = (0.5 * np.sum(e[:, -1] ** 2, axis=(-2, -1))
                            + np.sum(0.5 * (form[:, 1:] + form[:, :-1]) * dt, axis=1))
        parts["drift"][sl] = np.sum(0.5 * (pair[:, 1:] + pair[:, :-1]) * dt, axis=1)
        parts["martingale"][sl] = np.sum(e[:, :-1] * kicks, axis=(1, 2, 3))
        parts["correction"][sl] = 0.5 * np.sum(sq * dt)
    return RelativeEnergy(**parts)


def uniform_energy(run: FieldPath, setup: SpectralSetup | None = None) -> float:
    """``E[sup_t |u - u_b~|^2 + int (eps |grad u|^2 + mu |d''^2 u|^2)]``.

    Uses the per-step energy series recorded by :func:`solve_first_approx`.
    """
    l2 = run.extras["energy_l2"]
    form = run.extras["energy_form"]
    t = run.extras["all_times"]
    dissip = np.sum(0.5 * (form[:, 1:] + form[:, :-1]) * np.diff(t), axis=1)
    return float(np.mean(2.0 * l2.max(axis=1) + dissip))
