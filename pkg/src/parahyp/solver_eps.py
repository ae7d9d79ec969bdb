"""Viscous second-order problem solved path-wise by finite volumes.

Cell-centred grid on ``(0, L') x (0, L'')``; ``x'`` carries the Neumann
(zero total flux) boundary, ``x''`` the Dirichlet boundary. One step is

1. explicit Rusanov advection and Euler-Maruyama noise,
2. implicit viscous diffusion ``eps d'^2`` in ``x'``,
3. implicit diffusion ``d''((b(u) + eps) d'' u)`` in ``x''`` with lagged
   harmonic-mean face coefficients and ghost cells for the boundary data.

All arrays carry a leading path axis so an ensemble advances in lockstep;
every operation is elementwise along that axis, so a path's trajectory does
not depend on which other paths share the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .fields import FieldPath
from .model import ModelSpec
from .noise import NoisePath

__all__ = [
    "SchemeParams",
    "CFLError",
    "solve_second_approx",
    "comparison_check",
    "ComparisonResult",
    "ito_chain_residual",
    "energy_estimate_eps",
    "smoothed_positive_part",
    "neumann_ghost",
    "cell_centres",
    "max_wave_speed",
]


class CFLError(ValueError):
    """Explicit part of the scheme violates its stability bound."""


def cell_centres(L: float, n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) * (L / n)


def max_wave_speed(model: ModelSpec, samples: int = 2049) -> np.ndarray:
    """``max |a_i(u)|`` over the admissible range, per direction."""
    u = np.linspace(model.u_min, model.u_max, samples)
    return np.max(np.abs(model.flux_deriv(u)), axis=0)


@dataclass(frozen=True)
class SchemeParams:
    """Grid and time-step parameters of the finite-volume scheme.

    Attributes
    ----------
    n1, n2 : int
        Cells in ``x'`` and ``x''``.
    dt : float
        Time step.
    T : float
        Final time.
    flux : str
        ``"upwind"`` (Rusanov) or ``"central"`` (no numerical viscosity).
    cfl_limit : float
        Bound on ``dt * max|a| / h`` for the explicit advection.
    """

    n1: int = 32
    n2: int = 32
    dt: float = 1e-3
    T: float = 0.25
    flux: str = "upwind"
    cfl_limit: float = 0.9

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.steps * self.dt, self.steps + 1)

    def h(self, model: ModelSpec):
        return model.lengths[0] / self.n1, model.lengths[1] / self.n2

    def cfl(self, model: ModelSpec) -> float:
        """Explicit CFL number; only the advection is explicit."""
        h1, h2 = self.h(model)
        a = max_wave_speed(model)
        return float(self.dt * (a[0] / h1 + a[1] / h2))

    def check(self, model: ModelSpec) -> float:
        if self.flux not in ("upwind", "central"):
            raise ValueError(f"unknown flux splitting {self.flux!r}")
        if self.n1 < 2 or self.n2 < 2 or self.dt <= 0:
            raise ValueError("grid needs at least two cells per direction and dt > 0")
        c = self.cfl(model)
        if c > self.cfl_limit:
            raise CFLError(f"CFL number {c:.4g} exceeds {self.cfl_limit}")
        return c


# -- numerical fluxes -------------------------------------------------------

def _rusanov(A, a, uL, uR, upwind=True):
    """Rusanov flux for one component; the speed is sampled over the pair."""
    f = 0.5 * (A(uL) + A(uR))
    if not upwind:
        return f
    s = np.abs(a(uL))
    for w in (0.25, 0.5, 0.75, 1.0):
        s = np.maximum(s, np.abs(a(uL + w * (uR - uL))))
    return f - 0.5 * s * (uR - uL)


def _component(fn, i):
    return lambda u: fn(u)[..., i]


def _harmonic(bl, br):
    s = bl + br
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where((bl > 0) & (br > 0), 2.0 * bl * br / np.where(s > 0, s, 1.0), 0.0)
    return out


def neumann_ghost(model: ModelSpec, eps: float, h: float, u_in, side: int,
                  tol: float = 1e-12):
    """Ghost value realising ``eps du/dnu = A(u).nu`` on a ``x'`` face.

    The face flux uses a Rusanov flux with the global wave speed, which makes
    the residual strictly monotone in the ghost value; the root is bracketed
    in ``[u_min - 1, u_max + 1]`` and found by vectorised bisection.
    ``side`` is 0 for ``x' = 0`` (outward normal ``-e1``) and 1 for ``x' = L'``.
    """
    u_in = np.asarray(u_in, float)
    A1 = _component(model.flux, 0)
    s = float(max_wave_speed(model)[0])
    nu = -1.0 if side == 0 else 1.0

    def resid(g):
        # eps du/dnu - A(u).nu, written as a flux out of the domain
        uL, uR = (g, u_in) if side == 0 else (u_in, g)
        F = 0.5 * (A1(uL) + A1(uR)) - 0.5 * s * (uR - uL)
        return eps * (g - u_in) / h - nu * F

    lo = np.full_like(u_in, model.u_min - 1.0)
    hi = np.full_like(u_in, model.u_max + 1.0)
    rlo = resid(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        rm = resid(mid)
        left = np.sign(rm) == np.sign(rlo)
        lo = np.where(left, mid, lo)
        rlo = np.where(left, rm, rlo)
        hi = np.where(left, hi, mid)
        if np.max(hi - lo) < tol:
            break
    return 0.5 * (lo + hi)


# -- tridiagonal solves -----------------------------------------------------

def _thomas(lower, diag, upper, rhs):
    """Batched Thomas algorithm along the last axis."""
    n = diag.shape[-1]
    c = np.empty_like(diag)
    d = np.empty_like(rhs)
    c[..., 0] = upper[..., 0] / diag[..., 0]
    d[..., 0] = rhs[..., 0] / diag[..., 0]
    for i in range(1, n):
        m = diag[..., i] - lower[..., i] * c[..., i - 1]
        c[..., i] = upper[..., i] / m
        d[..., i] = (rhs[..., i] - lower[..., i] * d[..., i - 1]) / m
    x = np.empty_like(rhs)
    x[..., -1] = d[..., -1]
    for i in range(n - 2, -1, -1):
        x[..., i] = d[..., i] - c[..., i] * x[..., i + 1]
    return x


# -- stepping ---------------------------------------------------------------

@dataclass
class _Stepper:
    model: ModelSpec
    eps: float
    scheme: SchemeParams
    x1: np.ndarray
    boundary: Callable

    def __post_init__(self):
        m = self.model
        self.h1, self.h2 = self.scheme.h(m)
        self.A1 = _component(m.flux, 0)
        self.A2 = _component(m.flux, 1)
        self.a1 = _component(m.flux_deriv, 0)
        self.a2 = _component(m.flux_deriv, 1)
        self.upwind = self.scheme.flux == "upwind"
        n1, dt = self.scheme.n1, self.scheme.dt
        r = dt * self.eps / self.h1 ** 2
        ab = np.zeros((3, n1))
        ab[0, 1:] = -r
        ab[2, :-1] = -r
        ab[1] = 1.0 + 2.0 * r
        ab[1, 0] -= r
        ab[1, -1] -= r
        self.ab1 = ab

    def b(self, u):
        return self.model.diffusion_deriv(u)[..., 0]

    def explicit(self, u, t, inc):
        """Advection plus noise; returns the new state and Γ'' advective flux."""
        dt, h1, h2 = self.scheme.dt, self.h1, self.h2
        P, n1, n2 = u.shape
        ub = self.boundary(t)                                  # (n1,)
        # x' faces: zero total flux on Γ'
        F1 = np.zeros((P, n1 + 1, n2))
        F1[:, 1:-1] = _rusanov(self.A1, self.a1, u[:, :-1], u[:, 1:], self.upwind)
        # x'' faces: boundary data enter as outer states
        ext = np.empty((P, n1, n2 + 2))
        ext[:, :, 1:-1] = u
        ext[:, :, 0] = ub
        ext[:, :, -1] = ub
        F2 = _rusanov(self.A2, self.a2, ext[:, :, :-1], ext[:, :, 1:], self.upwind)
        div = (F1[:, 1:] - F1[:, :-1]) / h1 + (F2[:, :, 1:] - F2[:, :, :-1]) / h2
        new = u - dt * div
        for k, g in enumerate(self.model.noise):
            new = new + g(u) * inc[:, k, None, None]
        # outward advective flux through Γ'' (per unit x', integrated over x')
        out = (F2[:, :, -1] - F2[:, :, 0]).sum(axis=1) * h1
        return new, out

    def implicit_x1(self, u):
        P, n1, n2 = u.shape
        rhs = np.moveaxis(u, 1, 0).reshape(n1, -1)
        sol = solve_banded((1, 1), self.ab1, rhs)
        return np.moveaxis(sol.reshape(n1, P, n2), 0, 1)

    def face_coeffs(self, u, t):
        """``b + eps`` on x'' faces (lagged), boundary faces included."""
        ub = self.boundary(t)[None, :, None]
        bc = self.b(u)
        bb = np.broadcast_to(self.b(ub), u.shape[:2] + (1,))
        bext = np.concatenate([bb, bc, bb], axis=-1)
        return _harmonic(bext[..., :-1], bext[..., 1:]) + self.eps

    def implicit_x2(self, u, t_new):
        """Implicit x'' diffusion; returns new state and outward diffusive flux."""
        dt, h1, h2 = self.scheme.dt, self.h1, self.h2
        k = self.face_coeffs(u, t_new)                         # (P, n1, n2 + 1)
        ub = self.boundary(t_new)[None, :]
        r = dt / h2 ** 2
        lower = -r * k[..., :-1]
        upper = -r * k[..., 1:]
        diag = 1.0 + r * (k[..., :-1] + k[..., 1:])
        # ghost 2 u_b - u_in: boundary faces have doubled conductance
        diag[..., 0] += r * k[..., 0]
        diag[..., -1] += r * k[..., -1]
        rhs = u.copy()
        rhs[..., 0] += 2.0 * r * k[..., 0] * ub
        rhs[..., -1] += 2.0 * r * k[..., -1] * ub
        new = _thomas(lower, diag, upper, rhs)
        # outward flux -k du/dnu through both Dirichlet faces, integrated over x'
        q0 = 2.0 * k[..., 0] * (new[..., 0] - ub) / h2
        qL = 2.0 * k[..., -1] * (new[..., -1] - ub) / h2
        return new, (q0 + qL).sum(axis=-1) * h1

    def step(self, u, t, t_new, inc):
        v, adv = self.explicit(u, t, inc)
        v = self.implicit_x1(v)
        v, dif = self.implicit_x2(v, t_new)
        return v, adv + dif


def _initial_state(model, u0, x1, x2, P):
    if u0 is None:
        base = model.u0(x1[:, None], x2[None, :])
    elif callable(u0):
        base = u0(x1[:, None], x2[None, :])
    else:
        base = np.asarray(u0, float)
    base = np.broadcast_to(base, (P, x1.size, x2.size))
    return np.array(base, dtype=float)


def solve_second_approx(model: ModelSpec, eps: float, noise, scheme: SchemeParams,
                        *, u0=None, boundary: Callable | None = None, stride: int = 1,
                        observer: Callable | None = None,
                        chunk: int | None = None) -> FieldPath:
    """Advance one path per noise realisation.

    Parameters
    ----------
    noise : NoisePath or sequence of NoisePath
        Increments on the scheme's time grid (one per path).
    u0 : array or callable, optional
        Override of the model's initial field on the cell centres.
    boundary : callable, optional
        ``u_b(t, x1)``; defaults to the model's boundary data.
    stride : int
        Store every ``stride``-th step (the final step is always stored).
    observer : callable, optional
        Called as ``observer(n, t_n, t_{n+1}, u_n, u_{n+1}, paths)`` after
        every step, with ``paths`` the slice of ensemble indices.

    Returns
    -------
    FieldPath
        ``extras`` holds per-step masses, boundary fluxes and energy terms.
    """
    if isinstance(noise, NoisePath):
        noise = [noise]
    noise = list(noise)
    cfl = scheme.check(model)
    times = scheme.times()
    if not np.allclose(noise[0].times, times, rtol=0, atol=1e-12):
        raise ValueError("noise grid does not match the scheme's time grid")
    if noise[0].K != model.K:
        raise ValueError(f"noise has {noise[0].K} modes, model {model.K}")
    P = len(noise)
    inc = np.stack([nz.increments for nz in noise])        # (P, K, N)
    x1 = cell_centres(model.lengths[0], scheme.n1)
    x2 = cell_centres(model.lengths[1], scheme.n2)
    bfun = boundary or model.ub
    st = _Stepper(model, eps, scheme, x1, lambda t: np.asarray(bfun(t, x1), float))
    N = times.size - 1
    store = np.arange(0, N + 1, stride)
    if store[-1] != N:
        store = np.append(store, N)
    slot = {int(n): i for i, n in enumerate(store)}
    vals = np.empty((P, store.size, scheme.n1, scheme.n2))
    cell = st.h1 * st.h2
    mass = np.empty((P, N + 1))
    bflux = np.zeros((P, N))
    l2 = np.empty((P, N + 1))
    grad_b = np.zeros((P, N))
    grad_x1 = np.zeros((P, N))
    chunk = chunk or P
    for p0 in range(0, P, chunk):
        sl = slice(p0, min(P, p0 + chunk))
        u = _initial_state(model, u0, x1, x2, sl.stop - sl.start)
        vals[sl, 0] = u
        mass[sl, 0] = u.sum(axis=(1, 2)) * cell
        l2[sl, 0] = (u ** 2).sum(axis=(1, 2)) * cell
        for n in range(N):
            new, out = st.step(u, times[n], times[n + 1], inc[sl, :, n])
            if not np.all(np.isfinite(new)):
                raise FloatingPointError(f"non-finite state at step {n + 1}")
            bflux[sl, n] = out
            mass[sl, n + 1] = new.sum(axis=(1, 2)) * cell
            l2[sl, n + 1] = (new ** 2).sum(axis=(1, 2)) * cell
            bb = model.bracket(new)
            grad_b[sl, n] = (np.diff(bb, axis=2) ** 2).sum(axis=(1, 2)) * cell / st.h2 ** 2
            grad_x1[sl, n] = eps * (np.diff(new, axis=1) ** 2).sum(axis=(1, 2)) * cell / st.h1 ** 2
            if observer is not None:
                observer(n, times[n], times[n + 1], u, new, sl)
            u = new
            if n + 1 in slot:
                vals[sl, slot[n + 1]] = u
    meta = {"solver": "finite-volume", "model": model.name, "eps": eps,
            "seeds": [nz.seed for nz in noise], "cfl": cfl,
            "h1": st.h1, "h2": st.h2, "stride": stride, **asdict(scheme)}
    extras = {"mass": mass, "boundary_flux": bflux, "l2": l2, "grad_b": grad_b,
              "grad_x1": grad_x1, "all_times": times}
    return FieldPath(times[store], x1, x2, vals, meta, None, extras)


# -- comparison -------------------------------------------------------------

@dataclass
class ComparisonResult:
    """Positive-part violation of the comparison principle."""

    sup_violation: float
    integral: np.ndarray          # (P, T) values of int (u - v)_+ dx
    initial: np.ndarray           # (P,) int (u0 - v0)_+ dx
    times: np.ndarray

    def mean_integral(self):
        return self.integral.mean(axis=0)

    def ci95(self):
        P = self.integral.shape[0]
        if P < 2:
            return np.zeros(self.integral.shape[1])
        return 1.96 * self.integral.std(axis=0, ddof=1) / np.sqrt(P)


def comparison_check(model: ModelSpec, eps: float, noise, scheme: SchemeParams,
                     u0, v0, *, ub=None, vb=None, stride: int = 1) -> ComparisonResult:
    """Run two ordered data sets on shared noise and measure ``(u - v)_+``."""
    ru = solve_second_approx(model, eps, noise, scheme, u0=u0, boundary=ub, stride=stride)
    rv = solve_second_approx(model, eps, noise, scheme, u0=v0, boundary=vb, stride=stride)
    h1, h2 = ru.h
    pos = np.maximum(ru.values - rv.values, 0.0)
    integ = pos.sum(axis=(2, 3)) * h1 * h2
    return ComparisonResult(float(pos.max()), integ, integ[:, 0].copy(), ru.times)


# -- Itô chain rule ---------------------------------------------------------

def smoothed_positive_part(delta: float):
    """Convex ``C^2`` approximation of ``max(u, 0)`` with ``eta'' = 1/delta`` on (0, delta)."""
    def eta(u):
        u = np.asarray(u, float)
        return np.where(u <= 0, 0.0, np.where(u < delta, u ** 2 / (2 * delta), u - delta / 2))

    def d1(u):
        u = np.asarray(u, float)
        return np.clip(u / delta, 0.0, 1.0)

    def d2(u):
        u = np.asarray(u, float)
        return np.where((u > 0) & (u < delta), 1.0 / delta, 0.0)

    return eta, d1, d2


@dataclass
class ChainRuleTerms:
    """Per-path terms of the discrete Itô chain rule at final time.

    ``defect = lhs - (time_term + flux - dissipation + martingale + correction)``.
    """

    lhs: np.ndarray
    time_term: np.ndarray
    flux: np.ndarray
    dissipation: np.ndarray
    martingale: np.ndarray
    correction: np.ndarray

    @property
    def defect(self) -> np.ndarray:
        return self.lhs - (self.time_term + self.flux - self.dissipation
                           + self.martingale + self.correction)


def _diffusion_pairing(F, w_cell, theta, eta1, axis, h, cell, left=None, right=None):
    """Split ``sum_i w_i (F_{i+1/2} - F_{i-1/2})`` with ``w = theta eta'``.

    ``F`` holds the interior face fluxes along ``axis``; ``left``/``right``
    are boundary face fluxes (absent means zero). Returns the dissipation
    ``sum F avg(theta) diff(eta')`` and the remaining flux part, with the
    identity ``pairing = -dissipation - rest``.
    """
    tm = 0.5 * (np.take(theta, range(1, theta.shape[axis - 1]), axis=axis - 1)
                + np.take(theta, range(0, theta.shape[axis - 1] - 1), axis=axis - 1))
    em = 0.5 * (np.take(eta1, range(1, eta1.shape[axis]), axis=axis)
                + np.take(eta1, range(0, eta1.shape[axis] - 1), axis=axis))
    diss = np.sum(F * tm * np.diff(eta1, axis=axis), axis=(1, 2)) * cell / h
    rest = np.sum(F * em * np.diff(theta, axis=axis - 1), axis=(1, 2)) * cell / h
    if right is not None:
        last = np.take(w_cell, -1, axis=axis)
        first = np.take(w_cell, 0, axis=axis)
        rest = rest - (np.sum(last * right, axis=1) - np.sum(first * left, axis=1)) * cell / h
    return diss, rest


def ito_chain_residual(model: ModelSpec, eps: float, noise, scheme: SchemeParams,
                       eta: tuple[Callable, Callable, Callable],
                       theta: Callable | None = None, *, u0=None) -> ChainRuleTerms:
    r"""Terms of the Itô chain rule for ``int eta(u) theta`` on a discrete path.

    The identity evaluated is

    .. math::

        \int \eta(u_T)\theta_T - \int \eta(u_0)\theta_0
            = \iint \eta(u)\partial_t\theta
            - \iint \eta'(u)\,q\cdot\nabla\theta + \text{boundary terms}
            - \iint \eta''(u)\,q\cdot\nabla u\,\theta
            + \sum_k\iint \eta'(u) g_k(u)\theta\, d\beta_k
            + \tfrac12\iint \eta''(u) \sum_k g_k(u)^2\theta,

    with ``q = eps grad u + (0, b grad'' u) - A(u)``. Each sub-step of the
    scheme is paired with the state it is evaluated at, so the defect
    consists only of second-order Taylor remainders of ``eta`` over a step.
    ``dissipation`` is the ``eta''`` term; it is nonnegative for convex
    ``eta`` and ``theta >= 0``. ``theta(t, x1, x2)`` defaults to 1.
    """
    eta0, eta1, eta2 = eta
    if isinstance(noise, NoisePath):
        noise = [noise]
    noise = list(noise)
    scheme.check(model)
    times = scheme.times()
    inc = np.stack([nz.increments for nz in noise])
    P = len(noise)
    x1 = cell_centres(model.lengths[0], scheme.n1)
    x2 = cell_centres(model.lengths[1], scheme.n2)
    st = _Stepper(model, eps, scheme, x1, lambda t: np.asarray(model.ub(t, x1), float))
    h1, h2 = st.h1, st.h2
    cell = h1 * h2
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    th = theta or (lambda t, a, b: np.ones_like(a))
    acc = {k: np.zeros(P) for k in ("time_term", "flux", "dissipation", "martingale", "correction")}
    u = _initial_state(model, u0, x1, x2, P)
    start = np.sum(eta0(u) * th(times[0], X1, X2), axis=(1, 2)) * cell
    for n in range(times.size - 1):
        t0, t1 = times[n], times[n + 1]
        dt = t1 - t0
        T0 = th(t0, X1, X2)
        T1 = th(t1, X1, X2)
        # explicit advection and noise, paired with the old state
        ub = st.boundary(t0)
        F1 = np.zeros((P, scheme.n1 + 1, scheme.n2))
        F1[:, 1:-1] = _rusanov(st.A1, st.a1, u[:, :-1], u[:, 1:], st.upwind)
        ext = np.concatenate([np.broadcast_to(ub[None, :, None], (P, scheme.n1, 1)), u,
                              np.broadcast_to(ub[None, :, None], (P, scheme.n1, 1))], axis=2)
        F2 = _rusanov(st.A2, st.a2, ext[:, :, :-1], ext[:, :, 1:], st.upwind)
        div = (F1[:, 1:] - F1[:, :-1]) / h1 + (F2[:, :, 1:] - F2[:, :, :-1]) / h2
        e1 = eta1(u)
        acc["flux"] -= dt * np.sum(T0 * e1 * div, axis=(1, 2)) * cell
        g = model.noise_values(u)
        kick = np.einsum("kpij,pk->pij", g, inc[:, :, n])
        acc["martingale"] += np.sum(T0 * e1 * kick, axis=(1, 2)) * cell
        acc["correction"] += 0.5 * dt * np.sum(T0 * eta2(u) * (g ** 2).sum(axis=0),
                                               axis=(1, 2)) * cell
        v1 = u - dt * div + kick
        # implicit x' diffusion, paired with its result
        v2 = st.implicit_x1(v1)
        Fx = eps * np.diff(v2, axis=1) / h1
        d, r = _diffusion_pairing(Fx, None, T0, eta1(v2), 1, h1, cell)
        acc["dissipation"] += dt * d
        acc["flux"] -= dt * r
        # implicit x'' diffusion with lagged coefficients
        k = st.face_coeffs(v2, t1)
        v3, _ = st.implicit_x2(v2, t1)
        ub1 = st.boundary(t1)[None, :]
        Fy = k[..., 1:-1] * np.diff(v3, axis=2) / h2
        left = 2.0 * k[..., 0] * (v3[..., 0] - ub1) / h2
        right = 2.0 * k[..., -1] * (ub1 - v3[..., -1]) / h2
        w = T0 * eta1(v3)
        d, r = _diffusion_pairing(Fy, w, T0, eta1(v3), 2, h2, cell, left, right)
        acc["dissipation"] += dt * d
        acc["flux"] -= dt * r
        acc["time_term"] += np.sum(eta0(v3) * (T1 - T0), axis=(1, 2)) * cell
        u = v3
    lhs = np.sum(eta0(u) * th(times[-1], X1, X2), axis=(1, 2)) * cell - start
    return ChainRuleTerms(lhs, **acc)


# -- energy -----------------------------------------------------------------

def energy_estimate_eps(run: FieldPath) -> float:
    """``E[sup_t |u|^2 + int (|grad'' b(u)|^2 + eps |grad' u|^2)]`` over the ensemble."""
    t = run.extras["all_times"]
    dt = np.diff(t)
    l2 = run.extras["l2"]
    grads = (run.extras["grad_b"] + run.extras["grad_x1"]) * dt
    return float(np.mean(l2.max(axis=1) + grads.sum(axis=1)))
