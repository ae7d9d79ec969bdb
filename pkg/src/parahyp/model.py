r"""Coefficient structure of the mixed hyperbolic-parabolic SPDE

.. math::

    du + \nabla\cdot A(u)\,dt = D^2_{x''}:B(u)\,dt + \Phi(u)\,dW

on the rectangle :math:`O' \times O''`, together with executable checks of
the structural hypotheses placed on :math:`A, B, \sigma, g_k`.

All coefficient callables act elementwise on numpy arrays. Vector valued
maps (flux, diffusion diagonal) append a trailing component axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray
ScalarFn = Callable[[Array], Array]

__all__ = [
    "ModelSpec",
    "HypothesisCheck",
    "HypothesisReport",
    "EvaluationError",
    "default_model",
    "linear_model",
    "constant_diffusion_model",
    "get_model",
    "MODEL_NAMES",
    "validate_hypotheses",
    "kruzhkov_fields",
    "eval_primitives",
]


class EvaluationError(ValueError):
    """A coefficient returned a non-finite value."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Immutable description of one equation instance.

    Parameters
    ----------
    name : str
        Identifier written into run metadata.
    flux, flux_deriv : callable
        ``A(u)`` and ``a(u)``, returning arrays with a trailing axis of
        length ``d_prime + d_dprime``.
    diffusion, diffusion_deriv : callable
        Diagonal entries of ``B(u)`` and ``b(u)``, trailing axis of length
        ``d_dprime``.
    bracket, bracket_deriv : callable
        The monotone scalar function controlling the degeneracy of ``b``
        and its derivative.
    noise, noise_deriv, noise_deriv2 : sequence of callable
        ``g_k`` and its first two derivatives.
    u_range : (float, float)
        Invariant interval ``[u_min, u_max]``.
    initial : callable
        ``u0(x1, x2)`` on broadcastable coordinate arrays.
    boundary : callable
        ``u_b(t, x1)`` on the parabolic boundary (both faces).
    """

    name: str
    flux: ScalarFn
    flux_deriv: ScalarFn
    diffusion: ScalarFn
    diffusion_deriv: ScalarFn
    bracket: ScalarFn
    bracket_deriv: ScalarFn
    noise: Sequence[ScalarFn] = ()
    noise_deriv: Sequence[ScalarFn] = ()
    noise_deriv2: Sequence[ScalarFn] = ()
    u_range: tuple[float, float] = (0.0, 1.0)
    lengths: tuple[float, float] = (1.0, 1.0)
    d_prime: int = 1
    d_dprime: int = 1
    initial: Callable[[Array, Array], Array] | None = None
    boundary: Callable[[float, Array], Array] | None = None
    params: dict = field(default_factory=dict)

    # -- derived coefficients ---------------------------------------------
    @property
    def dim(self) -> int:
        return self.d_prime + self.d_dprime

    @property
    def K(self) -> int:
        return len(self.noise)

    @property
    def u_min(self) -> float:
        return float(self.u_range[0])

    @property
    def u_max(self) -> float:
        return float(self.u_range[1])

    def sigma(self, u):
        """Square root of the (diagonal) diffusion derivative."""
        return np.sqrt(np.maximum(self.diffusion_deriv(u), 0.0))

    def sigma_primitive(self, u):
        """``Sigma(u) = int_0^u sigma``, one column per parabolic direction."""
        grid, table = self._sigma_table()
        u = np.asarray(u, dtype=float)
        flat = u.reshape(-1)
        if np.any((flat < grid[0]) | (flat > grid[-1])):
            raise EvaluationError(
                f"sigma_primitive: argument outside cached grid [{grid[0]}, {grid[-1]}]")
        right = np.clip(np.searchsorted(grid, flat), 1, grid.size - 1)
        idx = np.where(flat - grid[right - 1] <= grid[right] - flat, right - 1, right)
        base = grid[idx]
        # local Simpson from the nearest node to u
        s0, sm, s1 = self.sigma(base), self.sigma(0.5 * (base + flat)), self.sigma(flat)
        out = table[idx] + (flat - base)[:, None] * (s0 + 4.0 * sm + s1) / 6.0
        return out.reshape(u.shape + (self.d_dprime,))

    def _sigma_table(self):
        cache = self.__dict__.get("_sigma_cache")
        if cache is None:
            lo, hi = self.u_min - 1.0, self.u_max + 1.0
            # composite Simpson on 1024 cells; u = 0 is a node so the
            # degeneracy point never sits inside a cell
            n_left = max(1, int(round(1024 * (0.0 - lo) / (hi - lo))))
            if lo < 0.0 < hi:
                grid = np.concatenate([np.linspace(lo, 0.0, n_left + 1),
                                       np.linspace(0.0, hi, 1024 - n_left + 1)[1:]])
            else:
                grid = np.linspace(lo, hi, 1025)
            s0, s1 = self.sigma(grid[:-1]), self.sigma(grid[1:])
            sm = self.sigma(0.5 * (grid[:-1] + grid[1:]))
            cells = np.diff(grid)[:, None] * (s0 + 4.0 * sm + s1) / 6.0
            table = np.concatenate([np.zeros((1, cells.shape[1])),
                                    np.cumsum(cells, axis=0)])
            i0 = int(np.argmin(np.abs(grid)))
            x0 = grid[i0]
            corr = (0.0 - x0) * (self.sigma(x0) + 4.0 * self.sigma(0.5 * x0)
                                 + self.sigma(0.0)) / 6.0
            table = table - (table[i0] + corr)
            cache = (grid, table)
            object.__setattr__(self, "_sigma_cache", cache)
        return cache

    def noise_values(self, u):
        """Stack ``g_k(u)`` along a new leading axis of length K."""
        u = np.asarray(u, dtype=float)
        if not self.noise:
            return np.zeros((0,) + u.shape)
        return np.stack([g(u) for g in self.noise])

    def noise_square_sum(self, u):
        """``G^2(u) = sum_k g_k(u)^2``."""
        g = self.noise_values(u)
        return np.sum(g * g, axis=0)

    def u0(self, x1, x2):
        if self.initial is None:
            return np.full(np.broadcast(x1, x2).shape, self.u_min)
        return np.asarray(self.initial(x1, x2), dtype=float)

    def ub(self, t, x1):
        if self.boundary is None:
            return np.full(np.shape(x1), self.u_min, dtype=float)
        return np.broadcast_to(np.asarray(self.boundary(t, x1), dtype=float),
                               np.shape(x1))

    def replace(self, **changes) -> "ModelSpec":
        """Return a copy with some fields swapped out."""
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return ModelSpec(**kw)


# -- named models -----------------------------------------------------------

def _bump_initial(x1, x2):
    return 0.8 * np.sin(np.pi * x2) ** 2 * (0.55 + 0.45 * np.cos(np.pi * x1))


def _sine_noise(K, amplitude=1.0):
    g, dg, d2g = [], [], []
    for k in range(1, K + 1):
        a = amplitude * 2.0 ** (-k)
        g.append(lambda u, a=a: a * np.sin(np.pi * np.asarray(u, float)))
        dg.append(lambda u, a=a: a * np.pi * np.cos(np.pi * np.asarray(u, float)))
        d2g.append(lambda u, a=a: -a * np.pi ** 2 * np.sin(np.pi * np.asarray(u, float)))
    return tuple(g), tuple(dg), tuple(d2g)


def _stack2(first, second):
    return np.stack([first, second], axis=-1)


def default_model(n: int = 2, K: int = 8, noise_amplitude: float = 1.0,
                  initial=None, boundary=None) -> ModelSpec:
    """Quartic double-well flux with power-law degenerate diffusion.

    ``A_1 = u^2 (1-u)^2 / 2``, ``A_2 = 0``, ``B_22 = |u|^n u / (n+1)``,
    ``g_k = 2^{-k} sin(pi u)``.
    """
    def flux(u):
        u = np.asarray(u, float)
        return _stack2(0.5 * u ** 2 * (1 - u) ** 2, np.zeros_like(u))

    def flux_deriv(u):
        u = np.asarray(u, float)
        return _stack2(u * (1 - u) * (1 - 2 * u), np.zeros_like(u))

    def diffusion(u):
        u = np.asarray(u, float)
        return (np.abs(u) ** n * u / (n + 1))[..., None]

    def diffusion_deriv(u):
        u = np.asarray(u, float)
        return (np.abs(u) ** n)[..., None]

    half = n / 2.0

    def bracket(u):
        u = np.asarray(u, float)
        return np.sign(u) * np.abs(u) ** (half + 1) / (half + 1)

    def bracket_deriv(u):
        return np.abs(np.asarray(u, float)) ** half

    g, dg, d2g = _sine_noise(K, noise_amplitude)
    return ModelSpec(
        name="default-powerlaw", flux=flux, flux_deriv=flux_deriv,
        diffusion=diffusion, diffusion_deriv=diffusion_deriv,
        bracket=bracket, bracket_deriv=bracket_deriv,
        noise=g, noise_deriv=dg, noise_deriv2=d2g,
        initial=initial or _bump_initial, boundary=boundary,
        params={"n": n, "K": K, "noise_amplitude": noise_amplitude})


def linear_model(drift: float = 0.0, diffusion: float = 1.0,
                 initial=None, boundary=None) -> ModelSpec:
    """Linear transport plus constant diffusion, no noise.

    ``A_1 = drift * u``, ``B_22 = diffusion * u``.
    """
    c = float(diffusion)
    root = np.sqrt(c)

    def flux(u):
        u = np.asarray(u, float)
        return _stack2(drift * u, np.zeros_like(u))

    def flux_deriv(u):
        u = np.asarray(u, float)
        return _stack2(np.full_like(u, drift), np.zeros_like(u))

    return ModelSpec(
        name="linear", flux=flux, flux_deriv=flux_deriv,
        diffusion=lambda u: (c * np.asarray(u, float))[..., None],
        diffusion_deriv=lambda u: np.full(np.shape(u) + (1,), c),
        bracket=lambda u: root * np.asarray(u, float),
        bracket_deriv=lambda u: np.full(np.shape(u), root),
        initial=initial or _bump_initial, boundary=boundary,
        params={"drift": drift, "diffusion": c})


def constant_diffusion_model(diffusion: float = 0.1, K: int = 8,
                             noise_amplitude: float = 1.0,
                             initial=None, boundary=None) -> ModelSpec:
    """Default flux and noise with nondegenerate constant diffusion."""
    base = default_model(K=K, noise_amplitude=noise_amplitude)
    c = float(diffusion)
    root = np.sqrt(c)
    return base.replace(
        name="constant-diffusion",
        diffusion=lambda u: (c * np.asarray(u, float))[..., None],
        diffusion_deriv=lambda u: np.full(np.shape(u) + (1,), c),
        bracket=lambda u: root * np.asarray(u, float),
        bracket_deriv=lambda u: np.full(np.shape(u), root),
        initial=initial or _bump_initial, boundary=boundary,
        params={"diffusion": c, "K": K, "noise_amplitude": noise_amplitude})


_FACTORIES = {
    "default-powerlaw": default_model,
    "linear": linear_model,
    "constant-diffusion": constant_diffusion_model,
}
MODEL_NAMES = tuple(_FACTORIES)


def get_model(name: str, **params) -> ModelSpec:
    """Build a named model, forwarding keyword parameters to its factory."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}")
    return factory(**params)


# -- hypothesis checks ------------------------------------------------------

@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    constant: float
    detail: str = ""


@dataclass
class HypothesisReport:
    model: str
    checks: list[HypothesisCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self):
        return [(c.name, c.passed, c.constant, c.detail) for c in self.checks]


def _finite(name, fn, u):
    vals = np.asarray(fn(u), dtype=float)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        where = np.argwhere(bad)[0]
        arg = np.asarray(u).reshape(-1)[where[0] if np.ndim(u) else 0]
        raise EvaluationError(f"{name} is not finite at u = {arg!r}")
    return vals


def validate_hypotheses(model: ModelSpec, sample_count: int = 512) -> HypothesisReport:
    """Check every structural hypothesis on a deterministic sample grid.

    Constants (bracket ratio, Hölder exponent, noise sum) are measured as the
    tightest values found on the grid.
    """
    if sample_count < 16:
        raise ValueError("sample_count must be at least 16")
    lo, hi = model.u_min - 1.0, model.u_max + 1.0
    u = np.linspace(lo, hi, sample_count)
    tol = 1e-12
    checks = []

    A = _finite("flux", model.flux, u)
    a = _finite("flux_deriv", model.flux_deriv, u)
    B = _finite("diffusion", model.diffusion, u)
    b = _finite("diffusion_deriv", model.diffusion_deriv, u)
    db = _finite("bracket_deriv", model.bracket_deriv, u)
    _finite("bracket", model.bracket, u)
    sig = model.sigma(u)
    del A, B

    # symmetric nonnegative diffusion derivative (diagonal storage)
    checks.append(HypothesisCheck("b-nonnegative", bool(np.all(b >= -tol)),
                                  float(b.min())))

    # bracket ratio: on a diagonal matrix xi^T b xi / |xi|^2 spans [min b_ii, max b_ii]
    mask = db > 1e-8
    lo_ratio = b.min(axis=-1)[mask] / db[mask] ** 2
    hi_ratio = b.max(axis=-1)[mask] / db[mask] ** 2
    zero_ok = np.all(np.abs(b[~mask]) <= 1e-12 + 1e-6 * np.abs(db[~mask, None]))
    lam = float(hi_ratio.max()) if hi_ratio.size else 1.0
    ok = bool(np.all(lo_ratio >= 1.0 - 1e-10)) and np.isfinite(lam) and zero_ok
    checks.append(HypothesisCheck("bracket-b", ok, lam,
                                  f"min ratio {lo_ratio.min():.6g}"))

    lo_s = sig.min(axis=-1)[mask] / db[mask]
    hi_s = sig.max(axis=-1)[mask] / db[mask]
    lam_s = float(hi_s.max()) if hi_s.size else 1.0
    ok = bool(np.all(lo_s >= 1.0 - 1e-10)) and lam_s <= np.sqrt(lam) * (1 + 1e-10)
    checks.append(HypothesisCheck("bracket-sigma", ok, lam_s ** 2,
                                  f"min ratio {lo_s.min():.6g}"))

    bd = model.bracket(np.linspace(lo, hi, 4 * sample_count))
    checks.append(HypothesisCheck("bracket-monotone", bool(np.all(np.diff(bd) > 0)),
                                  float(np.diff(bd).min())))

    # Hölder exponent of sigma: slope of the worst-case modulus of continuity
    steps = np.logspace(-6, -0.5, 12)
    base = u[u < hi - 0.5]
    modulus = np.array([np.max(np.abs(model.sigma(base + h) - model.sigma(base)))
                        for h in steps])
    if np.all(modulus <= 1e-14):
        gamma = 1.0
    else:
        pos = modulus > 1e-14
        gamma = float(np.min(np.diff(np.log(modulus[pos])) / np.diff(np.log(steps[pos]))))
        gamma = min(gamma, 1.0)
    checks.append(HypothesisCheck("sigma-holder", gamma > 0.5, gamma))

    # noise bounds and summability
    alphas = []
    for k, (g, dg, d2g) in enumerate(zip(model.noise, model.noise_deriv, model.noise_deriv2)):
        g0 = abs(float(_finite(f"g_{k+1}", g, np.array([0.0]))[0]))
        s = np.abs(_finite(f"g_{k+1}'", dg, u)) + np.abs(_finite(f"g_{k+1}''", d2g, u))
        alphas.append(g0 + float(s.max()))
    D = 4.0 * float(np.sum(np.square(alphas)))
    checks.append(HypothesisCheck("noise-bound", bool(np.isfinite(D)), D,
                                  "alpha = " + ",".join(f"{x:.6g}" for x in alphas)))

    # endpoint conditions
    ends = np.array([model.u_min, model.u_max])
    Aend = model.flux(ends)[..., :model.d_prime]
    checks.append(HypothesisCheck("flux-endpoints", bool(np.all(np.abs(Aend) <= tol)),
                                  float(np.abs(Aend).max())))
    gend = max((float(np.abs(g(ends)).max()) for g in model.noise), default=0.0)
    checks.append(HypothesisCheck("noise-endpoints", gend <= tol, gend))

    # data in range
    x = np.linspace(0, model.lengths[0], 65)
    y = np.linspace(0, model.lengths[1], 65)
    u0 = model.u0(x[:, None], y[None, :])
    ub = np.concatenate([model.ub(t, x) for t in (0.0, 0.5, 1.0)])
    inside = (u0.min() >= model.u_min - tol and u0.max() <= model.u_max + tol
              and ub.min() >= model.u_min - tol and ub.max() <= model.u_max + tol)
    checks.append(HypothesisCheck("data-in-range", bool(inside),
                                  float(max(u0.max(), ub.max()))))
    del a
    return HypothesisReport(model.name, checks)


def kruzhkov_fields(model: ModelSpec, u, v) -> dict:
    """Entropy-flux triples ``sgn(u-v)(X(u)-X(v))`` and positive-part versions.

    Works elementwise on arrays; vector outputs carry a trailing axis.
    """
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    s = np.sign(u - v)
    sp = (u > v).astype(float)
    dA = model.flux(u) - model.flux(v)
    dB = model.diffusion(u) - model.diffusion(v)
    dG = model.noise_values(u) - model.noise_values(v)
    return {
        "F": s[..., None] * dA,
        "B": s[..., None] * dB,
        "G": s[None] * dG,
        "F_plus": sp[..., None] * dA,
        "B_plus": sp[..., None] * dB,
        "G_plus": sp[None] * dG,
    }


def eval_primitives(model: ModelSpec, u) -> dict:
    """All coefficient evaluations at ``u``."""
    u = np.asarray(u, float)
    return {
        "A": model.flux(u),
        "a": model.flux_deriv(u),
        "B": model.diffusion(u),
        "b": model.diffusion_deriv(u),
        "sigma": model.sigma(u),
        "Sigma": model.sigma_primitive(u),
        "bracket": model.bracket(u),
    }
