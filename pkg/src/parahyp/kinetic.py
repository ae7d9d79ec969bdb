"""Kinetic formulation diagnostics for finite-volume paths.

The viscous kinetic measure of a discrete path is deposited on cell faces.
Across an ``x''`` face with states ``uL, uR`` the deposit has mass
``(B(uR) - B(uL) + eps (uR - uL)) (uR - uL) / h^2`` per unit volume, spread
uniformly in ``xi`` over ``[uL, uR]``; ``x'`` faces carry
``eps (uR - uL)^2 / h^2``. The secant ``(B(uR) - B(uL)) / (uR - uL)`` is the
mean of ``b`` over the jump, so the sub-measure ``n_1`` built from
``(Sigma(uR) - Sigma(uL))^2 / h^2`` satisfies ``m >= n_1`` face by face
(Cauchy-Schwarz). Pairing the uniform spread with ``d_xi phi`` is exact:
``int_{uL}^{uR} d_xi rho = rho(uR) - rho(uL)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .fields import FieldPath, write_csv
from .model import ModelSpec, kruzhkov_fields
from .noise import NoisePath

__all__ = [
    "chi",
    "Bump1D",
    "TestFunction",
    "KineticMeasure",
    "KineticAssembler",
    "WeakResidual",
    "kinetic_measure",
    "kinetic_residual",
    "entropy_residual",
    "l1_contraction",
    "L1Contraction",
    "kruzhkov_inequality",
    "KruzhkovMargin",
    "ConvexityError",
    "SupportError",
]


class ConvexityError(ValueError):
    """Entropy function is not convex on the sampled range."""


class SupportError(ValueError):
    """Test function does not vanish where the weak form requires it."""


def chi(xi, u):
    """``1`` on ``0 < xi <= u``, ``-1`` on ``u <= xi < 0``, ``0`` otherwise."""
    xi = np.asarray(xi, float)
    u = np.asarray(u, float)
    pos = (xi > 0) & (xi <= u)
    neg = (xi < 0) & (xi >= u)
    return pos.astype(int) - neg.astype(int)


# -- test functions -----------------------------------------------------------

_BUMP = npoly.polypow([1.0, 0.0, -1.0], 4)       # (1 - s^2)^4 in s


@dataclass(frozen=True)
class Bump1D:
    """``(1 - s^2)^4`` with ``s`` mapping ``[lo, hi]`` onto ``[-1, 1]``; zero outside.

    ``C^3`` with all derivatives up to order three vanishing at the ends.
    """

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("bump needs hi > lo")

    @property
    def scale(self) -> float:
        return 2.0 / (self.hi - self.lo)

    def _s(self, x):
        return (2.0 * np.asarray(x, float) - self.lo - self.hi) / (self.hi - self.lo)

    def __call__(self, x, order: int = 0):
        s = self._s(x)
        c = npoly.polyder(_BUMP, order) if order > 0 else _BUMP
        val = npoly.polyval(np.clip(s, -1.0, 1.0), c) * self.scale ** order
        return np.where(np.abs(s) < 1.0, val, 0.0)

    def antiderivative(self, x, order: int = 0):
        """Primitive of the ``order``-th derivative, zero left of the support."""
        if order > 0:
            return self(x, order - 1)
        s = np.clip(self._s(x), -1.0, 1.0)
        c = npoly.polyint(_BUMP, lbnd=-1.0)
        return npoly.polyval(s, c) / self.scale

    def cell_average(self, edges, order: int = 0):
        """Exact averages of the ``order``-th derivative over consecutive cells."""
        edges = np.asarray(edges, float)
        F = self.antiderivative(edges, order)
        return np.diff(F) / np.diff(edges)


@dataclass(frozen=True)
class TestFunction:
    """Tensor test function ``theta(t) psi1(x') psi2(x'') rho(xi)``.

    A ``None`` factor is identically one. ``psi2`` must vanish on the
    Dirichlet boundary; ``psi1`` may be ``None`` (no constraint on the
    Neumann boundary in the entropy form) but kinetic residuals need a
    compactly supported ``psi1``.
    """

    __test__ = False      # keep pytest from collecting this class

    time: Bump1D | None
    x1: Bump1D | None
    x2: Bump1D
    xi: Bump1D | None = None

    def theta(self, t):
        return np.ones_like(np.asarray(t, float)) if self.time is None else self.time(t)

    def check(self, lengths, kinetic: bool):
        L1, L2 = lengths
        if self.x2.lo < 0.0 or self.x2.hi > L2:
            raise SupportError("x'' factor must be supported inside (0, L'')")
        if kinetic and (self.x1 is None or self.x1.lo < 0.0 or self.x1.hi > L1):
            raise SupportError("kinetic test functions must be compactly supported in x'")
        if kinetic and self.xi is None:
            raise SupportError("kinetic test functions need a xi factor")

    def spatial(self, edges1, edges2, d1: int = 0, d2: int = 0):
        """Cell averages of ``d1``/``d2`` derivatives of ``psi1 psi2``."""
        if self.x1 is None:
            p1 = np.full(edges1.size - 1, 1.0 if d1 == 0 else 0.0)
        else:
            p1 = self.x1.cell_average(edges1, d1)
        return np.outer(p1, self.x2.cell_average(edges2, d2))

    def face_x2(self, edges1, x2_faces):
        """Point values on interior ``x''`` faces (cell-averaged in ``x'``)."""
        p1 = np.ones(edges1.size - 1) if self.x1 is None else self.x1.cell_average(edges1)
        return np.outer(p1, self.x2(x2_faces))

    def face_x1(self, x1_faces, edges2):
        p1 = np.ones(x1_faces.size) if self.x1 is None else self.x1(x1_faces)
        return np.outer(p1, self.x2.cell_average(edges2))


# -- xi primitives ------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class _PrimitiveTable:
    """``F(u) = int_lo^u f`` tabulated on a uniform grid.

    Cells are integrated by 8-point Gauss-Legendre; evaluation uses the cubic
    Hermite interpolant built from ``F`` and the exact derivative ``f``.
    Arguments are clipped to ``[lo, hi]``.
    """

    def __init__(self, f: Callable, lo: float, hi: float, cells: int = 4096):
        self.f = f
        self.x = np.linspace(lo, hi, cells + 1)
        self.h = self.x[1] - self.x[0]
        nodes = self.x[:-1, None] + 0.5 * self.h * (_GL_X + 1.0)
        parts = 0.5 * self.h * np.sum(f(nodes) * _GL_W, axis=1)
        self.F = np.concatenate([[0.0], np.cumsum(parts)])
        self.df = f(self.x)

    def __call__(self, u):
        u = np.clip(np.asarray(u, float), self.x[0], self.x[-1])
        i = np.minimum(((u - self.x[0]) / self.h).astype(int), self.x.size - 2)
        s = (u - self.x[i]) / self.h
        s2, s3 = s * s, s * s * s
        return ((2 * s3 - 3 * s2 + 1) * self.F[i] + (s3 - 2 * s2 + s) * self.h * self.df[i]
                + (-2 * s3 + 3 * s2) * self.F[i + 1] + (s3 - s2) * self.h * self.df[i + 1])


def _xi_profile(test: TestFunction | None, eta):
    """``(Psi, rho, rho', lower)`` where ``Psi' = rho``.

    Kinetic tests use ``rho = xi`` factor; entropy tests use ``rho = eta'``.
    """
    if eta is not None:
        e0, e1, e2 = eta
        return e0, e1, e2, None
    rho = test.xi
    return (lambda u: rho.antiderivative(u)), rho, (lambda u: rho(u, 1)), rho.lo


# -- kinetic measure ----------------------------------------------------------

@dataclass
class KineticMeasure:
    """Histogram of the viscous kinetic measure and its ``n_1`` part.

    ``hist[s, i, j, q]`` is the ensemble-mean mass deposited in time slab
    ``s``, cell ``(i, j)`` and xi-bin ``q`` (face deposits split equally
    between the two adjacent cells, xi located at the face-mean state).
    """

    edges: np.ndarray
    slab_edges: np.ndarray
    hist: np.ndarray
    n1_hist: np.ndarray
    total: np.ndarray
    n1_total: np.ndarray
    outside: np.ndarray
    min_face_margin: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    def mean_total(self) -> float:
        return float(np.mean(self.total))

    def dominates_n1(self, rtol: float = 1e-12) -> bool:
        """``m >= n_1`` per histogram cell, up to relative rounding."""
        return bool(np.all(self.hist - self.n1_hist >= -rtol * np.max(self.hist, initial=0.0)))

    def to_csv(self, path):
        idx = np.argwhere(self.hist > 0)
        rows = ((int(s), int(i), int(j), int(q), float(self.hist[s, i, j, q]))
                for s, i, j, q in idx)
        write_csv(path, ["t_slab", "x1_cell", "x2_cell", "xi_bin", "mass"], rows)


class _MeasureBuilder:
    """Observer accumulating the kinetic measure of an advancing ensemble."""

    def __init__(self, model, eps, scheme, paths, bins=64, slabs=8):
        self.model, self.eps = model, eps
        self.h1, self.h2 = scheme.h(model)
        self.N = scheme.steps
        self.dt = scheme.dt
        self.edges = np.linspace(model.u_min - 0.05, model.u_max + 0.05, bins + 1)
        self.slabs = slabs
        shape = (slabs, scheme.n1, scheme.n2, bins)
        self.hist = np.zeros(shape)
        self.n1_hist = np.zeros(shape)
        self.P = paths
        self.total = np.zeros(paths)
        self.n1_total = np.zeros(paths)
        self.outside = np.zeros(paths)
        self.margin = np.full(paths, np.inf)

    def _bin(self, xi):
        q = np.floor((xi - self.edges[0]) / (self.edges[1] - self.edges[0])).astype(int)
        inside = (q >= 0) & (q < self.edges.size - 1)
        return np.clip(q, 0, self.edges.size - 2), inside

    def _deposit(self, target, s, mass, q, axis):
        # split each face deposit between its two neighbouring cells
        n1, n2, nb = target.shape[1:]
        if axis == 2:
            i, j = np.meshgrid(np.arange(n1), np.arange(n2 - 1), indexing="ij")
            cells = [(i, j), (i, j + 1)]
        else:
            i, j = np.meshgrid(np.arange(n1 - 1), np.arange(n2), indexing="ij")
            cells = [(i, j), (i + 1, j)]
        w = 0.5 * mass.ravel() / self.P
        for ci, cj in cells:
            lin = ((ci * n2 + cj) * nb)[None] + q
            target[s] += np.bincount(lin.ravel(), weights=w,
                                     minlength=n1 * n2 * nb).reshape(n1, n2, nb)

    def __call__(self, n, t0, t1, u, new, sl):
        vol = self.h1 * self.h2 * self.dt
        eps = self.eps
        B = self.model.diffusion(new)[..., 0]
        S = self.model.sigma_primitive(new)[..., 0]
        du2 = np.diff(new, axis=2)
        m2 = (np.diff(B, axis=2) + eps * du2) * du2 / self.h2 ** 2 * vol
        n12 = np.diff(S, axis=2) ** 2 / self.h2 ** 2 * vol
        du1 = np.diff(new, axis=1)
        m1 = eps * du1 ** 2 / self.h1 ** 2 * vol
        s = min(self.slabs - 1, n * self.slabs // self.N)
        xi2 = 0.5 * (new[:, :, 1:] + new[:, :, :-1])
        xi1 = 0.5 * (new[:, 1:] + new[:, :-1])
        q2, in2 = self._bin(xi2)
        q1, in1 = self._bin(xi1)
        self._deposit(self.hist, s, m2, q2, 2)
        self._deposit(self.n1_hist, s, n12, q2, 2)
        self._deposit(self.hist, s, m1, q1, 1)
        self.total[sl] += m2.sum(axis=(1, 2)) + m1.sum(axis=(1, 2))
        self.n1_total[sl] += n12.sum(axis=(1, 2))
        self.outside[sl] += (m2 * ~in2).sum(axis=(1, 2)) + (m1 * ~in1).sum(axis=(1, 2))
        self.margin[sl] = np.minimum(self.margin[sl], np.min(m2 - n12, axis=(1, 2)))

    def result(self) -> KineticMeasure:
        slab_edges = np.linspace(0.0, self.N * self.dt, self.slabs + 1)
        return KineticMeasure(self.edges, slab_edges, self.hist, self.n1_hist,
                              self.total, self.n1_total, self.outside, self.margin)


def kinetic_measure(model: ModelSpec, eps: float, noise, scheme, *, u0=None,
                    bins: int = 64, slabs: int = 8, chunk: int | None = None):
    """Run the viscous scheme and accumulate its kinetic measure online.

    Returns ``(run, measure)``; the run stores only initial and final states.
    """
    from .solver_eps import solve_second_approx
    P = 1 if isinstance(noise, NoisePath) else len(noise)
    builder = _MeasureBuilder(model, eps, scheme, P, bins, slabs)
    run = solve_second_approx(model, eps, noise, scheme, u0=u0, stride=scheme.steps,
                              observer=builder, chunk=chunk)
    return run, builder.result()


def measure_from_run(run: FieldPath, model: ModelSpec, eps: float, scheme,
                     bins: int = 64, slabs: int = 8) -> KineticMeasure:
    """Kinetic measure of a run stored at every step."""
    if run.meta.get("stride", 1) != 1:
        raise ValueError("run must store every step")
    builder = _MeasureBuilder(model, eps, scheme, run.paths, bins, slabs)
    sl = slice(0, run.paths)
    for n in range(run.times.size - 1):
        builder(n, run.times[n], run.times[n + 1], run.values[:, n], run.values[:, n + 1], sl)
    return builder.result()


# -- weak-form residuals ------------------------------------------------------

@dataclass
class WeakResidual:
    """Per-path terms of a kinetic or entropy weak form.

    ``defect = time + transport + diffusion - (noise + correction + measure)``
    where every term is signed as it appears in the weak form.
    """

    time: np.ndarray
    transport: np.ndarray
    diffusion: np.ndarray
    noise: np.ndarray
    correction: np.ndarray
    measure: np.ndarray

    @property
    def defect(self) -> np.ndarray:
        return (self.time + self.transport + self.diffusion
                - (self.noise + self.correction + self.measure))

    @property
    def scale(self) -> np.ndarray:
        """Sum of absolute term sizes, for relative statements."""
        return sum(np.abs(v) for v in (self.time, self.transport, self.diffusion,
                                       self.noise, self.correction, self.measure))


class KineticAssembler:
    """Observer assembling weak-form terms for a list of test functions.

    Terms paired with the implicit parabolic part (diffusion and measure)
    use ``u^{n+1}`` and ``theta(t_{n+1})``; transport, noise and the Itô
    correction use ``u^n`` and ``theta(t_n)``; the time term is
    ``sum_n <Psi(u^n), theta(t_{n+1}) - theta(t_n)>`` plus the initial and
    final pairings.
    """

    def __init__(self, model: ModelSpec, eps: float, scheme, noise, tests,
                 etas=None):
        if isinstance(noise, NoisePath):
            noise = [noise]
        self.inc = np.stack([nz.increments for nz in noise])
        self.model, self.eps = model, eps
        self.h1, self.h2 = scheme.h(model)
        L1, L2 = model.lengths
        self.e1 = np.linspace(0.0, L1, scheme.n1 + 1)
        self.e2 = np.linspace(0.0, L2, scheme.n2 + 1)
        self.tests = list(tests)
        self.etas = list(etas) if etas is not None else [None] * len(self.tests)
        P = self.inc.shape[0]
        self.acc = [{k: np.zeros(P) for k in
                     ("time", "transport", "diffusion", "noise", "correction", "measure")}
                    for _ in self.tests]
        self.cell = self.h1 * self.h2
        self.prepared = []
        a = lambda x: model.flux_deriv(x)
        bfun = lambda x: model.diffusion_deriv(x)[..., 0]
        lo, hi = model.u_min - 1.0, model.u_max + 1.0
        probe = np.linspace(lo, hi, 257)
        self.second_flux = bool(np.any(model.flux_deriv(probe)[..., 1] != 0.0))
        zero = lambda u: np.zeros(np.shape(u))
        for test, eta in zip(self.tests, self.etas):
            Psi, rho, drho, _ = _xi_profile(test, eta)
            self.prepared.append(dict(
                Psi=Psi, rho=rho, drho=drho,
                A1=_PrimitiveTable(lambda x, r=rho: a(x)[..., 0] * r(x), lo, hi),
                A2=(_PrimitiveTable(lambda x, r=rho: a(x)[..., 1] * r(x), lo, hi)
                    if self.second_flux else zero),
                Bp=_PrimitiveTable(lambda x, r=rho: bfun(x) * r(x), lo, hi),
                d0=test.spatial(self.e1, self.e2),
                dx1=test.spatial(self.e1, self.e2, 1, 0),
                dx2=test.spatial(self.e1, self.e2, 0, 1),
                dxx1=test.spatial(self.e1, self.e2, 2, 0),
                dxx2=test.spatial(self.e1, self.e2, 0, 2),
                f2=test.face_x2(self.e1, self.e2[1:-1]),
                f1=test.face_x1(self.e1[1:-1], self.e2),
            ))

    def start(self, u0, t0):
        for test, prep, acc in zip(self.tests, self.prepared, self.acc):
            acc["time"] += test.theta(t0) * np.sum(prep["Psi"](u0) * prep["d0"], axis=(1, 2)) * self.cell

    def finish(self, uN, tN):
        for test, prep, acc in zip(self.tests, self.prepared, self.acc):
            acc["time"] -= test.theta(tN) * np.sum(prep["Psi"](uN) * prep["d0"], axis=(1, 2)) * self.cell

    def __call__(self, n, t0, t1, u, new, sl):
        m = self.model
        eps = self.eps
        dt = t1 - t0
        cell = self.cell
        g = m.noise_values(u)
        kick = np.einsum("kpij,pk->pij", g, self.inc[sl, :, n])
        G2 = (g ** 2).sum(axis=0)
        B_new = m.diffusion(new)[..., 0]
        du2 = np.diff(new, axis=2)
        du1 = np.diff(new, axis=1)
        mflux2 = np.diff(B_new, axis=2) + eps * du2
        mflux1 = eps * du1
        for test, prep, acc in zip(self.tests, self.prepared, self.acc):
            th0, th1 = test.theta(t0), test.theta(t1)
            Psi_u = prep["Psi"](u)
            acc["time"][sl] += (th1 - th0) * np.sum(Psi_u * prep["d0"], axis=(1, 2)) * cell
            tr = prep["A1"](u) * prep["dx1"]
            if self.second_flux:
                tr = tr + prep["A2"](u) * prep["dx2"]
            acc["transport"][sl] += dt * th0 * np.sum(tr, axis=(1, 2)) * cell
            Psi_n = prep["Psi"](new)
            dif = ((prep["Bp"](new) + eps * Psi_n) * prep["dxx2"] + eps * Psi_n * prep["dxx1"])
            acc["diffusion"][sl] += dt * th1 * np.sum(dif, axis=(1, 2)) * cell
            rho_u = prep["rho"](u)
            acc["noise"][sl] -= th0 * np.sum(rho_u * kick * prep["d0"], axis=(1, 2)) * cell
            acc["correction"][sl] -= 0.5 * dt * th0 * np.sum(
                G2 * prep["drho"](u) * prep["d0"], axis=(1, 2)) * cell
            rho_n = prep["rho"](new)
            meas = (np.sum(mflux2 * np.diff(rho_n, axis=2) * prep["f2"], axis=(1, 2)) / self.h2 ** 2
                    + np.sum(mflux1 * np.diff(rho_n, axis=1) * prep["f1"], axis=(1, 2)) / self.h1 ** 2)
            acc["measure"][sl] += dt * th1 * meas * cell

    def results(self) -> list[WeakResidual]:
        return [WeakResidual(**acc) for acc in self.acc]


def _run_with_assembler(model, eps, noise, scheme, tests, etas, u0=None, run=None,
                        boundary=None):
    from .solver_eps import solve_second_approx, _initial_state, cell_centres
    asm = KineticAssembler(model, eps, scheme, noise, tests, etas)
    if run is None:
        x1 = cell_centres(model.lengths[0], scheme.n1)
        x2 = cell_centres(model.lengths[1], scheme.n2)
        P = asm.inc.shape[0]
        asm.start(_initial_state(model, u0, x1, x2, P), 0.0)
        run = solve_second_approx(model, eps, noise, scheme, u0=u0, stride=scheme.steps,
                                  observer=asm, boundary=boundary)
    else:
        if run.meta.get("stride", 1) != 1:
            raise ValueError("run must store every step")
        asm.start(run.values[:, 0], run.times[0])
        sl = slice(0, run.paths)
        for n in range(run.times.size - 1):
            asm(n, run.times[n], run.times[n + 1], run.values[:, n], run.values[:, n + 1], sl)
    asm.finish(run.values[:, -1], run.times[-1])
    return asm.results()


def kinetic_residual(model: ModelSpec, eps: float, noise, scheme,
                     tests: TestFunction | Sequence[TestFunction], *, u0=None,
                     run: FieldPath | None = None, boundary=None):
    """Defect of the kinetic weak form for tensor test functions.

    Either integrates the scheme on the fly (default) or post-processes a
    run stored at every step. Returns one :class:`WeakResidual` per test.
    """
    single = isinstance(tests, TestFunction)
    tests = [tests] if single else list(tests)
    for t in tests:
        t.check(model.lengths, kinetic=True)
    out = _run_with_assembler(model, eps, noise, scheme, tests, None, u0, run, boundary)
    return out[0] if single else out


def _check_convex(eta2, model):
    u = np.linspace(model.u_min - 0.05, model.u_max + 0.05, 513)
    if np.any(np.asarray(eta2(u)) < 0):
        raise ConvexityError("entropy has negative second derivative on the range")


def entropy_residual(model: ModelSpec, eps: float, noise, scheme, eta,
                     tests: TestFunction | Sequence[TestFunction], *, u0=None,
                     run: FieldPath | None = None, require_convex: bool = True,
                     boundary=None):
    """Defect of the entropy weak form for ``eta = (eta, eta', eta'')``.

    The parabolic flux term enters as ``+<B_eta(u), d''^2 phi>``; with the
    viscous measure on the right the defect measures the scheme's extra
    (numerical) entropy dissipation and is expected to be nonnegative up to
    discretisation error. Test functions have no xi factor.
    """
    if require_convex:
        _check_convex(eta[2], model)
    single = isinstance(tests, TestFunction)
    tests = [tests] if single else list(tests)
    for t in tests:
        t.check(model.lengths, kinetic=False)
    out = _run_with_assembler(model, eps, noise, scheme, tests, [eta] * len(tests), u0, run,
                              boundary)
    return out[0] if single else out


# -- uniqueness diagnostics -----------------------------------------------------

@dataclass
class L1Contraction:
    """``E int |u(t) - v(t)|`` against the initial distance."""

    times: np.ndarray
    lhs: np.ndarray
    lhs_ci: np.ndarray
    rhs: float
    rhs_ci: float

    def margin(self, slack: float = 0.02) -> np.ndarray:
        """``rhs (1 + slack) + CI - lhs``; nonnegative when the bound holds."""
        return self.rhs * (1.0 + slack) + self.lhs_ci - self.lhs

    def holds(self, slack: float = 0.02) -> bool:
        return bool(np.all(self.margin(slack) >= 0))

    def nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.lhs) <= self.lhs_ci[1:]))


def _ci(samples):
    P = samples.shape[0]
    if P < 2:
        return np.zeros(samples.shape[1:])
    return 1.96 * samples.std(axis=0, ddof=1) / np.sqrt(P)


def l1_contraction(model: ModelSpec, eps: float, noise, scheme, u0, v0,
                   *, stride: int = 10, chunk: int | None = None) -> L1Contraction:
    """Paired-noise ensembles from two initial data with shared boundary data."""
    from .solver_eps import solve_second_approx
    ru = solve_second_approx(model, eps, noise, scheme, u0=u0, stride=stride, chunk=chunk)
    rv = solve_second_approx(model, eps, noise, scheme, u0=v0, stride=stride, chunk=chunk)
    h1, h2 = ru.h
    dist = np.abs(ru.values - rv.values).sum(axis=(2, 3)) * h1 * h2
    return L1Contraction(ru.times, dist.mean(axis=0), _ci(dist),
                         float(dist[:, 0].mean()), float(_ci(dist[:, :1])[0]))


@dataclass
class KruzhkovMargin:
    """Both sides of the Kruzhkov inequality with Monte Carlo error."""

    lhs: float
    rhs: float
    ci: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def kruzhkov_inequality(model: ModelSpec, eps: float, ru: FieldPath, rv: FieldPath,
                        theta: Bump1D, psi1: Bump1D, psi2: Bump1D | None) -> KruzhkovMargin:
    r"""``-E int |u - v| theta' psi <= E int theta [F . grad psi + BB d''^2 psi]``.

    ``F`` and ``BB`` are the Kruzhkov entropy fluxes of the model; for
    viscous runs the term ``eps |u - v| Laplace psi`` is added. ``theta``
    must be supported in ``(0, T)`` and ``psi1`` inside ``O'``; ``psi2`` may
    be ``None`` (constant in ``x''``), which is admissible when both runs
    share the Dirichlet data.
    """
    T = ru.times[-1]
    if theta.lo < 0.0 or theta.hi > T:
        raise SupportError("theta must be supported in (0, T)")
    L1, L2 = model.lengths
    if psi1.lo < 0.0 or psi1.hi > L1:
        raise SupportError("psi must be compactly supported in x'")
    if not np.array_equal(ru.times, rv.times):
        raise ValueError("runs must share their time grid")
    e1 = np.linspace(0.0, L1, ru.x1.size + 1)
    e2 = np.linspace(0.0, L2, ru.x2.size + 1)
    if psi2 is None:
        p2 = [np.ones(ru.x2.size), np.zeros(ru.x2.size), np.zeros(ru.x2.size)]
    else:
        p2 = [psi2.cell_average(e2, k) for k in range(3)]
    p1 = [psi1.cell_average(e1, k) for k in range(3)]
    psi = np.outer(p1[0], p2[0])
    dpsi1 = np.outer(p1[1], p2[0])
    dpsi2 = np.outer(p1[0], p2[1])
    lap1 = np.outer(p1[2], p2[0])
    lap2 = np.outer(p1[0], p2[2])
    cell = (L1 / ru.x1.size) * (L2 / ru.x2.size)
    t = ru.times
    # trapezoid in time over the stored samples
    w = np.full(t.size, 0.0)
    dtv = np.diff(t)
    w[:-1] += 0.5 * dtv
    w[1:] += 0.5 * dtv
    lhs_p = np.zeros(ru.paths)
    rhs_p = np.zeros(ru.paths)
    for i in range(t.size):
        u, v = ru.values[:, i], rv.values[:, i]
        kf = kruzhkov_fields(model, u, v)
        absd = np.abs(u - v)
        lhs_p -= w[i] * theta(t[i], 1) * np.sum(absd * psi, axis=(1, 2)) * cell
        r = (kf["F"][..., 0] * dpsi1 + kf["F"][..., 1] * dpsi2 + kf["B"][..., 0] * lap2
             + eps * absd * (lap1 + lap2))
        rhs_p += w[i] * theta(t[i]) * np.sum(r, axis=(1, 2)) * cell
    diff = rhs_p - lhs_p
    return KruzhkovMargin(float(lhs_p.mean()), float(rhs_p.mean()), float(_ci(diff[:, None])[0]))
