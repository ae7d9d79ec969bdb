"""Eigensystems of the elliptic operators used by the spectral fixed point.

One-dimensional factors
-----------------------
``neumann``    ``-eps d^2``, ``phi' = 0`` at both ends (cosine modes, k >= 0)
``dirichlet``  ``-eps d^2``, ``phi = 0`` at both ends (sine modes, k >= 1)
``clamped``    ``mu d^4 - eps d^2``, ``phi = phi' = 0`` at both ends

Two-dimensional operators are tensor products; eigenvalues add. Fields are
stored as coefficient matrices ``c[m1, m2]`` against ``phi1_m1 (x) phi2_m2``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "ModeSystem1D",
    "TensorOperator",
    "SpectralField",
    "SpectralConstructionError",
    "build_modes_1d",
    "tensorize",
    "semigroup_apply",
    "intermediate_norm",
    "smoothing_sup",
    "clamped_characteristic",
]

KINDS = ("neumann", "dirichlet", "clamped")


class SpectralConstructionError(RuntimeError):
    pass


def clamped_characteristic(q, p, length):
    """Scaled 4x4 boundary determinant of the clamped problem.

    The fundamental solutions ``cosh(px), sinh(px), cos(qx), sin(qx)`` are
    recombined as ``exp(-px), exp(-p(L-x)), cos(qx), sin(qx)`` (same span,
    no overflow). Zeros in ``q`` are the clamped wavenumbers.
    """
    e = np.exp(-p * length)
    c, s = np.cos(q * length), np.sin(q * length)
    M = np.array([
        [1.0, e, 1.0, 0.0],
        [-p, p * e, 0.0, q],
        [e, 1.0, c, s],
        [-p * e, p, -q * s, q * c],
    ])
    return M


def _clamped_det(q, eps, mu, length):
    p = np.sqrt(q * q + eps / mu)
    M = clamped_characteristic(q, p, length)
    # divide by a q-independent scale to keep values O(1)
    return np.linalg.det(M) / (1.0 + p * q)


@dataclass(frozen=True, eq=False)
class ModeSystem1D:
    """Eigenpairs of one factor operator on ``(0, length)``.

    Eigenfunctions are L2-normalised; ``derivative(x, order)`` returns an
    array of shape ``(count, len(x))``.
    """

    kind: str
    eps: float
    mu: float
    length: float
    count: int
    eigenvalues: np.ndarray
    wavenumbers: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    _coef: np.ndarray | None = field(default=None, repr=False)
    _expo: np.ndarray | None = field(default=None, repr=False)

    def values(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, order: int = 0):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = self.wavenumbers[:, None]
        L = self.length
        if self.kind == "neumann":
            amp = np.where(self.wavenumbers[:, None] == 0, np.sqrt(1 / L), np.sqrt(2 / L))
            return amp * _trig_derivative(np.cos, k, x, order)
        if self.kind == "dirichlet":
            return np.sqrt(2 / L) * _trig_derivative(np.sin, k, x, order)
        # clamped
        p = self._expo[:, None]
        a, b, c, d = (self._coef[:, j, None] for j in range(4))
        left = np.exp(-p * x)
        right = np.exp(-p * (L - x))
        out = (a * (-p) ** order * left + b * p ** order * right
               + c * _trig_derivative(np.cos, k, x, order)
               + d * _trig_derivative(np.sin, k, x, order))
        return out

    def quadrature_matrix(self, order: int = 0):
        """Basis (or derivative) values at the quadrature nodes."""
        return self.derivative(self.nodes, order)

    def gram(self):
        V = self.quadrature_matrix()
        return (V * self.weights) @ V.T


def _trig_derivative(fn, k, x, order):
    # d^n/dx^n of cos(kx) / sin(kx)
    shift = order % 4
    phase = k * x
    if fn is np.cos:
        table = (np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z), np.sin)
    else:
        table = (np.sin, np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z))
    return k ** order * table[shift](phase)


def _gauss(count, length, oversample=4):
    n = max(oversample * count, 8)
    z, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * length * (z + 1.0), 0.5 * length * w


def build_modes_1d(kind: str, eps: float, mu: float, length: float, count: int,
                   oversample: int = 4) -> ModeSystem1D:
    """Construct the first ``count`` eigenpairs of a factor operator.

    Parameters
    ----------
    kind : {'neumann', 'dirichlet', 'clamped'}
    eps : float
        Coefficient of ``-d^2``.
    mu : float
        Coefficient of ``d^4``; must be positive exactly for ``clamped``.
    length : float
    count : int
    """
    if kind not in KINDS:
        raise ValueError(f"unknown mode kind {kind!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if (kind == "clamped") != (mu > 0):
        raise ValueError("mu > 0 is required exactly for the clamped kind")
    nodes, weights = _gauss(count, length, oversample)
    if kind == "neumann":
        k = np.arange(count) * np.pi / length
        return ModeSystem1D(kind, eps, mu, length, count, eps * k ** 2, k, nodes, weights)
    if kind == "dirichlet":
        k = np.arange(1, count + 1) * np.pi / length
        return ModeSystem1D(kind, eps, mu, length, count, eps * k ** 2, k, nodes, weights)

    q = _clamped_wavenumbers(eps, mu, length, count)
    p = np.sqrt(q ** 2 + eps / mu)
    coef = np.empty((count, 4))
    for j in range(count):
        M = clamped_characteristic(q[j], p[j], length)
        _, _, vt = np.linalg.svd(M)
        coef[j] = vt[-1]
    sysm = ModeSystem1D(kind, eps, mu, length, count, mu * p ** 2 * q ** 2, q,
                        nodes, weights, coef, p)
    # normalise and fix sign (positive curvature at the left end)
    norms = np.sqrt(np.sum(sysm.quadrature_matrix() ** 2 * weights, axis=1))
    sign = np.sign(sysm.derivative(np.array([0.0]), 2)[:, 0])
    sign[sign == 0] = 1.0
    coef = coef * (sign / norms)[:, None]
    return ModeSystem1D(kind, eps, mu, length, count, mu * p ** 2 * q ** 2, q,
                        nodes, weights, coef, p)


def _clamped_wavenumbers(eps, mu, length, count):
    # brackets seeded by the eps = 0 asymptotics (j + 1/2) pi / L; the eps > 0
    # roots move towards j pi / L, so every bracket spans [j pi, (j + 1) pi]
    roots = []
    for j in range(1, count + 1):
        lo, hi = j * np.pi / length, (j + 1) * np.pi / length
        grid = np.linspace(lo, hi, 33)[1:-1]
        grid = np.concatenate([[lo * (1 + 1e-9)], grid, [hi * (1 - 1e-9)]])
        vals = np.array([_clamped_det(g, eps, mu, length) for g in grid])
        flips = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        if flips.size != 1:
            raise SpectralConstructionError(
                f"clamped mode {j}: expected one sign change of the boundary "
                f"determinant in [{lo:.6g}, {hi:.6g}], found {flips.size}")
        i = flips[0]
        roots.append(brentq(_clamped_det, grid[i], grid[i + 1],
                            args=(eps, mu, length), xtol=1e-14, rtol=1e-15,
                            maxiter=500))
    return np.array(roots)


@dataclass(frozen=True, eq=False)
class TensorOperator:
    """Tensor product of two factor systems, first factor along ``x'``."""

    first: ModeSystem1D
    second: ModeSystem1D

    @property
    def shape(self):
        return (self.first.count, self.second.count)

    @property
    def eigenvalues(self):
        """Eigenvalue table ``lam[m1, m2]``."""
        return self.first.eigenvalues[:, None] + self.second.eigenvalues[None, :]

    @property
    def order(self):
        """Mode indices sorted by eigenvalue, ties by lexicographic index."""
        lam = self.eigenvalues
        i, j = np.meshgrid(np.arange(self.shape[0]), np.arange(self.shape[1]),
                           indexing="ij")
        perm = np.lexsort((j.ravel(), i.ravel(), lam.ravel()))
        return np.stack([i.ravel()[perm], j.ravel()[perm]], axis=1)

    def sorted_eigenvalues(self):
        idx = self.order
        return self.eigenvalues[idx[:, 0], idx[:, 1]]

    # -- quadrature grid ----------------------------------------------------
    @property
    def grid(self):
        return self.first.nodes, self.second.nodes

    @property
    def weights(self):
        return self.first.weights[:, None] * self.second.weights[None, :]

    def to_grid(self, coeffs, d1: int = 0, d2: int = 0, x1=None, x2=None):
        """Evaluate (a derivative of) a coefficient array on a tensor grid.

        Leading batch axes of ``coeffs`` are preserved.
        """
        V1 = self.first.derivative(self.first.nodes if x1 is None else x1, d1)
        V2 = self.second.derivative(self.second.nodes if x2 is None else x2, d2)
        coeffs = np.asarray(coeffs)
        if coeffs.shape[-2:] != self.shape:
            raise ValueError(f"coefficient shape {coeffs.shape[-2:]} != {self.shape}")
        return np.matmul(np.matmul(V1.T, coeffs), V2)

    def from_grid(self, values, d1: int = 0, d2: int = 0):
        """Project grid values onto (derivatives of) the basis.

        ``from_grid(F, d1, d2)[m1, m2] = int F * D^{d1} phi1 * D^{d2} phi2``.
        """
        values = np.asarray(values)
        n = (self.first.nodes.size, self.second.nodes.size)
        if values.shape[-2:] != n:
            raise ValueError(f"grid shape {values.shape[-2:]} != {n}")
        V1 = self.first.quadrature_matrix(d1) * self.first.weights
        V2 = self.second.quadrature_matrix(d2) * self.second.weights
        return np.matmul(np.matmul(V1, values), V2.T)

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["direction", "index", "eigenvalue", "boundary_kind"])
            for name, s in (("x1", self.first), ("x2", self.second)):
                for j, lam in enumerate(s.eigenvalues):
                    w.writerow([name, j, f"{lam:.17g}", s.kind])


def tensorize(first: ModeSystem1D, second: ModeSystem1D) -> TensorOperator:
    return TensorOperator(first, second)


@dataclass
class SpectralField:
    """Coefficient array bound to its operator."""

    coeffs: np.ndarray
    op: TensorOperator

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[-2:] != self.op.shape:
            raise ValueError("coefficient shape does not match operator")

    @classmethod
    def from_grid(cls, values, op: TensorOperator) -> "SpectralField":
        return cls(op.from_grid(values), op)

    def to_grid(self):
        return self.op.to_grid(self.coeffs)


def semigroup_apply(op: TensorOperator, t: float, fld: SpectralField) -> SpectralField:
    """``S(t) = exp(-t A)`` acting on coefficients."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return SpectralField(fld.coeffs.copy(), op)
    return SpectralField(fld.coeffs * np.exp(-t * op.eigenvalues), op)


def intermediate_norm(fld: SpectralField, alpha: float) -> float:
    """``(sum (1 + lam)^{2 alpha} |c|^2)^{1/2}``."""
    w = (1.0 + fld.op.eigenvalues) ** (2.0 * alpha)
    return float(np.sqrt(np.sum(w * fld.coeffs ** 2)))


def smoothing_sup(eigenvalues, s: float, t: float) -> float:
    """``max_j lam_j^s exp(-t lam_j)`` over the supplied eigenvalues."""
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    return float(np.max(lam ** s * np.exp(-t * lam)))
