"""Truncated cylindrical Wiener noise and Itô integrals.

Increments are drawn from counter-based Philox streams keyed by
``(seed, k)``; entry ``i`` of row ``k`` is the i-th normal of that stream, so
any entry depends only on ``(seed, k, i)`` and never on evaluation order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ModelSpec
from .spectral import TensorOperator

__all__ = [
    "NoisePath",
    "sample_noise",
    "path_seed",
    "phi_apply",
    "stochastic_convolution",
    "ito_sum",
]

_MASK = (1 << 64) - 1


def path_seed(base_seed: int, path: int) -> int:
    """Deterministic 64-bit seed for path ``path`` of an ensemble."""
    ss = np.random.SeedSequence([int(base_seed) & _MASK, int(path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Brownian increments ``dbeta[k, i] ~ N(0, t[i+1] - t[i])``."""

    seed: int
    times: np.ndarray
    increments: np.ndarray

    @property
    def K(self) -> int:
        return self.increments.shape[0]

    @property
    def N(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def coarsen(self, factor: int) -> "NoisePath":
        """Sum consecutive increments; the coarse path is the same Brownian path."""
        if self.N % factor:
            raise ValueError("number of steps is not divisible by factor")
        inc = self.increments.reshape(self.K, self.N // factor, factor).sum(axis=2)
        return NoisePath(self.seed, self.times[::factor].copy(), inc)

    def brownian(self) -> np.ndarray:
        """Cumulative paths ``beta_k(t_i)``, shape ``(K, N + 1)``."""
        out = np.zeros((self.K, self.N + 1))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def with_increments(self, increments) -> "NoisePath":
        return NoisePath(self.seed, self.times, np.asarray(increments, float))

    # -- binary dump --------------------------------------------------------
    def to_bytes(self) -> bytes:
        head = struct.pack("<QQQ", self.seed & _MASK, self.K, self.N)
        body = np.ascontiguousarray(self.times, dtype="<f8").tobytes()
        body += np.ascontiguousarray(self.increments, dtype="<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "NoisePath":
        seed, K, N = struct.unpack_from("<QQQ", blob, 0)
        off = 24
        times = np.frombuffer(blob, dtype="<f8", count=N + 1, offset=off).astype(float)
        off += 8 * (N + 1)
        inc = np.frombuffer(blob, dtype="<f8", count=K * N, offset=off).astype(float)
        return cls(int(seed), times, inc.reshape(K, N))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "NoisePath":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def sample_noise(seed: int, K: int, times) -> NoisePath:
    """Draw the increment table for ``K`` modes on the grid ``times``."""
    times = np.asarray(times, dtype=float)
    if K < 0:
        raise ValueError("K must be nonnegative")
    if times.ndim != 1 or times.size < 2:
        raise ValueError("time grid needs at least two points")
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must start at 0 and be strictly increasing")
    N = times.size - 1
    scale = np.sqrt(np.diff(times))
    inc = np.empty((K, N))
    for k in range(K):
        gen = np.random.Generator(np.random.Philox(key=[int(seed) & _MASK, k]))
        inc[k] = gen.standard_normal(N) * scale
    return NoisePath(int(seed) & _MASK, times.copy(), inc)


def phi_apply(model: ModelSpec, u) -> np.ndarray:
    """Rows ``g_k(u(x))`` of the noise operator applied to ``u``."""
    return model.noise_values(u)


def ito_sum(integrand: Callable[[int], np.ndarray], noise: NoisePath) -> np.ndarray:
    """Left-point sums ``sum_{i<n} sum_k psi_k(t_i) dbeta_k(t_i)`` for all n.

    ``integrand(i)`` returns an array with leading axis K.
    """
    out = None
    for i in range(noise.N):
        term = np.tensordot(noise.increments[:, i], integrand(i), axes=(0, 0))
        if out is None:
            out = np.zeros((noise.N + 1,) + term.shape)
        out[i + 1] = out[i] + term
    return out


def stochastic_convolution(op: TensorOperator,
                           integrand: Callable[[int], np.ndarray],
                           noise: NoisePath) -> np.ndarray:
    """``sum_{i<n} S(t_n - t_i) Psi(t_i) dbeta(t_i)`` on coefficients.

    Parameters
    ----------
    integrand : callable
        ``integrand(i)`` returns coefficient arrays of shape ``(K, M1, M2)``
        built from information up to step ``i`` only; it is called in
        increasing order of ``i`` and never sees later increments.

    Returns
    -------
    ndarray, shape (N + 1, M1, M2)
    """
    lam = op.eigenvalues
    out = np.zeros((noise.N + 1,) + op.shape)
    for i in range(noise.N):
        psi = np.asarray(integrand(i))
        if psi.shape != (noise.K,) + op.shape:
            raise ValueError(f"integrand shape {psi.shape} does not match "
                             f"{(noise.K,) + op.shape}")
        kick = np.tensordot(noise.increments[:, i], psi, axes=(0, 0))
        out[i + 1] = np.exp(-lam * (noise.times[i + 1] - noise.times[i])) * (out[i] + kick)
    return out
