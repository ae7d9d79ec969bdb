"""Space-time samples of solution paths and their persistence."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["FieldPath", "write_csv", "format_float"]


def format_float(x) -> str:
    """17 significant digits, enough for an exact float64 round trip."""
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    """Write a CSV with a mandatory header; floats use 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v
                        for v in row])


@dataclass
class FieldPath:
    """An ensemble of sampled paths ``u(t_i, x1_a, x2_b)``.

    Attributes
    ----------
    times : ndarray, shape (T,)
        Stored times (a subsample of the step grid when ``stride > 1``).
    x1, x2 : ndarray
        Grid coordinates (cell centres or quadrature nodes).
    values : ndarray, shape (P, T, n1, n2)
        Field samples; ``P`` is the number of paths.
    meta : dict
        Run metadata (model id, eps, mu, seeds, scheme parameters).
    coeffs : ndarray, optional
        Spectral coefficients ``(P, T, M1, M2)`` when produced by the
        spectral solver.
    """

    times: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    coeffs: np.ndarray | None = None
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 3:
            self.values = self.values[None]
        if self.values.shape[1:] != (self.times.size, self.x1.size, self.x2.size):
            raise ValueError(f"values shape {self.values.shape} does not match grid "
                             f"({self.times.size}, {self.x1.size}, {self.x2.size})")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("field path contains non-finite values")

    @property
    def paths(self) -> int:
        return self.values.shape[0]

    @property
    def h(self):
        return (self.meta.get("h1", np.nan), self.meta.get("h2", np.nan))

    def path(self, p: int) -> "FieldPath":
        co = None if self.coeffs is None else self.coeffs[p:p + 1]
        meta = dict(self.meta)
        if "seeds" in meta:
            meta["seeds"] = [meta["seeds"][p]]
        extras = {k: (v[p:p + 1] if isinstance(v, np.ndarray) and v.shape[:1] == (self.paths,) else v)
                  for k, v in self.extras.items()}
        return FieldPath(self.times, self.x1, self.x2, self.values[p:p + 1], meta, co, extras)

    def final(self) -> np.ndarray:
        return self.values[:, -1]

    def metadata_text(self) -> str:
        """Line-oriented ``key = value`` record."""
        out = io.StringIO()
        for k in sorted(self.meta):
            v = self.meta[k]
            out.write(f"{k} = {json.dumps(v, default=_jsonable)}\n")
        return out.getvalue()


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return str(v)
