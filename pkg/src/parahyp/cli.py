"""Experiment orchestration: configuration, named pipelines, run persistence.

Configuration files are UTF-8 ``key = value`` lines grouped under
``[section]`` headers::

    [experiment]
    name = contraction
    seeds = 1
    paths = 200
    out = runs

    [model]
    id = default-powerlaw

    [parameters]
    eps = 0.1

    [scheme]
    n1 = 32
    n2 = 32
    dt = 0.001
    T = 0.25

Every run writes ``config.txt`` (the canonical snapshot used for replay),
``metadata.txt``, ``summary.csv`` and per-path CSVs under ``paths/``.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .averaging import ShellError, multiplier_decomposition, nondegeneracy_scan
from .fields import FieldPath, write_csv
from .kinetic import ConvexityError, SupportError, kinetic_measure
from .model import EvaluationError, ModelSpec, get_model, validate_hypotheses
from .noise import NoisePath, path_seed, sample_noise
from .solver_eps import CFLError, SchemeParams, solve_second_approx
from .solver_mu import AdaptednessError, CompatibilityError, solve_first_approx, uniform_energy
from .trace import ResolutionError, dirichlet_trace_check, strong_trace_gamma_prime

__all__ = ["ConfigError", "RunConfig", "RunRecord", "Outcome", "EXPERIMENTS",
           "parse_config", "run_experiment", "convergence_study", "replay", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3

NUMERICAL_ERRORS = (FloatingPointError, CFLError, CompatibilityError, AdaptednessError,
                    ResolutionError, ConvexityError, SupportError, EvaluationError,
                    ShellError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    """Invalid or unusable run configuration."""


# -- configuration -----------------------------------------------------------------

def _scalar(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _value(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) == 1:
        return _scalar(parts[0])
    return tuple(_scalar(p) for p in parts if p)


def _as_tuple(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v,)


@dataclass(frozen=True)
class RunConfig:
    """A complete, hashable description of one experiment.

    ``seeds`` are base seeds; each spawns ``paths`` paths whose noise seeds
    are derived deterministically, so the ensemble has
    ``len(seeds) * paths`` members.
    """

    experiment: str
    model: str = "default-powerlaw"
    model_params: dict = field(default_factory=dict)
    eps: tuple = (0.1,)
    mu: tuple = (0.01,)
    seeds: tuple = (0,)
    paths: int = 1
    scheme: dict = field(default_factory=dict)
    spectral: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    out: str = "runs"
    threads: int = 1

    def canonical(self) -> dict:
        """Every field that influences results (output location and threads excluded)."""
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> "RunConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"known: {', '.join(sorted(EXPERIMENTS))}")
        try:
            self.build_model()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from None
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.eps or not self.mu:
            raise ConfigError("eps and mu lists must be nonempty")
        if any(e <= 0 for e in self.eps) or any(m <= 0 for m in self.mu):
            raise ConfigError("eps and mu must be positive")
        if self.paths < 1 or self.threads < 1:
            raise ConfigError("paths and threads must be at least 1")
        try:
            sc = self.scheme_params()
        except TypeError as exc:
            raise ConfigError(f"scheme: {exc}") from None
        numeric = (sc.n1, sc.n2, sc.dt, sc.T, sc.cfl_limit)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in numeric):
            raise ConfigError("scheme: n1, n2, dt, T and cfl_limit must be numbers")
        return self

    def build_model(self) -> ModelSpec:
        return get_model(self.model, **self.model_params)

    def scheme_params(self) -> SchemeParams:
        keys = {"n1", "n2", "dt", "T", "flux", "cfl_limit"}
        return SchemeParams(**{k: v for k, v in self.scheme.items() if k in keys})

    @property
    def stride(self) -> int:
        return int(self.scheme.get("stride", 10))

    def noise_seeds(self) -> list[int]:
        return [path_seed(s, p) for s in self.seeds for p in range(self.paths)]

    def to_text(self) -> str:
        """Canonical configuration text; parsing it reproduces this config."""
        def fmt(v):
            if isinstance(v, (tuple, list)):
                return ", ".join(fmt(x) for x in v)
            if isinstance(v, float):
                return repr(v)
            return str(v)
        lines = ["[experiment]", f"name = {self.experiment}",
                 f"seeds = {fmt(self.seeds)}",
                 f"paths = {self.paths}", f"out = {self.out}", f"threads = {self.threads}", "",
                 "[model]", f"id = {self.model}"]
        lines += [f"{k} = {fmt(v)}" for k, v in sorted(self.model_params.items())]
        lines += ["", "[parameters]",
                  f"eps = {fmt(self.eps)}", f"mu = {fmt(self.mu)}"]
        for name in ("scheme", "spectral", "options"):
            sec = getattr(self, name)
            lines += ["", f"[{name}]"] + [f"{k} = {fmt(v)}" for k, v in sorted(sec.items())]
        return "\n".join(lines) + "\n"


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse configuration text; keyword overrides replace parsed fields."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    sec = {name: {k: _value(v) for k, v in cp[name].items()} for name in cp.sections()}
    known = {"experiment", "model", "parameters", "scheme", "spectral", "options"}
    unknown = set(sec) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    exp = sec.get("experiment", {})
    if "name" not in exp:
        raise ConfigError("[experiment] needs a name")
    model = dict(sec.get("model", {}))
    model_id = model.pop("id", "default-powerlaw")
    params = sec.get("parameters", {})
    seeds = exp.get("seeds", exp.get("seed", 0))
    try:
        seeds = () if seeds == "" else tuple(int(s) for s in _as_tuple(seeds))
        kw = dict(experiment=str(exp["name"]), model=str(model_id), model_params=model,
                  eps=tuple(float(e) for e in _as_tuple(params.get("eps", 0.1))),
                  mu=tuple(float(m) for m in _as_tuple(params.get("mu", 0.01))),
                  seeds=seeds, paths=int(exp.get("paths", 1)),
                  scheme=dict(sec.get("scheme", {})), spectral=dict(sec.get("spectral", {})),
                  options=dict(sec.get("options", {})), out=str(exp.get("out", "runs")),
                  threads=int(exp.get("threads", 1)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value: {exc}") from None
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kw).validate()


def load_config(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from None
    return parse_config(text, **overrides)


# -- run records ------------------------------------------------------------------------

@dataclass
class Outcome:
    """What a pipeline produces before persistence."""

    header: list
    rows: list
    passed: bool
    per_path: dict = field(default_factory=dict)    # file stem -> (header, rows)
    notes: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    """Persisted run: location, summary and provenance."""

    config: RunConfig
    directory: Path
    header: list
    rows: list
    passed: bool
    wall_clock: float
    config_hash: str
    version: str = __version__

    @property
    def summary_path(self) -> Path:
        return self.directory / "summary.csv"


def _write_run(config: RunConfig, outcome: Outcome, directory: Path, wall: float) -> RunRecord:
    h = config.config_hash()
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "paths").mkdir(exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output path not writable: {exc}") from None
    (directory / "config.txt").write_text(config.to_text(), encoding="utf-8")
    header = ["config_hash"] + list(outcome.header)
    rows = [[h] + list(r) for r in outcome.rows]
    write_csv(directory / "summary.csv", header, rows)
    for stem, (ph, prow) in sorted(outcome.per_path.items()):
        write_csv(directory / "paths" / f"{stem}.csv", ["config_hash"] + list(ph),
                  [[h] + list(r) for r in prow])
    meta = {"experiment": config.experiment, "config_hash": h, "code_version": __version__,
            "passed": outcome.passed, "paths": len(config.seeds) * config.paths,
            "wall_clock_seconds": round(wall, 3), **outcome.notes}
    with open(directory / "metadata.txt", "w", encoding="utf-8") as fh:
        for k in sorted(meta):
            fh.write(f"{k} = {json.dumps(meta[k], default=str)}\n")
    return RunRecord(config, directory, header, rows, outcome.passed, wall, h)


def run_experiment(config: RunConfig, directory=None) -> RunRecord:
    """Execute the named pipeline and write its run directory.

    The directory defaults to ``<out>/<experiment>-<config hash>``.
    """
    config.validate()
    directory = Path(directory) if directory is not None else \
        Path(config.out) / f"{config.experiment}-{config.config_hash()}"
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output path not writable: {exc}") from None
    start = time.perf_counter()
    try:
        outcome = EXPERIMENTS[config.experiment](config)
    except NUMERICAL_ERRORS as exc:
        raise type(exc)(f"experiment {config.experiment!r}: {exc}") from exc
    return _write_run(config, outcome, directory, time.perf_counter() - start)


# -- ensemble helpers ---------------------------------------------------------------------

def _noise(config: RunConfig, model: ModelSpec, times) -> list[NoisePath]:
    return [sample_noise(s, model.K, times) for s in config.noise_seeds()]


def _pool_map(fn: Callable, chunks: list, threads: int) -> list:
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _split(items: list, parts: int) -> list[list]:
    parts = max(1, min(parts, len(items)))
    bounds = np.linspace(0, len(items), parts + 1).astype(int)
    return [items[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def _merge(runs: list[FieldPath]) -> FieldPath:
    first = runs[0]
    if len(runs) == 1:
        return first
    P = sum(r.paths for r in runs)
    extras = {k: (np.concatenate([r.extras[k] for r in runs])
                  if isinstance(v, np.ndarray) and v.ndim >= 1 and v.shape[0] == first.paths
                  and k != "all_times" else v)
              for k, v in first.extras.items()}
    meta = dict(first.meta)
    meta["seeds"] = [s for r in runs for s in r.meta.get("seeds", [])]
    vals = np.concatenate([r.values for r in runs])
    assert vals.shape[0] == P
    return FieldPath(first.times, first.x1, first.x2, vals, meta, None, extras)


def _fv_ensemble(config: RunConfig, model: ModelSpec, eps: float, noise, **kw) -> FieldPath:
    scheme = config.scheme_params()
    job = lambda nz: solve_second_approx(model, eps, nz, scheme, stride=config.stride, **kw)
    return _merge(_pool_map(job, _split(noise, config.threads), config.threads))


def _final_fields(run: FieldPath) -> dict:
    out = {}
    X1, X2 = np.meshgrid(run.x1, run.x2, indexing="ij")
    for p in range(run.paths):
        seed = run.meta.get("seeds", [p] * run.paths)[p]
        rows = [(int(seed), float(a), float(b), float(v))
                for a, b, v in zip(X1.ravel(), X2.ravel(), run.values[p, -1].ravel())]
        out[f"path_{p:04d}"] = (["noise_seed", "x1", "x2", "u_final"], rows)
    return out


def _per_path_series(run: FieldPath, series: np.ndarray, name: str) -> dict:
    seeds = run.meta.get("seeds", list(range(run.paths)))
    return {f"path_{p:04d}": (["noise_seed", "t", name],
                              [(int(seeds[p]), float(t), float(v)) for t, v in zip(run.times, series[p])])
            for p in range(run.paths)}


def _ci95(samples, axis=0):
    samples = np.asarray(samples, float)
    n = samples.shape[axis]
    if n < 2:
        return np.zeros(np.delete(samples.shape, axis))
    return 1.96 * samples.std(axis=axis, ddof=1) / np.sqrt(n)


def _l1_space_time(a: FieldPath, b: FieldPath) -> np.ndarray:
    """Per-path ``int_0^T int |a - b| dx dt``."""
    h1 = a.x1[1] - a.x1[0]
    h2 = a.x2[1] - a.x2[0]
    per_t = np.abs(a.values - b.values).sum(axis=(2, 3)) * h1 * h2
    return np.trapezoid(per_t, a.times, axis=1)


def _scaled_initial(model: ModelSpec, scale: float):
    return lambda x1, x2: scale * model.u0(x1, x2)


# -- pipelines ---------------------------------------------------------------------------

def _exp_hypotheses(config: RunConfig) -> Outcome:
    model = config.build_model()
    rep = validate_hypotheses(model, int(config.options.get("samples", 512)))
    rows = [(name, bool(ok), float(const), detail) for name, ok, const, detail in rep.rows()]
    return Outcome(["check", "passed", "constant", "detail"], rows, rep.passed)


def _exp_second(config: RunConfig) -> Outcome:
    model = config.build_model()
    eps = config.eps[0]
    noise = _noise(config, model, config.scheme_params().times())
    run = _fv_ensemble(config, model, eps, noise)
    over = np.maximum(np.maximum(run.values - model.u_max, model.u_min - run.values), 0.0)
    overshoot = float(over.max())
    mass = run.values.sum(axis=(2, 3)) * run.h[0] * run.h[1]
    rows = [(eps, float(t), float(mass[:, k].mean()), float(over[:, k].max()))
            for k, t in enumerate(run.times)]
    return Outcome(["eps", "t", "mean_mass", "overshoot"], rows, overshoot <= 1e-3,
                   _final_fields(run), {"max_overshoot": overshoot})


def _spectral_kw(config: RunConfig) -> dict:
    s = config.spectral
    kw = {"modes": (int(s.get("modes1", 32)), int(s.get("modes2", 32))),
          "window": float(s.get("window", 0.05)), "tol": float(s.get("tol", 1e-10)),
          "stride": config.stride}
    return kw


def _exp_first(config: RunConfig) -> Outcome:
    model = config.build_model()
    eps, mu = config.eps[0], config.mu[0]
    noise = _noise(config, model, config.scheme_params().times())
    rows, ok = [], True
    per_path = {}
    for i, nz in enumerate(noise):
        run, rep = solve_first_approx(model, eps, mu, [nz], **_spectral_kw(config))
        passed = rep.converged and rep.contraction < 1.0
        ok &= passed
        rows.append((nz.seed, eps, mu, rep.iterations, rep.contraction, rep.terminal_residual,
                     bool(rep.converged), uniform_energy(run)))
        per_path.update({f"path_{i:04d}": v for v in _final_fields(run).values()})
    return Outcome(["noise_seed", "eps", "mu", "iterations", "contraction", "terminal_residual",
                    "converged", "energy"], rows, ok, per_path)


def _pair_runs(config: RunConfig):
    model = config.build_model()
    eps = config.eps[0]
    scale = float(config.options.get("v0_scale", 0.5))
    noise = _noise(config, model, config.scheme_params().times())
    ru = _fv_ensemble(config, model, eps, noise)
    rv = _fv_ensemble(config, model, eps, noise, u0=_scaled_initial(model, scale))
    return model, eps, ru, rv


def _exp_contraction(config: RunConfig) -> Outcome:
    _, eps, ru, rv = _pair_runs(config)
    h = ru.h[0] * ru.h[1]
    dist = np.abs(ru.values - rv.values).sum(axis=(2, 3)) * h           # (P, T)
    lhs, ci = dist.mean(axis=0), _ci95(dist)
    rhs = float(dist[:, 0].mean())
    slack = float(config.options.get("slack", 0.02))
    ok = bool(np.all(lhs <= rhs * (1 + slack) + ci))
    rows = [(eps, float(t), float(l), float(c), rhs) for t, l, c in zip(ru.times, lhs, ci)]
    return Outcome(["eps", "t", "mean_l1", "ci95", "initial_l1"], rows, ok,
                   _per_path_series(ru, dist, "l1_distance"))


def _exp_comparison(config: RunConfig) -> Outcome:
    _, eps, ru, rv = _pair_runs(config)
    h = ru.h[0] * ru.h[1]
    pos = np.maximum(rv.values - ru.values, 0.0)        # v0 = scale u0 <= u0
    integ = pos.sum(axis=(2, 3)) * h
    mean, ci = integ.mean(axis=0), _ci95(integ)
    sup = float(pos.max())
    ok = sup <= 1e-3 and bool(np.all(mean <= mean[0] + ci + 1e-3))
    rows = [(eps, float(t), float(m), float(c)) for t, m, c in zip(ru.times, mean, ci)]
    return Outcome(["eps", "t", "mean_positive_part", "ci95"], rows, ok,
                   _per_path_series(ru, integ, "positive_part"), {"sup_violation": sup})


def _exp_kinetic(config: RunConfig) -> Outcome:
    model = config.build_model()
    scheme = config.scheme_params()
    noise = _noise(config, model, scheme.times())
    rows, ok = [], True
    for eps in config.eps:
        _, meas = kinetic_measure(model, eps, noise, scheme)
        nonneg = bool(np.all(meas.hist >= 0))
        dom = meas.dominates_n1()
        ok &= nonneg and dom
        rows.append((eps, meas.mean_total(), float(np.mean(meas.n1_total)), nonneg, dom))
    totals = [r[1] for r in rows]
    if len(totals) > 1:
        ok &= (max(totals) - min(totals)) / max(totals) < 0.5
    return Outcome(["eps", "mean_total_mass", "mean_n1_mass", "nonnegative", "dominates_n1"],
                   rows, ok)


def _exp_trace(config: RunConfig) -> Outcome:
    model = config.build_model()
    eps = config.eps[0]
    noise = _noise(config, model, config.scheme_params().times())
    run = _fv_ensemble(config, model, eps, noise)
    s_max = float(config.options.get("s_max", 0.25))
    halvings = int(config.options.get("halvings", 4))
    s = s_max * 0.5 ** np.arange(halvings + 1)
    rec = strong_trace_gamma_prime(run, s)
    succ = rec.successive()
    ok = bool(np.all(np.diff(succ) < 0))
    dtc = dirichlet_trace_check(run, model)
    rows = [(eps, float(s[i]), float(s[i + 1]), float(d)) for i, d in enumerate(succ)]
    per_path = {}
    for p in range(run.paths):
        rp = [(float(t), side, float(x), float(rec.trace[p, i, side, j]))
              for i, t in enumerate(rec.times) for side in (0, 1) for j, x in enumerate(rec.x2)]
        per_path[f"trace_{p:04d}"] = (["t", "side", "x2", "value"], rp)
    return Outcome(["eps", "s_outer", "s_inner", "cauchy_mean"], rows, ok, per_path,
                   {"dirichlet_trace": dtc})


def _exp_scan(config: RunConfig) -> Outcome:
    model = config.build_model()
    o = config.options
    kw = {"samples": int(o.get("samples", 256)), "xi_points": int(o.get("xi_points", 4096)),
          "seed": int(config.seeds[0])}
    rows, ok = [], True
    for eps in (config.eps if o.get("viscous", False) else (0.0,)):
        sc = nondegeneracy_scan(model, eps=eps, **kw)
        good = 0 < sc.alpha < 1 and sc.beta > 0 and sc.nondeg_passed
        ok &= bool(good)
        rows.append((eps, sc.alpha, sc.beta, sc.residual, sc.nondeg_measure, bool(sc.nondeg_passed)))
    return Outcome(["eps", "alpha", "beta", "fit_residual", "zero_set_measure", "nondegenerate"],
                   rows, ok)


def _exp_averaging(config: RunConfig) -> Outcome:
    o = config.options
    n, period, nxi = int(o.get("grid", 64)), float(o.get("period", 16.0)), int(o.get("xi_nodes", 16))
    rng = np.random.default_rng(int(config.seeds[0]))
    xi = np.linspace(-1.0, 1.0, nxi)
    w = np.full(nxi, 2.0 / nxi)
    f = rng.uniform(-1.0, 1.0, (n, n, n, nxi))
    coeffs = (lambda x: np.ones_like(x), lambda x: x[:, None], lambda x: (x ** 2)[:, None, None])
    rows, recon = [], 0.0
    gammas = (1.0, 2.0, 4.0, 8.0)
    v1 = []
    for g in gammas:
        d = multiplier_decomposition(f, xi, w, *coeffs, g, 0.1, period, n_prime=1)
        recon = max(recon, d.reconstruction_error())
        v1.append(d.norms_sq()[0])
        rows.append(("gamma", g, *d.norms_sq()))
    slope = float(np.polyfit(np.log(gammas), np.log(v1), 1)[0])
    v23 = []
    for dl in (0.4, 0.2, 0.1, 0.05):
        d = multiplier_decomposition(f, xi, w, *coeffs, 1.0, dl, period, n_prime=1)
        recon = max(recon, d.reconstruction_error())
        v23.append(d.norms_sq()[1:3])
        rows.append(("delta", dl, *d.norms_sq()))
    v23 = np.array(v23)
    ok = recon <= 1e-12 and abs(slope - 3) <= 0.2 and bool(np.all(np.diff(v23, axis=0) < 0))
    return Outcome(["sweep", "value", "v1_sq", "v2_sq", "v3_sq", "v4_sq"], rows, ok,
                   notes={"gamma_slope": slope, "reconstruction_error": recon})


def _exp_eps_sweep(config: RunConfig) -> Outcome:
    table = convergence_study(config, "eps")
    return Outcome(["eps_a", "eps_b", "mean_l1", "ci95"], table["rows"], table["decreasing"])


def _exp_mu_sweep(config: RunConfig) -> Outcome:
    table = convergence_study(config, "mu")
    return Outcome(["mu", "eps", "mean_l1", "ci95"], table["rows"], table["decreasing"])


EXPERIMENTS: dict[str, Callable[[RunConfig], Outcome]] = {
    "hypotheses": _exp_hypotheses,
    "second": _exp_second,
    "first": _exp_first,
    "contraction": _exp_contraction,
    "comparison": _exp_comparison,
    "kinetic": _exp_kinetic,
    "trace": _exp_trace,
    "scan": _exp_scan,
    "averaging": _exp_averaging,
    "eps-sweep": _exp_eps_sweep,
    "mu-sweep": _exp_mu_sweep,
}


def convergence_study(config: RunConfig, parameter: str = "eps") -> dict:
    """Successive space-time L1 differences on paired seeds.

    ``parameter = "eps"`` compares the viscous solutions at consecutive
    sweep values; ``"mu"`` compares each regularised solution with the
    viscous solution at ``eps[0]``.

    Returns
    -------
    dict
        ``rows`` (one per difference), ``differences`` and the verdict
        ``decreasing`` (strict).
    """
    model = config.build_model()
    sweep = config.eps if parameter == "eps" else config.mu
    if len(sweep) < 3:
        raise ConfigError(f"{parameter} sweep needs at least three values")
    times = config.scheme_params().times()
    noise = _noise(config, model, times)
    rows, diffs = [], []
    if parameter == "eps":
        runs = [_fv_ensemble(config, model, e, noise) for e in sweep]
        for e0, e1, a, b in zip(sweep, sweep[1:], runs, runs[1:]):
            d = _l1_space_time(a, b)
            diffs.append(float(d.mean()))
            rows.append((e0, e1, float(d.mean()), float(_ci95(d))))
    elif parameter == "mu":
        eps = config.eps[0]
        ref = _fv_ensemble(config, model, eps, noise)
        kw = _spectral_kw(config)
        kw["output_grid"] = (ref.x1.size, ref.x2.size)
        for mu in sweep:
            run, _ = solve_first_approx(model, eps, mu, noise, **kw)
            d = _l1_space_time(run, ref)
            diffs.append(float(d.mean()))
            rows.append((mu, eps, float(d.mean()), float(_ci95(d))))
    else:
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    return {"rows": rows, "differences": np.array(diffs),
            "decreasing": bool(np.all(np.diff(diffs) < 0))}


def replay(directory) -> tuple[bool, list[str]]:
    """Re-run a stored configuration and compare every CSV byte for byte.

    Returns the verdict and the list of differing files.
    """
    directory = Path(directory)
    config = load_config(directory / "config.txt")
    with tempfile.TemporaryDirectory() as tmp:
        fresh = run_experiment(config, Path(tmp) / "replay")
        differing = []
        for old in sorted(directory.rglob("*.csv")):
            rel = old.relative_to(directory)
            new = fresh.directory / rel
            if not new.exists() or new.read_bytes() != old.read_bytes():
                differing.append(str(rel))
    return not differing, differing


# -- command line ----------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parahyp", description=__doc__.split("\n")[0])
    p.add_argument("verb", choices=["validate", "run", "sweep", "trace", "scan", "replay"])
    p.add_argument("target", nargs="?", help="run directory (replay only)")
    p.add_argument("--config", help="configuration file")
    p.add_argument("--seed", type=int, help="single base seed overriding the configuration")
    p.add_argument("--paths", type=int, help="paths per seed")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--threads", type=int, help="worker threads for path ensembles")
    return p


def _report(record: RunRecord) -> None:
    print(f"{record.config.experiment}: {'PASS' if record.passed else 'FAIL'} "
          f"({record.wall_clock:.1f} s) -> {record.directory}")
    print(",".join(record.header))
    for r in record.rows[:20]:
        print(",".join(str(x) for x in r))
    if len(record.rows) > 20:
        print(f"... {len(record.rows) - 20} more rows in {record.summary_path}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "replay":
            target = args.target or args.out
            if not target:
                raise ConfigError("replay needs a run directory")
            same, diff = replay(target)
            print("replay identical" if same else "replay differs: " + ", ".join(diff))
            return EXIT_OK if same else EXIT_CHECK
        if not args.config:
            raise ConfigError("--config is required")
        over = {"seeds": (args.seed,) if args.seed is not None else None,
                "paths": args.paths, "out": args.out, "threads": args.threads}
        config = load_config(args.config, **over)
        if args.verb == "validate":
            rep = validate_hypotheses(config.build_model())
            for name, ok, const, detail in rep.rows():
                print(f"{'ok  ' if ok else 'FAIL'} {name} constant={const:.6g} {detail}")
            return EXIT_OK if rep.passed else EXIT_CHECK
        if args.verb in ("trace", "scan"):
            config = replace(config, experiment=args.verb)
        elif args.verb == "sweep":
            if config.experiment not in ("eps-sweep", "mu-sweep"):
                name = "mu-sweep" if len(config.mu) >= 3 else "eps-sweep"
                config = replace(config, experiment=name)
        record = run_experiment(config)
        _report(record)
        return EXIT_OK if record.passed else EXIT_CHECK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
