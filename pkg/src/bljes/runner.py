"""Experiment loop: fit, sample optima, select, observe, record regret."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .acquisition import DEFAULT_K, LevelModels, PoolContext, build_bundle, maximize_continuous, select_next
from .benchmarks import PROBLEM_NAMES, BenchmarkSpec, compute_ground_truth, make_problem, parse_problem
from .errors import HyperparameterFitWarning, NumericError
from .gp import Dataset, GpHyperparams, GpModel, ObservationRecord, QueryPoint, fit_hyperparameters
from .paths import DEFAULT_RFF_DIM
from .regret import RegretTrace, reference_ground_truth

log = logging.getLogger(__name__)

METHODS = ("bljes", "random")
MODES = ("coupled", "decoupled", "constrained")
DOMAINS = ("pool", "continuous")
STREAMS = ("init", "noise_f", "noise_g", "noise_cU", "noise_cL", "acquisition", "fallback")


@dataclass(frozen=True)
class RunConfig:
    problem: str = "gp-prior:lU=0.25,lL=0.25"
    method: str = "bljes"
    mode: str = "coupled"
    iterations: int = 100
    n0: int = 5
    K: int = DEFAULT_K
    rff_dim: int = DEFAULT_RFF_DIM
    noise_std_f: float = 1e-3
    noise_std_g: float = 1e-3
    noise_std_c: float = 1e-3
    seeds: tuple = (0,)
    domain_mode: str = "pool"
    output_dir: str = "results"
    grid: Optional[int] = None
    shared_map: bool = False
    n_starts: int = 10

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.domain_mode not in DOMAINS:
            raise ValueError(f"domain_mode must be one of {DOMAINS}")
        if self.iterations < 1 or self.K < 1 or self.n0 < 1 or self.rff_dim < 1:
            raise ValueError("iterations, K, n0 and rff_dim must be >= 1")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if parse_problem(self.problem)[0] not in PROBLEM_NAMES:
            raise ValueError(f"unknown problem {self.problem!r}; choose from {', '.join(PROBLEM_NAMES)}")
        if min(self.noise_std_f, self.noise_std_g, self.noise_std_c) < 0:
            raise ValueError("noise standard deviations must be >= 0")

    @property
    def tag(self) -> str:
        name, params = parse_problem(self.problem)
        extra = "".join(f"_{k}{v}" for k, v in sorted(params.items()))
        return f"{name}{extra}_{self.method}_{self.mode}_{self.domain_mode}".replace("=", "").replace(".", "p")


@dataclass
class RunResult:
    seed: int
    rows: list = field(default_factory=list)
    trace: RegretTrace = field(default_factory=RegretTrace)
    fallbacks: int = 0
    iteration_seconds: list = field(default_factory=list)  # never written to output files
    evaluations: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


# ---------------------------------------------------------------------------
# problem resolution

def resolve_problem(config: RunConfig, seed: int) -> BenchmarkSpec:
    """Problem instance for one seed; gp-prior draws a fresh function per seed unless pinned."""
    name, params = parse_problem(config.problem)
    if name == "gp-prior" and "seed" not in params:
        params["seed"] = seed
    if config.grid is not None:
        params["grid"] = config.grid
    return make_problem(name, params)


# ---------------------------------------------------------------------------
# observation model

class Observer:
    """Evaluates the benchmark at queried points only, adding per-level noise."""

    def __init__(self, spec: BenchmarkSpec, config: RunConfig, streams: dict):
        self.spec = spec
        self.config = config
        self.streams = streams
        self.count = {"f": 0, "g": 0}

    def observe(self, point: QueryPoint, level: str) -> ObservationRecord:
        z = point.z[None, :]
        s, c, st = self.spec, self.config, self.streams
        y_f = y_g = y_cU = y_cL = None
        cU, cL = s.constraints(z) if s.constrained else (None, None)
        if level in ("both", "f"):
            y_f = float(s.eval_f(z)[0]) + c.noise_std_f * st["noise_f"].standard_normal()
            self.count["f"] += 1
            if s.N:
                y_cU = cU[0] + c.noise_std_c * st["noise_cU"].standard_normal(s.N)
        if level in ("both", "g"):
            y_g = float(s.eval_g(z)[0]) + c.noise_std_g * st["noise_g"].standard_normal()
            self.count["g"] += 1
            if s.M:
                y_cL = cL[0] + c.noise_std_c * st["noise_cL"].standard_normal(s.M)
        return ObservationRecord(point, y_f, y_g, y_cU, y_cL)


def baseline_random(pool, rng: np.random.Generator, decoupled: bool = False):
    """Uniform pool index (and, for decoupled runs, a uniform level)."""
    n = len(pool)
    if n == 0:
        raise ValueError("pool must be non-empty")
    idx = int(rng.integers(n))
    level = ("f", "g")[int(rng.integers(2))] if decoupled else "both"
    return idx, level


# ---------------------------------------------------------------------------
# model fitting

def _default_hyper(y: np.ndarray) -> GpHyperparams:
    var = float(np.var(y)) if len(y) > 1 else 1.0
    return GpHyperparams(float(np.mean(y)) if len(y) else 0.0, 0.2, min(max(var, 1e-4), 1e6), 1e-6)


def fit_models(dataset: Dataset, spec: BenchmarkSpec, previous: dict, rng: np.random.Generator):
    """Refit every level's hyperparameters; a failed fit keeps the previous values."""
    levels = ["f", "g"] + [f"cU{n}" for n in range(spec.N)] + [f"cL{m}" for m in range(spec.M)]
    hypers, models = {}, {}
    for level in levels:
        X, y, _ = dataset.level_data(level)
        init = previous.get(level) or _default_hyper(y)
        hyper = init
        if len(y) >= 2:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", HyperparameterFitWarning)
                    hyper = fit_hyperparameters(X, y, init, rng=np.random.default_rng(int(rng.integers(2**63))))
            except (NumericError, np.linalg.LinAlgError, ValueError) as exc:
                log.warning("hyperparameter refit failed for %s: %s", level, exc)
        hypers[level] = hyper
        models[level] = GpModel.build(hyper, X, y, dim=spec.dim)
    lm = LevelModels(models["f"], models["g"],
                     tuple(models[f"cU{n}"] for n in range(spec.N)),
                     tuple(models[f"cL{m}"] for m in range(spec.M)))
    return lm, hypers


# ---------------------------------------------------------------------------
# one seeded run

def _streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def run_single(config: RunConfig, seed: int, spec: Optional[BenchmarkSpec] = None, gt=None) -> RunResult:
    spec = spec if spec is not None else resolve_problem(config, seed)
    continuous = config.domain_mode == "continuous"
    if gt is None:
        gt = reference_ground_truth(spec) if continuous else compute_ground_truth(spec)
    st = _streams(seed)
    observer = Observer(spec, config, st)
    result = RunResult(seed)
    grid = spec.grid
    pool = grid.pool()
    d_x = spec.d_x

    def record(it, point, level, rec):
        regret = result.trace.add(it, point, spec, gt, off_pool=continuous)
        result.rows.append({"iter": it, "level": level, "point": point, "y_f": rec.y_f, "y_g": rec.y_g,
                            "regret": regret})

    dataset = Dataset()
    for _ in range(config.n0):
        if continuous:
            point = QueryPoint.from_z(st["init"].random(spec.dim), d_x)
        else:
            point = QueryPoint.from_z(pool[int(st["init"].integers(len(pool)))], d_x)
        rec = observer.observe(point, "both")
        dataset = dataset.append(rec)
        record(0, point, "both", rec)
    dataset = Dataset(dataset.records, n0=config.n0)

    hypers: dict = {}
    for it in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        decoupled = config.mode == "decoupled"
        if config.method == "random":
            point, level = _random_query(st["acquisition"], pool, spec, continuous, decoupled)
        else:
            try:
                models, hypers = fit_models(dataset, spec, hypers, st["acquisition"])
                if continuous:
                    bundle = build_bundle(models, config.K, st["acquisition"], dims=(spec.d_x, spec.d_theta),
                                          rff_dim=config.rff_dim, shared_map=config.shared_map,
                                          n_starts=config.n_starts)
                    sel = maximize_continuous(bundle, models, config.mode, spec.d_x, spec.d_theta,
                                              st["acquisition"])
                else:
                    bundle = build_bundle(models, config.K, st["acquisition"], grid=grid, rff_dim=config.rff_dim,
                                          shared_map=config.shared_map)
                    sel = select_next(bundle, models, config.mode, ctx=PoolContext(models, grid))
                if not math.isfinite(sel.value):
                    raise NumericError("non-finite acquisition value")
                point, level = sel.point, sel.level
            except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
                log.warning("seed %d iteration %d: %s; using a random query", seed, it, exc)
                result.fallbacks += 1
                point, level = _random_query(st["fallback"], pool, spec, continuous, decoupled)
                level = level + "*"
        rec = observer.observe(point, level.rstrip("*"))
        dataset = dataset.append(rec)
        record(it, point, level, rec)
        result.iteration_seconds.append(time.perf_counter() - t0)
    result.evaluations = dict(observer.count)
    return result


def _random_query(rng, pool, spec, continuous, decoupled):
    if continuous:
        z = rng.random(spec.dim)
        level = ("f", "g")[int(rng.integers(2))] if decoupled else "both"
        return QueryPoint.from_z(z, spec.d_x), level
    idx, level = baseline_random(pool, rng, decoupled)
    return QueryPoint.from_z(pool[idx], spec.d_x), level


def run_experiment(config: RunConfig) -> list:
    """One :class:`RunResult` per seed; a seed that raises is recorded as failed."""
    results = []
    for seed in config.seeds:
        try:
            results.append(run_single(config, seed))
        except Exception as exc:  # noqa: BLE001 - any crash marks the run failed, others continue
            log.error("seed %d failed: %s", seed, exc)
            results.append(RunResult(seed, error=f"{type(exc).__name__}: {exc}"))
    return results


# ---------------------------------------------------------------------------
# output files

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run_rows(result: RunResult, config: RunConfig) -> list:
    rows = []
    for r in result.rows:
        p = r["point"]
        rows.append([config.problem, config.method, config.mode, result.seed, r["iter"], r["level"],
                     *p.x.tolist(), *p.theta.tolist(), r["y_f"], r["y_g"], r["regret"]])
    return rows


def summary_rows(results: Sequence[RunResult], iterations: int) -> list:
    """Per-iteration median and quartiles of the running regret across runs."""
    curves = np.array([r.trace.per_iteration() for r in results if not r.failed])
    rows = []
    for t in range(iterations + 1):
        col = curves[:, t]
        q25, med, q75 = np.percentile(col, [25, 50, 75])
        rows.append([t, float(med), float(q25), float(q75), len(col)])
    return rows


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def emit_results(results: Sequence[RunResult], config: RunConfig, out_dir=None) -> list:
    """Write per-run CSVs, a summary CSV and a key=value manifest; returns the paths."""
    if not results:
        raise ValueError("no results to write")
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ok = [r for r in results if not r.failed]
    spec = resolve_problem(config, results[0].seed)
    dims = (spec.d_x, spec.d_theta)
    header = (["problem", "method", "mode", "seed", "iter", "level"]
              + [f"x{i}" for i in range(dims[0])] + [f"theta{i}" for i in range(dims[1])]
              + ["y_f", "y_g", "regret"])
    paths = []
    for r in ok:
        p = out / f"{config.tag}_seed{r.seed}.csv"
        _write_csv(p, header, run_rows(r, config))
        paths.append(p)
    if ok:
        p = out / f"{config.tag}_summary.csv"
        _write_csv(p, ["iter", "median", "q25", "q75", "n_runs"], summary_rows(ok, config.iterations))
        paths.append(p)
    manifest = out / f"{config.tag}_manifest.txt"
    lines = [f"version={__version__}", "center_statistic=median (band: 25th-75th percentile)"]
    for f in fields(config):
        v = getattr(config, f.name)
        v = ",".join(map(str, v)) if isinstance(v, tuple) else v
        lines.append(f"{f.name}={v}")
    lines.append(f"failed_seeds={','.join(str(r.seed) for r in results if r.failed)}")
    lines.append(f"fallback_iterations={','.join(f'{r.seed}:{r.fallbacks}' for r in ok)}")
    manifest.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    paths.append(manifest)
    return paths


# ---------------------------------------------------------------------------
# config files

_ALIASES = {"k": "K", "k_samples": "K", "iters": "iterations", "domain": "domain_mode", "out": "output_dir"}


def parse_seeds(text) -> tuple:
    """``"3"`` -> (3,); ``"0-4"`` -> (0..4); ``"1,5,7"`` -> (1, 5, 7)."""
    if isinstance(text, (list, tuple)):
        return tuple(int(s) for s in text)
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    return tuple(seeds)


def config_from_mapping(values: dict, base: Optional[RunConfig] = None) -> RunConfig:
    """Apply string (or typed) overrides to a RunConfig."""
    base = base if base is not None else RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    updates = {}
    for key, raw in values.items():
        if raw is None:
            continue
        key = key.strip().replace("-", "_")
        key = _ALIASES.get(key.lower(), key)
        if key == "noise_std":
            updates["noise_std_f"] = updates["noise_std_g"] = updates["noise_std_c"] = float(raw)
            continue
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        if key == "seeds":
            updates[key] = parse_seeds(raw)
        elif key == "shared_map":
            updates[key] = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes")
        elif key in ("iterations", "n0", "K", "rff_dim", "n_starts", "grid"):
            updates[key] = int(raw)
        elif key.startswith("noise_std"):
            updates[key] = float(raw)
        else:
            updates[key] = str(raw).strip()
    return replace(base, **updates)


def read_config_file(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{n}: expected key=value")
        values[key.strip()] = value.strip()
    return values

