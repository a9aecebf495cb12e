"""Monte Carlo experiment driver: sweeps, per-iteration metrics, aggregation and output files."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import solver
from .compute import total_delay_vector
from .scenario import ConfigError, ScenarioConfig, generate_instance, stream
from .uncertainty import METRICS, UncertaintyTrace, accuracy_of, load_trace

log = logging.getLogger(__name__)

ALGORITHMS = ("goa", "dmin", "edge_all", "local_all", "random")
CSV_HEADER = (
    "iteration",
    "algorithm",
    "n_users",
    "tau",
    "metric",
    "objective",
    "mean_delay_ms",
    "accuracy",
    "offload_count",
    "solver_time_ms",
)
METRIC_FIELDS = ("objective", "mean_delay_ms", "accuracy", "offload_count", "solver_time_ms")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    algorithms: tuple[str, ...] = ALGORITHMS
    n_users_sweep: tuple[int, ...] = (60, 80, 100, 120)
    tau_sweep: tuple[float, ...] = (0.6,)
    metric: str = "margin"
    iterations: int = 500
    trace_path: Optional[str] = None
    output_dir: str = "results"
    master_seed: int = 0
    format: str = "csv"
    workers: int = 1
    # wall-clock solver times break byte-identical output, so they are opt-in
    timing: bool = False
    strict_eq10: bool = False
    delay_average: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "n_users_sweep", tuple(int(n) for n in self.n_users_sweep))
        object.__setattr__(self, "tau_sweep", tuple(float(t) for t in self.tau_sweep))
        self.validate()

    def validate(self) -> None:
        if not self.algorithms:
            raise ConfigError("algorithm list is empty")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s) {unknown}; choose from {list(ALGORITHMS)}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("duplicate algorithm in list")
        if "random" in self.algorithms and "goa" not in self.algorithms:
            raise ConfigError("'random' takes its k from goa; add 'goa' to the algorithm list")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.n_users_sweep or not self.tau_sweep:
            raise ConfigError("n_users_sweep and tau_sweep must be nonempty")
        if any(n < 1 for n in self.n_users_sweep):
            raise ConfigError("n_users values must be >= 1")
        if any(not 0 <= t <= 1 for t in self.tau_sweep):
            raise ConfigError("tau values must lie in [0, 1]")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; choose from {sorted(METRICS)}")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be 'csv' or 'json'")
        if self.delay_average not in ("all", "offloaded"):
            raise ConfigError("delay_average must be 'all' or 'offloaded'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")

    def to_json(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["scenario"] = self.scenario.to_json()
        for k in ("algorithms", "n_users_sweep", "tau_sweep"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment field(s): {', '.join(sorted(unknown))}")
        kw = dict(d)
        if "scenario" in kw:
            kw["scenario"] = ScenarioConfig.from_json(kw["scenario"])
        try:
            return cls(**kw)
        except TypeError as e:
            raise ConfigError(str(e)) from None


@dataclass(frozen=True)
class RunMetrics:
    iteration: int
    algorithm: str
    n_users: int
    tau: float
    metric: str
    objective: float
    mean_delay_ms: float
    accuracy: float
    offload_count: int
    solver_time_ms: float
    error: Optional[str] = None

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_HEADER}


def _sort_key(config: ExperimentConfig):
    order = {a: k for k, a in enumerate(ALGORITHMS)}
    return lambda r: (r.n_users, r.tau, r.iteration, order[r.algorithm])


def _load_trace(config: ExperimentConfig) -> Optional[UncertaintyTrace]:
    return load_trace(config.trace_path) if config.trace_path else None


def _metrics(config, instance, report, iteration, n, tau, algorithm) -> RunMetrics:
    a = report.assignment
    delays = total_delay_vector(instance, a)
    if config.delay_average == "offloaded":
        off = a.to_array() >= 0
        mean_delay = float(delays[off].mean()) * 1e3 if off.any() else math.nan
    else:
        mean_delay = float(delays.mean()) * 1e3
    obj = solver.objective(instance, a, config.strict_eq10) if config.strict_eq10 else report.objective
    return RunMetrics(
        iteration=iteration,
        algorithm=algorithm,
        n_users=n,
        tau=tau,
        metric=config.metric,
        objective=obj,
        mean_delay_ms=mean_delay,
        accuracy=accuracy_of(instance, a),
        offload_count=report.offload_count,
        solver_time_ms=report.wall_time_s * 1e3 if config.timing else 0.0,
    )


def _failed(iteration, algorithm, n, tau, metric, err) -> RunMetrics:
    log.error("iteration %d, N=%d, tau=%g: %s failed: %s", iteration, n, tau, algorithm, err)
    nan = math.nan
    return RunMetrics(iteration, algorithm, n, tau, metric, nan, nan, nan, -1, nan, error=str(err))


def run_iteration(
    config: ExperimentConfig,
    iteration_index: int,
    n_users: Optional[int] = None,
    trace: Optional[UncertaintyTrace] = None,
    taus: Optional[Sequence[float]] = None,
) -> list[RunMetrics]:
    """Run every requested algorithm on one sampled instance.

    One row per (tau, algorithm). Algorithms that ignore tau are solved once
    and reported under every tau.
    """
    n = config.n_users_sweep[0] if n_users is None else n_users
    taus = config.tau_sweep if taus is None else tuple(taus)
    if trace is None and config.trace_path:
        trace = _load_trace(config)
    scen = replace(config.scenario, n_users=n, master_seed=config.master_seed)
    instance = generate_instance(scen, trace, iteration_index, config.metric)

    fixed = {}
    for name, fn in (("dmin", solver.dmin), ("edge_all", solver.edge_all), ("local_all", solver.local_all)):
        if name in config.algorithms:
            try:
                fixed[name] = fn(instance)
            except Exception as e:  # recorded per row, other algorithms continue
                fixed[name] = e

    rows = []
    for tau in taus:
        per_tau = dict(fixed)
        if "goa" in config.algorithms:
            try:
                per_tau["goa"] = solver.goa(instance, tau)
            except Exception as e:
                per_tau["goa"] = e
        if "random" in config.algorithms:
            g = per_tau.get("goa")
            if isinstance(g, Exception):
                per_tau["random"] = RuntimeError(f"goa failed, no k for random: {g}")
            else:
                rng = stream(config.master_seed, iteration_index, f"random/{n}/{tau!r}")
                try:
                    per_tau["random"] = solver.random_k(instance, g.offload_count, rng)
                except Exception as e:
                    per_tau["random"] = e
        for name in ALGORITHMS:
            if name not in config.algorithms:
                continue
            rep = per_tau[name]
            if isinstance(rep, Exception):
                rows.append(_failed(iteration_index, name, n, tau, config.metric, rep))
            else:
                rows.append(_metrics(config, instance, rep, iteration_index, n, tau, name))
    return rows


def _job(config: ExperimentConfig, trace, key) -> list[RunMetrics]:
    n, it = key
    return run_iteration(config, it, n, trace)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[RunMetrics]
    summary: list[dict]


def check_output_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path):
            pass
    except OSError as e:
        raise ConfigError(f"output directory {path} is not writable: {e.strerror or e}") from None
    return path


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None, check_output: bool = False) -> ExperimentResult:
    if check_output:
        check_output_dir(config.output_dir)
    trace = _load_trace(config)
    keys = [(n, it) for n in config.n_users_sweep for it in range(config.iterations)]
    workers = config.workers if workers is None else workers
    job = partial(_job, config, trace)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, keys, chunksize=max(1, len(keys) // (8 * workers))))
    else:
        chunks = [job(k) for k in keys]
    rows = sorted((r for c in chunks for r in c), key=_sort_key(config))
    return ExperimentResult(config, rows, aggregate(rows))


def aggregate(rows: Sequence[RunMetrics]) -> list[dict]:
    """Mean, sample std and standard error per (algorithm, n_users, tau, metric)."""
    groups: dict[tuple, list[RunMetrics]] = {}
    for r in rows:
        if r.error is None:
            groups.setdefault((r.algorithm, r.n_users, r.tau, r.metric), []).append(r)
    order = {a: k for k, a in enumerate(ALGORITHMS)}
    out = []
    for key in sorted(groups, key=lambda k: (order[k[0]], k[1], k[2], k[3])):
        g = groups[key]
        rec = {"algorithm": key[0], "n_users": key[1], "tau": key[2], "metric": key[3], "count": len(g)}
        for name in METRIC_FIELDS:
            v = np.array([getattr(r, name) for r in g], dtype=float)
            v = v[~np.isnan(v)]
            k = v.size
            mean = float(v.mean()) if k else math.nan
            std = float(v.std(ddof=1)) if k > 1 else 0.0
            rec[f"{name}_mean"] = mean
            rec[f"{name}_std"] = std
            rec[f"{name}_sem"] = std / math.sqrt(k) if k else math.nan
        out.append(rec)
    return out


def summary_key(rec: dict) -> str:
    return f"{rec['algorithm']}|{rec['n_users']}|{rec['tau']!r}"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def rows_to_csv(rows: Sequence[RunMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([fmt(getattr(r, k)) for k in CSV_HEADER])
    return buf.getvalue()


def _json_float(v):
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return float(format(v, ".17g"))
    return v


def summary_to_json(summary: Sequence[dict]) -> str:
    doc = {summary_key(rec): {k: _json_float(v) for k, v in rec.items()} for rec in summary}
    return json.dumps(doc, indent=2) + "\n"


def rows_to_json(rows: Sequence[RunMetrics]) -> str:
    return json.dumps([{k: _json_float(v) for k, v in r.row().items()} for r in rows], indent=1) + "\n"


def emit(result: ExperimentResult, out_dir=None, format: Optional[str] = None) -> list[Path]:
    """Write per-iteration rows (CSV or JSON) plus the aggregate JSON; return the paths."""
    fmt_ = format or result.config.format
    if not result.rows:
        raise ConfigError("nothing to emit: the metrics table is empty")
    out = Path(out_dir or result.config.output_dir)
    files = {
        "aggregate.json": summary_to_json(result.summary),
        "config.json": json.dumps(result.config.to_json(), indent=2) + "\n",
    }
    if fmt_ == "csv":
        files["runs.csv"] = rows_to_csv(result.rows)
    elif fmt_ == "json":
        files["runs.json"] = rows_to_json(result.rows)
    else:
        raise ConfigError("format must be 'csv' or 'json'")
    written = []
    for name, text in files.items():
        p = out / name
        try:
            out.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
        except OSError as e:
            raise OSError(f"{p}: {e.strerror or e}") from None
        written.append(p)
    return written


def load_summary(path) -> dict:
    return json.loads(Path(path).read_text())
