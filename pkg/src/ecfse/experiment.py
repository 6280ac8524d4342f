"""Monte-Carlo experiment runner: repeated synthesis and estimation.

Each trial draws a measurement set with seed ``seed_base + trial`` and runs
every requested estimator on it. Per-trial rows are written to two CSV
files: ``trials.csv`` holds everything that is reproducible bit for bit
(indices, iterations, status) and ``timing.csv`` holds wall times, which
are not. The JSON report carries both plus the per-method summary.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimators import ESTIMATORS, make_estimator
from .grid import load_case
from .measurements import NoiseSpec, PlacementPlan, load_placement, synthesize_measurements, with_pmu_penetration
from .powerflow import solve_power_flow
from .result import EstimationError

__all__ = ["ExperimentConfig", "ExperimentReport", "TrialRow", "run_experiment", "run_pmu_sweep",
           "TRIAL_COLUMNS", "TIMING_COLUMNS", "thread_count"]

TRIAL_COLUMNS = ("trial", "seed", "method", "status", "state_error", "variance_ratio",
                 "iterations", "converged", "objective", "error")
TIMING_COLUMNS = ("trial", "method", "wall_time")


def thread_count(default=1):
    """Worker threads from ``ECFSE_THREADS`` (at least 1)."""
    raw = os.environ.get("ECFSE_THREADS", "")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"ECFSE_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = "ieee14"
    placement: object = "ieee14"  # bundled name, JSON path or PlacementPlan
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    methods: tuple = ("lecf", "necf", "wls")
    trials: int = 100
    seed_base: int = 0
    pmu_level: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        unknown = [m for m in self.methods if m not in ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {sorted(ESTIMATORS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate methods")

    def to_dict(self):
        plan = self.placement
        return {
            "case": self.case,
            "placement": plan.to_dict() if isinstance(plan, PlacementPlan) else str(plan),
            "noise": asdict(self.noise),
            "methods": list(self.methods),
            "trials": self.trials,
            "seed_base": self.seed_base,
            "pmu_level": self.pmu_level,
        }


@dataclass(frozen=True)
class TrialRow:
    trial: int
    seed: int
    method: str
    status: str
    state_error: float
    variance_ratio: float
    iterations: int
    converged: bool
    objective: float
    wall_time: float
    error: str = ""


def _mean(values):
    return float(math.fsum(values) / len(values)) if values else float("nan")


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list
    n_bus: int = 0
    n_pmu: int = 0
    environment: dict = field(default_factory=dict)

    def method_rows(self, method):
        return [r for r in self.rows if r.method == method]

    def summary(self):
        """Per-method means over successful trials.

        The variance-ratio mean is ``nan`` when any trial's ratio is
        undefined (noise-free data).
        """
        out = {}
        for m in self.config.methods:
            ok = [r for r in self.method_rows(m) if r.status == "ok"]
            times = [r.wall_time for r in ok]
            out[m] = {
                "trials": len(self.method_rows(m)),
                "failures": len(self.method_rows(m)) - len(ok),
                "mean_state_error": _mean([r.state_error for r in ok]),
                "mean_variance_ratio": _mean([r.variance_ratio for r in ok]),
                "mean_wall_time": _mean(times),
                "median_wall_time": float(statistics.median(times)) if times else float("nan"),
                "mean_iterations": _mean([r.iterations for r in ok]),
            }
        return out

    def trials_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in self.rows:
            w.writerow([r.trial, r.seed, r.method, r.status, repr(r.state_error), repr(r.variance_ratio),
                        r.iterations, int(r.converged), repr(r.objective), r.error])
        return buf.getvalue()

    def timing_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for r in self.rows:
            w.writerow([r.trial, r.method, repr(r.wall_time)])
        return buf.getvalue()

    def to_dict(self):
        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        return {
            "format": "ecfse-report/1",
            "config": self.config.to_dict(),
            "n_bus": self.n_bus,
            "n_pmu": self.n_pmu,
            "environment": self.environment,
            "summary": {m: {k: clean(v) for k, v in s.items()} for m, s in self.summary().items()},
            "rows": [{k: clean(v) for k, v in asdict(r).items()} for r in self.rows],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        paths = {}
        for name, text in (("trials.csv", self.trials_csv()), ("timing.csv", self.timing_csv()),
                           ("report.json", self.to_json())):
            path = os.path.join(directory, name)
            with open(path, "w", newline="") as fh:
                fh.write(text)
            paths[name] = path
        return paths


def _resolve_plan(config, case):
    plan = config.placement
    if not isinstance(plan, PlacementPlan):
        plan = load_placement(plan)
    if config.pmu_level is not None:
        plan = with_pmu_penetration(plan, case, config.pmu_level)
    return plan.validate(case)


def _failed(trial, seed, method, exc):
    nan = float("nan")
    return TrialRow(trial, seed, method, "error", nan, nan, 0, False, nan, nan,
                    f"{type(exc).__name__}: {exc}")


def _run_trials(case, truth, plan, config, trials):
    estimators = {m: make_estimator(m, case) for m in config.methods}
    rows = []
    for t in trials:
        seed = config.seed_base + t
        ms = synthesize_measurements(case, truth, plan, config.noise, seed)
        for m, est in estimators.items():
            try:
                est.fit(ms)
                idx = est.indices(truth)
            except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
                rows.append(_failed(t, seed, m, exc))
                continue
            s = est.state_
            rows.append(TrialRow(t, seed, m, "ok", idx["state_error"], idx["variance_ratio"],
                                 s.iterations, s.converged, s.objective, s.wall_time))
    return rows


def run_experiment(config, threads=None, case=None, truth=None):
    """Run all trials; failures are recorded per trial, never raised."""
    case = case if case is not None else load_case(config.case)
    truth = truth if truth is not None else solve_power_flow(case)
    plan = _resolve_plan(config, case)
    threads = threads or thread_count()
    trials = list(range(config.trials))
    if threads == 1:
        rows = _run_trials(case, truth, plan, config, trials)
    else:
        chunks = [trials[i::threads] for i in range(threads)]
        with ThreadPoolExecutor(threads) as pool:
            parts = pool.map(lambda c: _run_trials(case, truth, plan, config, c), chunks)
            rows = [r for part in parts for r in part]
    order = {m: i for i, m in enumerate(config.methods)}
    rows.sort(key=lambda r: (r.trial, order[r.method]))
    env = {"python": platform.python_version(), "machine": platform.machine(),
           "numpy": np.__version__, "threads": threads}
    return ExperimentReport(config, rows, n_bus=case.n_bus, n_pmu=len(plan.pmus), environment=env)


def run_pmu_sweep(config, levels, threads=None):
    """One experiment per PMU penetration level; returns ``[(level, report)]``."""
    case = load_case(config.case)
    truth = solve_power_flow(case)
    out = []
    for level in levels:
        cfg = ExperimentConfig(case=config.case, placement=config.placement, noise=config.noise,
                               methods=config.methods, trials=config.trials, seed_base=config.seed_base,
                               pmu_level=level)
        out.append((level, run_experiment(cfg, threads=threads, case=case, truth=truth)))
    return out
