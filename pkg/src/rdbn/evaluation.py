"""Sampled K-L divergence evaluation of filters on simulated assembly runs.

For each run a ground-truth trajectory is simulated, each method filters
its observations, and at every step the method's probability of the true
state is scored as ``-log p``: averaged over variables in marginal mode,
for the joint relation state in joint mode.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assembly import AssemblyConfig, derive_rng, simulate_assembly
from .filters.assembly import AssemblyMultiPF, make_filter

__all__ = ["dhat", "MethodSpec", "ExperimentConfig", "RunResult", "KlSeries", "run_single",
           "run_experiment", "aggregate", "report_csv", "write_run_log", "read_run_log",
           "JOINT_METHODS", "MARGINAL_METHODS", "run_group", "task_groups"]

MARGINAL_METHODS = ("pf", "spf", "aspf", "rbpf", "rbpf_sets")
JOINT_METHODS = ("pf", "joint_independent", "rkde", "rbpf")
SHAREABLE = ("pf", "spf", "aspf", "joint_independent", "rkde")


def dhat(log_probs) -> float:
    """``-mean(log p)``; infinite as soon as one probability is zero."""
    lp = np.asarray(log_probs, dtype=float).ravel()
    if lp.size == 0:
        raise ValueError("no samples")
    if np.any(np.isnan(lp)) or np.any(lp > 1e-12):
        raise ValueError("entries must be log-probabilities")
    if np.any(np.isneginf(lp)):
        return math.inf
    return float(-lp.mean()) + 0.0  # no negative zero


@dataclass(frozen=True)
class MethodSpec:
    name: str
    particles: int

    def __post_init__(self):
        if self.particles < 1:
            raise ValueError(f"{self.name}: particle count must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """``runs`` independent trajectories (samples) per method."""

    domain: AssemblyConfig
    methods: tuple
    runs: int = 1
    mode: str = "marginals"
    seed: int = 0
    recover: bool = True
    max_len: int | None = None
    shared: bool = False

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.mode not in ("marginals", "joint"):
            raise ValueError("mode must be 'marginals' or 'joint'")
        allowed = MARGINAL_METHODS if self.mode == "marginals" else JOINT_METHODS
        for m in self.methods:
            if m.name not in allowed:
                raise ValueError(f"method {m.name!r} not available in {self.mode} mode")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError("duplicate method")


@dataclass
class RunResult:
    run: int
    method: str
    dhat: np.ndarray           # (T,) per step, inf after the first blow-up
    events: list = field(default_factory=list)
    error: str | None = None
    seconds: float = 0.0

    @property
    def blowup_step(self) -> int | None:
        bad = np.nonzero(~np.isfinite(self.dhat))[0]
        return int(bad[0]) + 1 if bad.size else None


@dataclass
class KlSeries:
    """Per-step mean and std over the runs still finite at that step."""

    method: str
    mean: np.ndarray
    std: np.ndarray
    runs: np.ndarray
    blowup_step: int | None
    per_run: list = field(default_factory=list)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.mean.size + 1)


def _filter_for(cfg: ExperimentConfig, methods: tuple, domain, run: int):
    d = cfg.domain
    label = "+".join(m.name for m in methods)
    rng = derive_rng(cfg.seed, run, "filter", label)
    kw = dict(kappa=d.kappa, relational_similarity=d.relational_similarity, recover=cfg.recover)
    if len(methods) > 1:
        name = "multi"
    else:
        name = "aspf" if methods[0].name == "joint_independent" else methods[0].name
    if name in ("aspf", "rkde", "multi"):
        kw["max_len"] = cfg.max_len
    if name == "multi":
        filt = AssemblyMultiPF(domain, methods[0].particles, d.fault_probability, d.p_o, rng, **kw)
    else:
        filt = make_filter(name, domain, methods[0].particles, d.fault_probability, d.p_o, rng, **kw)
    return filt


def _score(filt, name: str, shared: bool, mode: str, truth) -> float:
    if mode == "marginals":
        lp = filt.log_marginals_for(name, truth) if shared else filt.log_marginals(truth)
        return dhat(lp)
    return dhat([filt.log_joint_for(name, truth) if shared else filt.log_joint(truth)])


def run_group(cfg: ExperimentConfig, run: int, methods: tuple) -> list[RunResult]:
    """Simulate trajectory ``run`` and score ``methods`` on one filter.

    Several methods are only grouped when they are particle-filter
    estimators with the same particle count; they then read one particle
    population.
    """
    start = time.perf_counter()
    traj = simulate_assembly(cfg.domain, seed=cfg.seed, run=run)
    shared = len(methods) > 1
    results = [RunResult(run, m.name, np.full(traj.length, math.inf)) for m in methods]
    live = list(range(len(methods)))
    try:
        filt = _filter_for(cfg, methods, traj.domain, run)
        filt.reset(traj.states[0])
        for t, (action, obs) in enumerate(zip(traj.actions, traj.observations)):
            filt.step(action, obs)
            truth = traj.states[t + 1]
            for k in list(live):
                v = _score(filt, methods[k].name, shared, cfg.mode, truth)
                results[k].dhat[t] = v
                if not math.isfinite(v):
                    live.remove(k)    # stays infinite
            if not live:
                break
        for r in results:
            r.events = list(filt.events)
    except Exception as exc:   # recorded per run, the batch continues
        for k in live:
            results[k].error = f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    for r in results:
        r.seconds = elapsed
    return results


def run_single(cfg: ExperimentConfig, run: int, method: MethodSpec) -> RunResult:
    """Simulate trajectory ``run`` and score one method on it."""
    return run_group(cfg, run, (method,))[0]


def task_groups(cfg: ExperimentConfig) -> list[tuple]:
    """Method groups sharing one filter (singletons unless ``cfg.shared``)."""
    if not cfg.shared:
        return [(m,) for m in cfg.methods]
    groups: dict = {}
    out = []
    for m in cfg.methods:
        if m.name in SHAREABLE:
            if m.particles not in groups:
                groups[m.particles] = []
                out.append(groups[m.particles])
            groups[m.particles].append(m)
        else:
            out.append([m])
    return [tuple(g) for g in out]


def _task(args):
    return run_group(*args)


def run_experiment(cfg: ExperimentConfig, jobs: int | None = 1, log_path=None) -> list[KlSeries]:
    """All (run, method group) pairs, in parallel over ``jobs`` processes."""
    tasks = [(cfg, run, g) for g in task_groups(cfg) for run in range(cfg.runs)]
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = [r for rs in pool.map(_task, tasks) for r in rs]
    else:
        results = [r for t in tasks for r in _task(t)]
    if log_path is not None:
        write_run_log(results, log_path)
    return aggregate(results, [m.name for m in cfg.methods])


def aggregate(results: list[RunResult], methods) -> list[KlSeries]:
    series = []
    for name in methods:
        rows = sorted((r for r in results if r.method == name), key=lambda r: r.run)
        if not rows:
            continue
        mat = np.vstack([r.dhat for r in rows]) if rows[0].dhat.size else np.zeros((len(rows), 0))
        finite = np.isfinite(mat)
        count = finite.sum(axis=0)
        vals = np.where(finite, mat, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(count > 0, vals.sum(axis=0) / np.maximum(count, 1), math.inf)
            sq = np.where(finite, (mat - mean) ** 2, 0.0)
            std = np.where(count > 0, np.sqrt(sq.sum(axis=0) / np.maximum(count, 1)), math.inf)
        blow = [r.blowup_step for r in rows if r.blowup_step is not None]
        series.append(KlSeries(name, mean, std, count, min(blow) if blow else None, rows))
    return series


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def report_csv(series: list[KlSeries], path) -> None:
    """One row per (method, step), methods in the given order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "step", "mean_dhat", "std_dhat", "runs", "blowup_step"])
        for s in series:
            blow = "" if s.blowup_step is None else s.blowup_step
            for k in range(s.mean.size):
                w.writerow([s.method, k + 1, _fmt(s.mean[k]), _fmt(s.std[k]), int(s.runs[k]), blow])


def write_run_log(results: list[RunResult], path) -> None:
    """JSON lines ``{"run", "method", "step", "dhat"}``; infinite values are
    written as ``Infinity``.  Failed runs add one ``{"run", "method", "error"}``."""
    with open(path, "w") as fh:
        for r in sorted(results, key=lambda r: (r.method, r.run)):
            for k, v in enumerate(r.dhat):
                fh.write(json.dumps({"run": r.run, "method": r.method, "step": k + 1,
                                     "dhat": float(v)}) + "\n")
            if r.error:
                fh.write(json.dumps({"run": r.run, "method": r.method, "error": r.error}) + "\n")


def read_run_log(path) -> list[RunResult]:
    rows: dict = {}
    errors: dict = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            key = (rec["method"], rec["run"])
            if "error" in rec:
                errors[key] = rec["error"]
                continue
            rows.setdefault(key, []).append((rec["step"], rec["dhat"]))
    out = []
    for (method, run), vals in sorted(rows.items()):
        vals.sort()
        out.append(RunResult(run, method, np.array([v for _, v in vals], dtype=float),
                             error=errors.get((method, run))))
    return out
