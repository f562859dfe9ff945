"""Campaign orchestration: run a method, compute grid oracles, sweep dimensions, write reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .baselines import random_search, running_sd, scenario_max, sd_max
from .bo import AcquisitionConfig, EvaluationLog, custom_validate
from .certify import BoundParams, Certificate, Verdict, check_certificate
from .config import SCHEMA_VERSION, ExperimentConfig
from .core import ParamSpace, RngSeed, UsageError, as_seed
from .distances import (ClosedLoopProblem, DistanceMeasure, FrameworkVariant, Synthesis, evaluate_variant)
from .experiments import (Experiment, LinearSetup, dubins_experiment, linear_experiment, linear_true_max,
                          pendulum_experiment)
from .gp import HyperBounds

log = logging.getLogger(__name__)

CSV_COLUMNS_HEAD = ("iter", "method")
CSV_COLUMNS_TAIL = ("distance", "running_max", "wall_ms")
WORKERS_ENV = "CTXVAL_WORKERS"


def build_experiment(cfg: ExperimentConfig, seed: RngSeed | int | None = None, identical: bool = False,
                     setup=None) -> Experiment:
    seed = as_seed(cfg.seed if seed is None else seed).child("experiment")
    setup = setup or cfg.setup()
    builders = {"pendulum": pendulum_experiment, "dubins": dubins_experiment, "linear": linear_experiment}
    exp = builders[cfg.task](seed, setup, distance=cfg.distance_name, identical=identical)
    if cfg.distance_mask is not None:
        exp.problem.distance = DistanceMeasure(cfg.distance_name, tuple(cfg.distance_mask))
    return exp


def acquisition_config(cfg: ExperimentConfig) -> AcquisitionConfig:
    return AcquisitionConfig(cfg.bo.ucb_beta, cfg.bo.acq_restarts, cfg.bo.acq_local_steps, cfg.bo.acq_candidates)


def hyper_bounds(cfg: ExperimentConfig) -> HyperBounds:
    b = cfg.bo
    return HyperBounds(tuple(np.log(b.signal_variance_bounds)), tuple(np.log(b.lengthscale_bounds)),
                       tuple(np.log(b.noise_variance_bounds)))


def run_method(cfg: ExperimentConfig, exp: Experiment, method: str, budget: int,
               seed: RngSeed | int | None = None, stop_when=None) -> EvaluationLog:
    """Run one search method on an experiment. All methods share the ``init`` stream of ``seed``."""
    seed = as_seed(cfg.seed if seed is None else seed).child("search")
    if method == "custom":
        return custom_validate(exp.problem, exp.space, budget, cfg.n_init, acquisition_config(cfg), seed,
                               refit_every=cfg.bo.refit_every, hyper_bounds=hyper_bounds(cfg),
                               hyper_restarts=cfg.bo.hyper_restarts, stop_when=stop_when)
    if method in ("sc", "sd"):
        return random_search(exp.problem, exp.space, budget, seed, method=method)
    raise UsageError(f"unknown method {method!r}")


def estimate(cfg: ExperimentConfig, trace: EvaluationLog) -> tuple[float, np.ndarray]:
    evals = list(zip(trace.params, trace.distances))
    if trace.method == "sd":
        return sd_max(evals, cfg.sd.to_sd())
    return scenario_max(evals)


def certify(cfg: ExperimentConfig, trace: EvaluationLog, d_hat: float) -> Certificate | None:
    if cfg.threshold is None:
        return None
    n = trace.n_success
    if trace.method == "custom":
        return check_certificate(d_hat, n, cfg.threshold, BoundParams(cfg.bound_C, trace.dim, cfg.bound_epsilon))
    # sampling estimates carry no convergence bound: compare the raw estimate to the threshold
    verdict = Verdict.VALIDATED if d_hat < cfg.threshold else Verdict.NOT_VALIDATED
    return Certificate(d_hat, n, 0.0, cfg.threshold, cfg.bound_epsilon, 0.0, verdict)


def evaluations_csv(trace: EvaluationLog, include_wall: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(CSV_COLUMNS_HEAD) + [f"p_{i}" for i in range(trace.dim)] + list(CSV_COLUMNS_TAIL)
    if not include_wall:
        cols = cols[:-1]
    w.writerow(cols)
    for r in trace.successes:
        row = [r.iteration, trace.method] + [repr(float(v)) for v in r.p] + [repr(r.distance), repr(r.running_max)]
        if include_wall:
            row.append(f"{r.wall_ms:.3f}")
        w.writerow(row)
    return buf.getvalue()


def strip_wall_clock(csv_text: str) -> str:
    """Drop the ``wall_ms`` column so two runs can be compared byte for byte."""
    return "\n".join(line.rsplit(",", 1)[0] for line in csv_text.splitlines()) + "\n"


def _record_dict(r) -> dict:
    return {"iter": r.iteration, "p": r.p.tolist(), "distance": None if r.failed else r.distance,
            "running_max": None if math.isnan(r.running_max) else r.running_max,
            "acquisition": None if math.isnan(r.acquisition) else r.acquisition,
            "source": r.source, "failed": r.failed, "controller_checksum": r.checksum}


@dataclass
class CampaignReport:
    config: dict
    method: str
    trace: EvaluationLog
    best_p: np.ndarray
    best_d: float
    estimate: float
    certificate: Certificate | None
    wall_clock_s: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "config": self.config,
            "method": self.method,
            "evaluations": [_record_dict(r) for r in self.trace.records],
            "best": {"p": self.best_p.tolist(), "distance": self.best_d},
            "estimate": self.estimate,
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "certificate_note": ("r_n depends on the user-supplied constant C, which the convergence "
                                 "result leaves unspecified; the guarantee is only as good as C"),
            "wall_clock": {"total_s": self.wall_clock_s},
            **self.extra,
        }

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / f"report_{self.method}.json"
        csv_path = out / f"evaluations_{self.method}.csv"
        report_path.write_text(json.dumps(self.to_dict(), indent=2))
        csv_path.write_text(evaluations_csv(self.trace))
        return report_path, csv_path


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> CampaignReport:
    """Run the configured method and (optionally) write ``report_<method>.json`` and the CSV."""
    if cfg.method == "variant-sweep":
        return run_variant_sweep(cfg, write)
    t0 = time.perf_counter()
    exp = build_experiment(cfg)
    trace = run_method(cfg, exp, cfg.method, cfg.resolved_budget())
    best_d, best_p = trace.best()
    est, _ = estimate(cfg, trace)
    report = CampaignReport(cfg.model_dump(mode="json"), cfg.method, trace, best_p, best_d, est,
                            certify(cfg, trace, est), time.perf_counter() - t0,
                            {"experiment": exp.info})
    if write:
        report.write(cfg.output_dir)
    return report


# -- parallel helpers -------------------------------------------------------

_WORKER_FN: Callable | None = None


def _call_worker(x):
    return _WORKER_FN(x)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def ordered_map(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    """Map in a fork-based process pool; results keep input order regardless of completion order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    global _WORKER_FN
    _WORKER_FN = fn
    try:
        with ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("fork")) as pool:
            return list(pool.map(_call_worker, items, chunksize=max(1, len(items) // (4 * workers))))
    finally:
        _WORKER_FN = None


# -- oracles ----------------------------------------------------------------

@dataclass
class OracleResult:
    d_star: float
    argmax: np.ndarray
    grid: np.ndarray
    values: np.ndarray


def grid_oracle(cfg: ExperimentConfig, resolution: int | Sequence[int] | None = None,
                exp: Experiment | None = None, dump: str | Path | None = None) -> OracleResult:
    """Exhaustive maximum of the distance over a uniform grid of the task space."""
    exp = exp or build_experiment(cfg)
    res = np.broadcast_to(np.asarray(cfg.oracle_resolution if resolution is None else resolution), (exp.space.dim,))
    total = int(np.prod(res.astype(float)))
    if total > cfg.oracle_cap:
        raise UsageError(f"grid of {total} points exceeds oracle_cap={cfg.oracle_cap}; "
                         f"raise oracle_cap to at least {total} or lower the resolution")
    grid = exp.space.grid(res)
    values = np.array(ordered_map(exp.problem, list(grid)))
    i = int(np.argmax(values))
    if dump is not None:
        with open(dump, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"p_{j}" for j in range(exp.space.dim)] + ["distance"])
            for p, v in zip(grid, values):
                w.writerow([repr(float(x)) for x in p] + [repr(float(v))])
    return OracleResult(float(values[i]), grid[i], grid, values)


def samples_to_reach(running: np.ndarray, target: float) -> int | None:
    """1-based index of the first running value at or above ``target``."""
    hit = np.flatnonzero(np.nan_to_num(running, nan=-np.inf) >= target)
    return int(hit[0]) + 1 if hit.size else None


# -- dimensionality sweep ---------------------------------------------------

def _sweep_trial(args):
    cfg, n, trial = args
    setup = replace(cfg.setup(), state_dim=n) if cfg.task == "linear" else cfg.setup()
    seed = as_seed(cfg.seed).child("sweep").child(n).child(trial)
    exp = build_experiment(cfg, seed=seed, setup=setup)
    d_star, _ = linear_true_max(exp, setup)
    target = (1 - cfg.sweep.tolerance) * d_star
    out = {}
    for method in cfg.sweep.methods:
        if method == "custom":
            tr = run_method(cfg, exp, "custom", cfg.sweep.custom_cap, seed,
                            stop_when=lambda t: t.n_success and t.running_max[-1] >= target)
            out[method] = samples_to_reach(tr.running_max, target)
        else:
            if "random" not in out:
                out["random"] = run_method(cfg, exp, "sc", cfg.sweep.random_cap, seed)
            tr = out["random"]
            running = tr.running_max if method == "sc" else running_sd(tr, cfg.sd.to_sd())
            out[method] = samples_to_reach(running, target)
    out.pop("random", None)
    return {"d_star": d_star, **out}


def sweep_dimensionality(cfg: ExperimentConfig, write: bool = True) -> list[dict]:
    """Median samples needed to come within the tolerance of the true maximum, per state dimension.

    Unreached trials count as ``cap + 1`` in the median and are reported in
    ``reached``.
    """
    if cfg.task != "linear":
        raise UsageError("the dimensionality sweep is defined for the linear task family")
    jobs = [(cfg, n, t) for n in cfg.sweep.dims for t in range(cfg.sweep.trials)]
    results = ordered_map(_sweep_trial, jobs)
    rows = []
    for n in cfg.sweep.dims:
        trials = [r for (c, nn, _), r in zip(jobs, results) if nn == n]
        for method in cfg.sweep.methods:
            cap = cfg.sweep.custom_cap if method == "custom" else cfg.sweep.random_cap
            counts = [cap + 1 if t[method] is None else t[method] for t in trials]
            rows.append({"state_dim": n, "task_dim": 2 * n, "method": method,
                         "median_samples": float(np.median(counts)),
                         "reached": sum(t[method] is not None for t in trials),
                         "trials": len(trials), "counts": counts})
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state_dim", "task_dim", "method", "median_samples", "reached", "trials"])
            for r in rows:
                w.writerow([r["state_dim"], r["task_dim"], r["method"], r["median_samples"], r["reached"], r["trials"]])
    return rows


# -- method comparison ------------------------------------------------------

def compare(cfg: ExperimentConfig, methods: Sequence[str], write: bool = True) -> dict:
    """Run several methods on one experiment with a shared initial design."""
    exp = build_experiment(cfg)
    out = {}
    traces = {}
    baseline = cfg.baseline_budget or cfg.budget
    random_trace = None
    for m in methods:
        if m == "custom":
            tr = run_method(cfg, exp, "custom", cfg.resolved_budget())
        else:
            budget = replace_method(cfg, m).resolved_budget() if baseline == "auto" else int(baseline)
            # sc and sd draw the same samples; only the estimator differs
            if random_trace is None or random_trace.n_success < budget:
                random_trace = run_method(cfg, exp, m, budget)
            tr = EvaluationLog(m, exp.space.dim, random_trace.truncated(budget).records)
        traces[m] = tr
        est, p = estimate(cfg, tr)
        out[m] = {"estimate": est, "argmax": np.asarray(p).tolist(), "evaluations": tr.n_success,
                  "certificate": None if cfg.threshold is None else certify(cfg, tr, est).to_dict()}
    if write:
        path = Path(cfg.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        body = "".join(evaluations_csv(traces[m]).split("\n", 1)[1] if i else evaluations_csv(traces[m])
                       for i, m in enumerate(methods))
        (path / "compare.csv").write_text(body)
        (path / "compare.json").write_text(json.dumps({"config": cfg.model_dump(mode="json"),
                                                       "version": __version__, "methods": out}, indent=2))
    out["_traces"] = traces
    return out


def replace_method(cfg: ExperimentConfig, method: str) -> ExperimentConfig:
    return cfg.model_copy(update={"method": method})


# -- framework variants -----------------------------------------------------

def maximize_box(f: Callable[[np.ndarray], float], space: ParamSpace, n_random: int, n_starts: int,
                 local_steps: int, seed: RngSeed | int) -> tuple[float, np.ndarray]:
    """Random sampling followed by compass search from the best few samples."""
    rng = as_seed(seed).generator()
    X = space.lower + rng.random((n_random, space.dim)) * space.width
    vals = np.array([f(x) for x in X])
    best_val, best_x = -np.inf, None
    for i in np.argsort(-vals, kind="stable")[:n_starts]:
        x, fx, step = X[i].copy(), vals[i], 0.25
        for _ in range(local_steps):
            improved = False
            for j in range(space.dim):
                for sign in (1.0, -1.0):
                    y = x.copy()
                    y[j] = np.clip(y[j] + sign * step * space.width[j], space.lower[j], space.upper[j])
                    fy = f(y)
                    if fy > fx:
                        x, fx, improved = y, fy, True
            if not improved:
                step *= 0.5
                if step < 1e-4:
                    break
        if fx > best_val:
            best_val, best_x = fx, x
    return best_val, best_x


def variant_profiles(exp: Experiment, thetas: np.ndarray, cfg: ExperimentConfig) -> dict[str, np.ndarray]:
    """Distance of each validation variant along a grid of tasks.

    Open-loop variants are maximized over input knots; since their rollouts
    only depend on the task through the initial state and horizon, the
    maximization is shared between tasks with equal ``(x0, H)``.
    """
    problem = exp.problem
    dist = problem.distance
    vc = cfg.variants
    out = {v.value: np.empty(len(thetas)) for v in FrameworkVariant}
    knot_cache: dict = {}
    for i, theta in enumerate(thetas):
        p = np.atleast_1d(theta)
        syn = problem.synthesize(p)
        fixed = lambda _p, _syn=syn: _syn
        for v in (FrameworkVariant.CCDT, FrameworkVariant.CUSTOM):
            out[v.value][i] = evaluate_variant(v, problem.system, problem.model, fixed, dist, p, p.size)
        for v in (FrameworkVariant.OLDT, FrameworkVariant.OLCD):
            key = (v, np.asarray(syn.x0).tobytes(), syn.horizon)
            if key not in knot_cache:
                f = lambda knots, _v=v: evaluate_variant(_v, problem.system, problem.model, fixed, dist,
                                                          np.concatenate([p, knots]), p.size, exp.open_loop)
                knot_cache[key] = maximize_box(f, exp.knot_space, vc.knot_random, vc.knot_starts,
                                               vc.knot_local_steps, as_seed(cfg.seed).child("knots").child(v.value))[1]
            out[v.value][i] = evaluate_variant(v, problem.system, problem.model, fixed, dist,
                                               np.concatenate([p, knot_cache[key]]), p.size, exp.open_loop)
    return out


def run_variant_sweep(cfg: ExperimentConfig, write: bool = True) -> CampaignReport:
    t0 = time.perf_counter()
    exp = build_experiment(cfg)
    thetas = np.linspace(exp.space.lower[0], exp.space.upper[0], cfg.variants.grid)
    prof = variant_profiles(exp, thetas, cfg)
    trace = EvaluationLog("variant-sweep", 1)
    for th, d in zip(thetas, prof["custom"]):
        trace.add([th], d, source="grid")
    best_d, best_p = trace.best()
    report = CampaignReport(cfg.model_dump(mode="json"), "variant-sweep", trace, best_p, best_d, best_d,
                            None, time.perf_counter() - t0,
                            {"profiles": {"theta_final": thetas.tolist(), **{k: v.tolist() for k, v in prof.items()}}})
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "variants.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta_final"] + [v.value for v in FrameworkVariant])
            for i, th in enumerate(thetas):
                w.writerow([repr(float(th))] + [repr(float(prof[v.value][i])) for v in FrameworkVariant])
        report.write(out)
    return report
