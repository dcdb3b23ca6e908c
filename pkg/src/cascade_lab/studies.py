"""Replicated experiment studies and their report emission.

Each study writes delimited outputs (CSV and gnuplot-style .dat files), a
summary JSON, and rendered figures into one output directory.  Replications
draw from seeds derived per replication index, so results are reproducible
and independent of worker scheduling.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plots
from .bandit import AlgoConfig, RunResult, metadata_to_json, run_to_csv, run_tpnodeim
from .diffusion import simulate_cascade
from .estimator import (ObservationSet, build_ellipsoid, fit_mle, kappa_from_bound,
                        log_likelihood, matrix_floor_bound, rho_star, suff_stats)
from .generators import generate_graph
from .graphs import load_instance
from .linalg import min_eigenvalue
from .seeding import STREAM_STUDY, derive_rng, spawn_seed

STUDY_KINDS = ("coverage", "rho", "regret_scaling", "censoring", "single_run")


@dataclass
class ExperimentSpec:
    """Declarative description of one study run."""

    study: str
    instance: dict = field(default_factory=lambda: {"kind": "fig1"})
    replications: int = 20
    base_seed: int = 0
    algo: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        if self.study not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.study!r}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        payload = json.loads(Path(path).read_text())
        return cls(**payload)


@dataclass
class StudySummary:
    study: str
    stats: dict
    passed: bool
    outputs: list = field(default_factory=list)


def _load_instance_spec(instance: dict):
    if "path" in instance:
        return load_instance(instance["path"])
    return generate_graph(instance.get("kind", "fig1"), instance.get("params"),
                          seed=instance.get("seed", 0))


def _algo_config(spec: ExperimentSpec, graph, fm, theta, horizon: int) -> AlgoConfig:
    """Fill the learner's configured constants from the instance when absent."""
    algo = dict(spec.algo)
    algo.setdefault("horizon", horizon)
    algo.setdefault("seed_size", 1)
    if "norm_bound" not in algo:
        algo["norm_bound"] = float(np.linalg.norm(theta.theta))
    if "p_min_assumed" not in algo:
        scores = fm.features @ theta.theta
        algo["p_min_assumed"] = float(np.min(-np.expm1(-scores)))
    return AlgoConfig(**algo)


def _limit_worker_threads():
    # replication-level parallelism only; BLAS threads would oversubscribe
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def _parallel_map(fn, args_list, jobs: int):
    if jobs <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs,
                             initializer=_limit_worker_threads) as pool:
        return list(pool.map(fn, args_list))


def _write_dat(path, header: str, columns) -> str:
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for row in zip(*columns):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    return str(path)


def _summary_json(out_dir: Path, summary: StudySummary) -> str:
    path = out_dir / "summary.json"
    with open(path, "w") as fh:
        json.dump({"study": summary.study, "passed": summary.passed,
                   "stats": summary.stats, "outputs": summary.outputs},
                  fh, indent=2, default=_np_fallback)
    return str(path)


def _np_fallback(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"cannot serialize {type(value)}")


# ---------------------------------------------------------------------------
# coverage study
# ---------------------------------------------------------------------------

def coverage_min_obs(d: int, p: float, delta: float, margin: float = 1.3) -> int:
    """Observation count making the ellipsoid's design condition hold with
    margin, assuming only the conservative rho floor p/2."""
    theta_norm = math.sqrt(d) * (-math.log1p(-p))
    kappa = kappa_from_bound(theta_norm)
    r_bound = 1.0 / p
    need = 16.0 * r_bound ** 2 * (d + math.log(1.0 / delta))
    per_coord = need / (kappa ** 2 * (p / 2.0) ** 2)
    return int(math.ceil(margin * d * per_coord))


def _coverage_rep(args) -> dict:
    base_seed, rep, d, p, n_obs, delta = args
    rng = derive_rng(base_seed, STREAM_STUDY, rep)
    per = n_obs // d
    theta_star = np.full(d, -math.log1p(-p))
    feats = np.repeat(np.eye(d), per, axis=0)
    outcomes = (rng.random(per * d) < p).astype(np.int8)
    obs = ObservationSet.from_arrays(feats, outcomes)
    norm_bound = float(np.linalg.norm(theta_star))
    # gradient tolerance at the statistical noise floor; tighter values sit
    # below what float64 likelihood comparisons can certify at this n
    result = fit_mle(obs, tol=2e-2, max_iter=300, norm_bound=norm_bound)
    stats = suff_stats(obs)
    ell = build_ellipsoid(result.theta_hat, stats, kappa_from_bound(norm_bound),
                          1.0 / p, delta1=delta, delta2=delta, rho_floor=p / 2.0)
    return {
        "rep": rep,
        "contains": bool(ell.contains(theta_star)),
        "precondition_ok": bool(ell.precondition_ok),
        "rho_star": ell.rho_star,
        "radius_sq": ell.radius_sq,
        "err_norm": float(np.linalg.norm(result.theta_hat - theta_star)),
        "converged": bool(result.converged),
    }


def _run_coverage(spec: ExperimentSpec, out_dir: Path, jobs: int, render: bool) -> StudySummary:
    p = float(spec.params.get("p", 0.5))
    d = int(spec.params.get("d", 2))
    delta = float(spec.params.get("delta", 0.05))
    threshold = float(spec.params.get("threshold", 0.90))
    n_obs = int(spec.params.get("n_obs", coverage_min_obs(d, p, delta)))
    args = [(spec.base_seed, rep, d, p, n_obs, delta) for rep in range(spec.replications)]
    rows = sorted(_parallel_map(_coverage_rep, args, jobs), key=lambda r: r["rep"])

    freq = sum(r["contains"] for r in rows) / len(rows)
    pre_rate = sum(r["precondition_ok"] for r in rows) / len(rows)
    outputs = []
    csv_path = out_dir / "coverage_reps.csv"
    with open(csv_path, "w") as fh:
        fh.write("rep,contains,precondition_ok,rho_star,radius_sq,err_norm,converged\n")
        for r in rows:
            fh.write(f"{r['rep']},{int(r['contains'])},{int(r['precondition_ok'])},"
                     f"{r['rho_star']!r},{r['radius_sq']!r},{r['err_norm']!r},"
                     f"{int(r['converged'])}\n")
    outputs.append(str(csv_path))
    if render:
        outputs.append(plots.coverage_figure([r["contains"] for r in rows],
                                             1.0 - 2 * delta, out_dir / "coverage.png"))
    stats = {
        "replications": len(rows),
        "n_obs": n_obs,
        "delta": delta,
        "contains_freq": freq,
        "nominal_level": 1.0 - 2 * delta,
        "precondition_rate": pre_rate,
        "mean_rho_star": float(np.mean([r["rho_star"] for r in rows])),
        "mean_err_norm": float(np.mean([r["err_norm"] for r in rows])),
    }
    summary = StudySummary(study="coverage", stats=stats,
                           passed=freq >= threshold, outputs=outputs)
    summary.outputs.append(_summary_json(out_dir, summary))
    return summary


# ---------------------------------------------------------------------------
# rho study
# ---------------------------------------------------------------------------

def _rho_rep(args) -> dict:
    base_seed, rep, d, p, n, scale = args
    rng = derive_rng(base_seed, STREAM_STUDY, rep)
    feats = scale * np.tile(np.eye(d), (n // d, 1))
    outcomes = (rng.random(feats.shape[0]) < p).astype(np.int8)
    obs = ObservationSet.from_arrays(feats, outcomes)
    stats = suff_stats(obs)
    rho = rho_star(stats)
    gap = min_eigenvalue(stats.success - 0.5 * p * stats.total)
    tol = 1e-12 * max(float(np.trace(stats.total)), 1.0)
    return {"rep": rep, "rho_star": rho.rho, "floor_holds": bool(gap >= -tol),
            "lambda_star": min_eigenvalue(stats.total)}


def _run_rho(spec: ExperimentSpec, out_dir: Path, jobs: int, render: bool) -> StudySummary:
    d = int(spec.params.get("d", 3))
    p = float(spec.params.get("p", 0.6))
    n = int(spec.params.get("n", 3000))
    scale = float(spec.params.get("scale", 0.9))
    args = [(spec.base_seed, rep, d, p, n, scale) for rep in range(spec.replications)]
    rows = sorted(_parallel_map(_rho_rep, args, jobs), key=lambda r: r["rep"])

    lam_star = rows[0]["lambda_star"]
    bound = matrix_floor_bound(n=d * (n // d), d=d, p=p, lambda_star=lam_star,
                               feature_bound=scale ** 4, c=0.5)
    freq = sum(r["floor_holds"] for r in rows) / len(rows)
    samples = [r["rho_star"] for r in rows]
    outputs = [_write_dat(out_dir / "rho_samples.dat", "rho_star per replication",
                          [list(range(len(samples))), samples])]
    if render:
        outputs.append(plots.rho_histogram_figure(samples, 0.5 * p, out_dir / "rho_hist.png"))
    stats = {
        "replications": len(rows),
        "floor": 0.5 * p,
        "floor_freq": freq,
        "bernstein_bound": bound,
        "rho_min": float(np.min(samples)),
        "rho_mean": float(np.mean(samples)),
        "all_in_unit_interval": bool(all(0.0 <= r <= 1.0 for r in samples)),
    }
    passed = freq >= bound and stats["all_in_unit_interval"]
    summary = StudySummary(study="rho", stats=stats, passed=passed, outputs=outputs)
    summary.outputs.append(_summary_json(out_dir, summary))
    return summary


# ---------------------------------------------------------------------------
# regret scaling study
# ---------------------------------------------------------------------------

def _tau_for(policy: str, horizon: int, d: int) -> int:
    base = math.sqrt(horizon) * math.log(horizon)
    if policy == "sqrt":
        return max(1, math.ceil(base))
    if policy == "sqrt_over_d":
        return max(1, math.ceil(base / d))
    if policy == "auto":
        tau = max(1, math.ceil(base))
        if d * tau > horizon // 2:
            tau = max(1, math.ceil(base / d))
        return tau
    raise ValueError(f"unknown tau policy {policy!r}")


def _regret_run(args) -> dict:
    instance, algo, params, base_seed, idx, horizon = args
    graph, fm, theta = _load_instance_spec(instance)
    spec = ExperimentSpec(study="regret_scaling", instance=instance,
                          base_seed=base_seed, algo=algo, params=params)
    config = _algo_config(spec, graph, fm, theta, horizon)
    tau = _tau_for(params.get("tau_policy", "auto"), horizon, fm.dimension)
    config.tau_override = tau
    result = run_tpnodeim(graph, fm, theta, config, spawn_seed(base_seed, STREAM_STUDY, idx))
    regrets = np.array([r.regret for r in result.rounds])
    tenth = max(1, horizon // 10)
    return {
        "idx": idx,
        "horizon": horizon,
        "tau": tau,
        "cumulative": result.cumulative_regret.tolist(),
        "total_regret": float(result.cumulative_regret[-1]),
        "head_mean": float(np.mean(regrets[:tenth])),
        "tail_mean": float(np.mean(regrets[-tenth:])),
        "rounds_csv_rows": None,
        "metadata": result.metadata,
        "rounds": result.rounds,
    }


def _run_regret(spec: ExperimentSpec, out_dir: Path, jobs: int, render: bool) -> StudySummary:
    horizons = [int(t) for t in spec.params.get("T_grid", [2000, 4000, 8000, 16000])]
    slope_threshold = float(spec.params.get("slope_threshold", 0.75))
    decay_threshold = float(spec.params.get("decay_threshold", 0.25))
    args = [(spec.instance, spec.algo, spec.params, spec.base_seed, i, t)
            for i, t in enumerate(horizons)]
    runs = sorted(_parallel_map(_regret_run, args, jobs), key=lambda r: r["idx"])

    outputs = []
    series = {}
    for run in runs:
        label = str(run["horizon"])
        series[label] = run["cumulative"]
        rr = RunResult(rounds=run["rounds"],
                       cumulative_regret=np.array(run["cumulative"]),
                       theta_hat=np.zeros(1), metadata=run["metadata"])
        csv_path = out_dir / f"rounds_T{label}.csv"
        run_to_csv(rr, csv_path)
        outputs.append(str(csv_path))
        meta_path = out_dir / f"metadata_T{label}.json"
        metadata_to_json(rr, meta_path)
        outputs.append(str(meta_path))
        outputs.append(_write_dat(out_dir / f"cumulative_T{label}.dat",
                                  "round cumulative_regret",
                                  [list(range(1, len(run["cumulative"]) + 1)),
                                   run["cumulative"]]))

    totals = [max(run["total_regret"], 1e-9) for run in runs]
    slope = float(np.polyfit(np.log(horizons), np.log(totals), 1)[0])
    decay_ratios = [run["tail_mean"] / max(run["head_mean"], 1e-12) for run in runs]
    outputs.append(_write_dat(out_dir / "scaling.dat", "T cumulative_regret",
                              [horizons, totals]))
    if render:
        outputs.append(plots.regret_curve_figure(series, out_dir / "regret_curves.png"))
        outputs.append(plots.loglog_scaling_figure(horizons, totals, slope,
                                                   out_dir / "regret_scaling.png"))
    stats = {
        "horizons": horizons,
        "totals": totals,
        "taus": [run["tau"] for run in runs],
        "slope": slope,
        "decay_ratios": decay_ratios,
        "slope_threshold": slope_threshold,
        "decay_threshold": decay_threshold,
    }
    passed = slope <= slope_threshold and all(r <= decay_threshold for r in decay_ratios)
    summary = StudySummary(study="regret_scaling", stats=stats, passed=passed,
                           outputs=outputs)
    summary.outputs.append(_summary_json(out_dir, summary))
    return summary


# ---------------------------------------------------------------------------
# censoring study
# ---------------------------------------------------------------------------

def _run_censoring(spec: ExperimentSpec, out_dir: Path, jobs: int, render: bool) -> StudySummary:
    graph, fm, theta_true = _load_instance_spec(spec.instance)
    n_casc = int(spec.params.get("n_cascades", 10_000))
    tol = float(spec.params.get("tol", 0.02))
    seeds = tuple(spec.params.get("seed_set", (0,)))
    target_combined = float(spec.params.get("combined", 0.72))

    obs = ObservationSet(fm.dimension)
    rng = derive_rng(spec.base_seed, STREAM_STUDY, 0)
    activated = 0
    target_node = int(spec.params.get("target_node", graph.node_count - 1))
    for _ in range(n_casc):
        trace = simulate_cascade(graph, fm, theta_true, seeds, rng)
        obs.extend_from_trace(trace)
        if trace.activated_at[target_node] is not None:
            activated += 1

    norm_bound = float(np.linalg.norm(theta_true.theta)) + 1.0
    fit = fit_mle(obs, tol=1e-7, max_iter=600, norm_bound=norm_bound)

    # Combined feature of the target's full parent set.
    rows = [fm.features[graph.edge_index[(u, target_node)]]
            for u in graph.in_neighbors[target_node]]
    x_combined = np.sum(rows, axis=0)
    combined_hat = float(-np.expm1(-(x_combined @ fit.theta_hat)))

    # A direction orthogonal to every observed feature is censored: the
    # likelihood cannot see motion along it.
    uniq = np.unique(obs.features, axis=0)
    _, svals, vt = np.linalg.svd(uniq, full_matrices=True)
    null_mask = np.ones(fm.dimension, dtype=bool)
    null_mask[:svals.shape[0]] = svals < 1e-10 * max(svals[0], 1.0)
    if not null_mask.any():
        direction = None
    else:
        direction = vt[np.nonzero(null_mask)[0][0]]

    offsets = np.linspace(-0.5, 0.5, 41)
    if direction is not None:
        lls = np.array([log_likelihood(fit.theta_hat + s * direction, obs)
                        for s in offsets])
        ll_range = float(np.max(lls) - np.min(lls))
        k_edge = graph.edge_index[(graph.in_neighbors[target_node][0], target_node)]
        edge_probs = np.array([
            float(-np.expm1(-(fm.features[k_edge] @ (fit.theta_hat + s * direction))))
            for s in offsets])
    else:
        lls = np.full_like(offsets, math.nan)
        ll_range = math.nan
        edge_probs = np.full_like(offsets, math.nan)

    outputs = [_write_dat(out_dir / "profile.dat",
                          "offset loglik edge_prob",
                          [offsets, lls, edge_probs])]
    if render:
        outputs.append(plots.censoring_profile_figure(offsets, lls, edge_probs,
                                                      combined_hat,
                                                      out_dir / "censoring.png"))
    stats = {
        "n_cascades": n_casc,
        "combined_estimate": combined_hat,
        "combined_target": target_combined,
        "empirical_target_freq": activated / n_casc,
        "profile_ll_range": ll_range,
        "censored_direction_found": direction is not None,
        "fit_converged": bool(fit.converged),
    }
    passed = (abs(combined_hat - target_combined) <= tol
              and direction is not None and ll_range <= 1e-6)
    summary = StudySummary(study="censoring", stats=stats, passed=passed,
                           outputs=outputs)
    summary.outputs.append(_summary_json(out_dir, summary))
    return summary


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------

def _run_single(spec: ExperimentSpec, out_dir: Path, jobs: int, render: bool) -> StudySummary:
    graph, fm, theta = _load_instance_spec(spec.instance)
    horizon = int(spec.algo.get("horizon", 1000))
    config = _algo_config(spec, graph, fm, theta, horizon)
    if config.tau_override is None and "tau_policy" in spec.params:
        config.tau_override = _tau_for(spec.params["tau_policy"], horizon, fm.dimension)
    result = run_tpnodeim(graph, fm, theta, config,
                          spawn_seed(spec.base_seed, STREAM_STUDY, 0))
    outputs = []
    csv_path = out_dir / "rounds.csv"
    run_to_csv(result, csv_path)
    outputs.append(str(csv_path))
    meta_path = out_dir / "metadata.json"
    metadata_to_json(result, meta_path)
    outputs.append(str(meta_path))
    outputs.append(_write_dat(out_dir / "cumulative.dat", "round cumulative_regret",
                              [list(range(1, len(result.rounds) + 1)),
                               result.cumulative_regret.tolist()]))
    if render:
        outputs.append(plots.regret_curve_figure(
            {str(horizon): result.cumulative_regret.tolist()},
            out_dir / "regret_curve.png"))
    stats = {
        "horizon": horizon,
        "tau": result.metadata["tau"],
        "total_regret": float(result.cumulative_regret[-1]),
        "f_star": result.metadata["f_star"],
        "mle_failures": result.metadata["mle_failures"],
    }
    summary = StudySummary(study="single_run", stats=stats, passed=True,
                           outputs=outputs)
    summary.outputs.append(_summary_json(out_dir, summary))
    return summary


_RUNNERS = {
    "coverage": _run_coverage,
    "rho": _run_rho,
    "regret_scaling": _run_regret,
    "censoring": _run_censoring,
    "single_run": _run_single,
}


def run_study(spec: ExperimentSpec, out_dir=None, jobs: int = 1,
              render: bool = True) -> StudySummary:
    """Run one study and write its reports; returns the summary."""
    out = Path(out_dir if out_dir is not None else (spec.out or "study_out"))
    out.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[spec.study](spec, out, jobs, render)
