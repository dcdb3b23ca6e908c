"""Two-phase online influence maximization with node-level feedback.

Phase one explores: a fixed roster of feature-diverse edges is cycled, each
round seeding just the source of one roster edge so that edge's outcome is
observed in isolation at step one.  Phase two exploits: every round asks the
pair oracle for a seed set that is optimistic over the current confidence
ellipsoid, then refits the estimate and rebuilds the ellipsoid from the new
observations.  Regret is accounted against the exact optimum under the true
parameter, scaled by the oracle's approximation factors.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import linalg
from .diffusion import exact_influence, mc_influence, simulate_cascade
from .estimator import (InfeasibleInitError, ObservationSet, OutOfDomainError,
                        SuffStats, build_ellipsoid, fit_mle, kappa_from_bound,
                        log_likelihood)
from .graphs import DirectedGraph, FeatureMap, ParamVector, validate_instance
from .oracle import exhaustive_opt, greedy_im, pair_oracle
from .seeding import STREAM_CASCADE, STREAM_F_EVAL, STREAM_ORACLE, derive_rng

PHASE_EXPLORE = "explore"
PHASE_EXPLOIT = "exploit"


@dataclass
class AlgoConfig:
    """Everything the learner is told up front."""

    horizon: int                      # total rounds T
    seed_size: int                    # cardinality budget K
    norm_bound: float                 # assumed bound on the parameter norm
    p_min_assumed: float              # assumed minimum edge probability
    m_rand: int | None = None         # oracle boundary samples (default 2d)
    n_mc: int = 300                   # oracle Monte Carlo sample size
    tau_override: int | None = None   # fixed number of exploration super-rounds
    exploration_count: int | None = None  # roster size (default feature dim)
    alpha: float = 1.0                # oracle approximation factor for accounting
    beta: float = 1.0                 # oracle success probability for accounting
    delta_exponent: float = 2.0       # per-round confidence schedule 1/t^exponent
    mle_tol: float = 1e-4             # gradient tolerance per sqrt(observation)
    mle_max_iter: int = 400
    f_eval_mc: int = 20_000           # fallback sample size for expected spreads

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.seed_size < 1:
            raise ValueError("seed_size must be at least 1")
        if not 0.0 < self.p_min_assumed < 1.0:
            raise ValueError("p_min_assumed must lie in (0, 1)")
        if not 0.0 < self.alpha <= 1.0 or not 0.0 < self.beta <= 1.0:
            raise ValueError("alpha and beta must lie in (0, 1]")
        if self.tau_override is not None and self.tau_override < 1:
            raise ValueError("tau_override must be at least 1")

    @property
    def r_bound(self) -> float:
        return 1.0 / self.p_min_assumed

    @property
    def rho_floor(self) -> float:
        return self.p_min_assumed / 2.0

    def delta_at(self, t: int) -> float:
        return 1.0 / max(t, 2) ** self.delta_exponent


@dataclass
class RoundLog:
    round: int
    phase: str
    seed_set: tuple
    spread: int
    f_exp: float
    regret: float
    rho_star: float
    lambda_min: float
    radius_sq: float
    n_obs: int = 0
    precondition_ok: bool | None = None


@dataclass
class RunResult:
    rounds: list
    cumulative_regret: np.ndarray
    theta_hat: np.ndarray
    metadata: dict = field(default_factory=dict)


@dataclass
class ExplorationSet:
    edges: list            # edge indices, one per roster slot
    sigma_min: float       # smallest singular value of the feature columns
    lambda_min: float      # smallest eigenvalue of the summed outer products


def select_exploration_edges(graph: DirectedGraph, fm: FeatureMap,
                             count: int) -> ExplorationSet:
    """Pick ``count`` edges by greedily maximizing the smallest singular value
    of the chosen feature columns (ties to the smaller edge index)."""
    n_edges = graph.edge_count
    if count > n_edges:
        raise ValueError(f"cannot pick {count} edges from {n_edges}")
    chosen: list = []
    cols: list = []
    for _ in range(count):
        best_e, best_sigma = None, -1.0
        for e in range(n_edges):
            if e in chosen:
                continue
            trial = np.column_stack(cols + [fm.features[e]])
            gram = trial.T @ trial
            sigma = math.sqrt(max(linalg.min_eigenvalue(gram), 0.0))
            if sigma > best_sigma + 1e-15:
                best_e, best_sigma = e, sigma
        chosen.append(best_e)
        cols.append(fm.features[best_e])
    if best_sigma <= 1e-10:
        raise ValueError("no feature-nonsingular edge subset found; "
                         "the exploration assumption fails on this instance")
    outer = sum(np.outer(c, c) for c in cols)
    return ExplorationSet(edges=chosen, sigma_min=best_sigma,
                          lambda_min=linalg.min_eigenvalue(outer))


def exploration_tau(horizon: int, d: int, r_bound: float, kappa: float,
                    rho: float, lambda_min_o: float,
                    tau_override: int | None = None) -> int:
    """Number of exploration super-rounds: the larger of sqrt(T) log T and the
    design-strength requirement, unless overridden."""
    if tau_override is not None:
        return int(tau_override)
    first = math.sqrt(horizon) * math.log(horizon)
    second = 16.0 * r_bound ** 2 * (d + 2.0 * math.log(horizon)) / (
        kappa ** 2 * rho ** 2 * lambda_min_o)
    return int(math.ceil(max(first, second)))


def scaled_regret(f_star: float, f_st: float, alpha: float, beta: float) -> float:
    """Benchmark-adjusted per-round loss; can be negative near the optimum."""
    if not 0.0 < alpha <= 1.0 or not 0.0 < beta <= 1.0:
        raise ValueError("alpha and beta must lie in (0, 1]")
    if f_star < 0.0 or f_st < 0.0:
        raise ValueError("spread values must be nonnegative")
    return f_star - f_st / (alpha * beta)


class _SpreadOracle:
    """Expected spread under the true parameter, exact and cached when small."""

    def __init__(self, graph, fm, theta_true, config: AlgoConfig, seed: int):
        self.graph, self.fm, self.theta = graph, fm, theta_true
        self.config = config
        self.seed = seed
        self.exact = graph.edge_count <= 24
        self.cache: dict = {}
        self.mc_se: dict = {}

    def __call__(self, seeds: tuple) -> float:
        key = tuple(sorted(seeds))
        if key not in self.cache:
            if self.exact:
                self.cache[key] = exact_influence(self.graph, self.fm, self.theta, key)
            else:
                rng = derive_rng(self.seed, STREAM_F_EVAL, 1 + len(self.cache))
                mean, se = mc_influence(self.graph, self.fm, self.theta, key,
                                        self.config.f_eval_mc, rng)
                self.cache[key] = mean
                self.mc_se[key] = se
        return self.cache[key]


def run_tpnodeim(graph: DirectedGraph, fm: FeatureMap, theta_true,
                 config: AlgoConfig, seed: int) -> RunResult:
    """Run the two-phase algorithm for ``config.horizon`` rounds.

    Deterministic given ``seed``: every cascade, oracle call and fallback
    spread estimate draws from a stream derived from (seed, purpose, round).
    """
    report = validate_instance(graph, fm, theta_true)
    d = fm.dimension
    count = config.exploration_count or d
    roster = select_exploration_edges(graph, fm, count)
    kappa = kappa_from_bound(config.norm_bound)
    tau = exploration_tau(config.horizon, count, config.r_bound, kappa,
                          config.rho_floor, roster.lambda_min, config.tau_override)
    explore_rounds = min(count * tau, config.horizon)

    f_exp = _SpreadOracle(graph, fm, theta_true, config, seed)
    try:
        opt_seeds, f_star = exhaustive_opt(graph, fm, theta_true, config.seed_size)
        f_star_se = 0.0
    except ValueError:
        rng = derive_rng(seed, STREAM_F_EVAL, 0)
        opt_seeds = greedy_im(graph, fm, theta_true, config.seed_size,
                              n_mc=config.f_eval_mc, rng=rng)
        f_star, f_star_se = mc_influence(graph, fm, theta_true, opt_seeds,
                                         config.f_eval_mc, rng)

    theta_vec = theta_true.theta if isinstance(theta_true, ParamVector) else np.asarray(theta_true)
    probs_true = -np.expm1(-(fm.features @ theta_vec))
    p_min_true = float(np.min(probs_true))

    obs = ObservationSet(d)
    stats = SuffStats.zeros(d)
    rounds: list = []
    lemma3_checks: list = []
    vm_floor_flags: list = []
    mle_failures = 0
    theta_hat = None
    ellipsoid = None

    def lam_min_now() -> float:
        return linalg.min_eigenvalue(stats.total) if stats.count else 0.0

    for t in range(1, explore_rounds + 1):
        slot = (t - 1) % count
        src = graph.edges[roster.edges[slot]][0]
        trace = simulate_cascade(graph, fm, theta_true, [src],
                                 derive_rng(seed, STREAM_CASCADE, t))
        for o in trace.observations:
            obs.append(o.feature, o.outcome, step=o.step, target=o.target)
            stats = stats.updated(o.feature, o.outcome)
        lam = lam_min_now()
        if t % count == 0:
            k_super = t // count
            bound = k_super * roster.lambda_min
            tol = 1e-9 * max(bound, 1.0)
            lemma3_checks.append({"super_round": k_super, "lambda_min": lam,
                                  "bound": bound, "ok": bool(lam >= bound - tol)})
        seeds_t = (src,)
        fexp = f_exp(seeds_t)
        rounds.append(RoundLog(
            round=t, phase=PHASE_EXPLORE, seed_set=seeds_t, spread=trace.spread,
            f_exp=fexp, regret=scaled_regret(f_star, fexp, config.alpha, config.beta),
            rho_star=math.nan, lambda_min=lam, radius_sq=math.nan, n_obs=len(obs)))

    def refit(t: int, warm) -> None:
        nonlocal theta_hat, ellipsoid, stats, mle_failures
        if len(obs) == 0:
            return
        # Estimation error scales like 1/sqrt(n); tighter gradients buy nothing.
        tol = config.mle_tol * math.sqrt(max(len(obs), 1))
        try:
            result = fit_mle(obs, theta_init=warm, tol=tol,
                             max_iter=config.mle_max_iter, norm_bound=config.norm_bound)
        except (InfeasibleInitError, OutOfDomainError):
            # new observations can make the warm start infeasible; restart cold
            result = fit_mle(obs, theta_init=None, tol=tol,
                             max_iter=config.mle_max_iter, norm_bound=config.norm_bound)
        if not (result.converged or result.at_boundary):
            mle_failures += 1
        if theta_hat is None:
            theta_hat = result.theta_hat
        else:
            # keep whichever estimate explains the current data better; the
            # warm-started ascent can only improve on its start, so this
            # retains the previous estimate only when a cold restart did worse
            try:
                prev_ll = log_likelihood(theta_hat, obs)
            except OutOfDomainError:
                prev_ll = -math.inf
            if result.log_lik >= prev_ll:
                theta_hat = result.theta_hat
        delta = config.delta_at(t)
        ellipsoid = build_ellipsoid(theta_hat, stats, kappa, config.r_bound,
                                    delta1=delta, delta2=delta,
                                    rho_floor=config.rho_floor)

    if explore_rounds >= 1 and explore_rounds < config.horizon:
        refit(explore_rounds, None)

    for t in range(explore_rounds + 1, config.horizon + 1):
        pair = pair_oracle(graph, fm, ellipsoid, config.seed_size,
                           m_rand=config.m_rand, n_mc=config.n_mc,
                           rng=derive_rng(seed, STREAM_ORACLE, t),
                           norm_bound=config.norm_bound)
        seeds_t = pair.seed_set
        trace = simulate_cascade(graph, fm, theta_true, seeds_t,
                                 derive_rng(seed, STREAM_CASCADE, t))
        for o in trace.observations:
            obs.append(o.feature, o.outcome, step=o.step, target=o.target)
            stats = stats.updated(o.feature, o.outcome)
        refit(t, theta_hat)
        floor_gap = linalg.min_eigenvalue(stats.success - 0.5 * p_min_true * stats.total)
        vm_floor_flags.append(bool(floor_gap >= -1e-9 * max(np.trace(stats.total), 1.0)))
        fexp = f_exp(seeds_t)
        rounds.append(RoundLog(
            round=t, phase=PHASE_EXPLOIT, seed_set=tuple(seeds_t), spread=trace.spread,
            f_exp=fexp, regret=scaled_regret(f_star, fexp, config.alpha, config.beta),
            rho_star=ellipsoid.rho_star, lambda_min=lam_min_now(),
            radius_sq=ellipsoid.radius_sq, n_obs=len(obs),
            precondition_ok=ellipsoid.precondition_ok))

    if theta_hat is None and len(obs) > 0:
        refit(config.horizon, None)

    cumulative = np.cumsum([r.regret for r in rounds])
    metadata = {
        "config": {k: v for k, v in asdict(config).items()},
        "seed": seed,
        "tau": tau,
        "exploration_rounds": explore_rounds,
        "exploration_edges": roster.edges,
        "sigma_min_o": roster.sigma_min,
        "lambda_min_o": roster.lambda_min,
        "kappa": kappa,
        "r_bound": config.r_bound,
        "rho_floor": config.rho_floor,
        "f_star": f_star,
        "f_star_se": f_star_se,
        "opt_seed_set": list(opt_seeds),
        "p_min_true": p_min_true,
        "p_min_instance_report": report.p_min,
        "lemma3_checks": lemma3_checks,
        "vm_floor_flags": vm_floor_flags,
        "mle_failures": mle_failures,
        "final_rho_star": ellipsoid.rho_star if ellipsoid else math.nan,
    }
    return RunResult(rounds=rounds, cumulative_regret=cumulative,
                     theta_hat=theta_hat if theta_hat is not None else np.zeros(d),
                     metadata=metadata)


ROUND_CSV_COLUMNS = ["round", "phase", "seed_set", "spread", "f_exp", "regret",
                     "rho_star", "lambda_min", "radius_sq"]


def run_to_csv(result: RunResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUND_CSV_COLUMNS)
        for r in result.rounds:
            writer.writerow([
                r.round, r.phase, ";".join(map(str, r.seed_set)), r.spread,
                repr(r.f_exp), repr(r.regret), repr(r.rho_star),
                repr(r.lambda_min), repr(r.radius_sq),
            ])


def rounds_from_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ROUND_CSV_COLUMNS:
            raise ValueError(f"unexpected round CSV header: {header}")
        for row in reader:
            out.append(RoundLog(
                round=int(row[0]), phase=row[1],
                seed_set=tuple(int(x) for x in row[2].split(";") if x != ""),
                spread=int(row[3]), f_exp=float(row[4]), regret=float(row[5]),
                rho_star=float(row[6]), lambda_min=float(row[7]),
                radius_sq=float(row[8])))
    return out


def metadata_to_json(result: RunResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.metadata, fh, indent=2, default=_json_fallback)


def _json_fallback(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"cannot serialize {type(value)}")
