"""Acceptance gate: one test per criterion, each printing a PASS line with
the measured quantity next to its threshold.  Run with ``pytest -s`` to see
the lines as they complete.
"""

import math
import os

import numpy as np

from cascade_lab.bandit import AlgoConfig, run_tpnodeim
from cascade_lab.diffusion import exact_influence, mc_influence
from cascade_lab.estimator import (ObservationSet, fit_mle, grad_ll, hessian_ll,
                                   log_likelihood, rho_star, suff_stats)
from cascade_lab.generators import (chain_instance, er_instance, fig1_instance,
                                    star_instance)
from cascade_lab.graphs import aggregated_prob
from cascade_lab.oracle import exhaustive_opt, greedy_im
from cascade_lab.seeding import derive_rng
from cascade_lab.studies import ExperimentSpec, run_study

JOBS = min(os.cpu_count() or 1, 4)


def _report(k, detail):
    print(f"\nACCEPTANCE {k} PASS: {detail}")


def test_criterion_01_fig1_reproduction():
    g, fm, theta = fig1_instance()
    agg = aggregated_prob([1, 2], 3, theta, fm, g)
    product = 1.0 - (1.0 - 0.6) * (1.0 - 0.3)
    assert abs(agg - 0.72) <= 1e-12
    assert abs(agg - product) <= 1e-12
    n = 100_000
    mean, _ = mc_influence(g, fm, theta, [0], n, derive_rng(101, 0))
    freq = mean - 3.0  # O, A, B are always active; C adds the fourth count
    assert abs(freq - 0.72) <= 0.005
    _report(1, f"aggregated={agg!r}, empirical freq={freq:.4f} in 0.72 +/- 0.005")


def test_criterion_02_brute_force_equivalence():
    params = [(6, 0.45, 0.5), (7, 0.35, 0.4), (8, 0.3, 0.25), (7, 0.4, 0.3),
              (8, 0.25, 0.35), (6, 0.5, 0.45), (7, 0.3, 0.5), (8, 0.28, 0.3),
              (6, 0.4, 0.35), (7, 0.38, 0.45)]
    worst = 0.0
    for i, (n_nodes, p_edge, p_target) in enumerate(params):
        g, fm, theta = er_instance(n_nodes, p_edge, p_target, seed=100 + i)
        assert g.edge_count <= 20
        seeds = [0, n_nodes - 1]
        exact = exact_influence(g, fm, theta, seeds)
        mean, se = mc_influence(g, fm, theta, seeds, 100_000, derive_rng(102, i))
        gap = abs(mean - exact)
        assert gap <= 3.0 * se, f"instance {i}: |{mean} - {exact}| > 3*{se}"
        worst = max(worst, gap / se if se > 0 else 0.0)
    _report(2, f"10 instances, worst |mc-exact|/se = {worst:.2f} <= 3")


def test_criterion_03_gradient_hessian():
    rng = np.random.default_rng(103)
    h = 1e-6
    worst_g, worst_h, worst_eig = 0.0, 0.0, -np.inf
    for _ in range(100):
        d = int(rng.integers(2, 6))
        n = int(rng.integers(10, 60))
        feats = rng.uniform(0.05, 1.0, size=(n, d))
        feats /= np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1.0)
        theta = rng.uniform(0.1, 1.2, size=d)
        y = (rng.random(n) < -np.expm1(-(feats @ theta))).astype(int)
        obs = ObservationSet.from_arrays(feats, y)
        grad = grad_ll(theta, obs)
        hess = hessian_ll(theta, obs)
        fd_g = np.zeros(d)
        fd_h = np.zeros((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            fd_g[j] = (log_likelihood(theta + e, obs)
                       - log_likelihood(theta - e, obs)) / (2 * h)
            fd_h[:, j] = (grad_ll(theta + e, obs) - grad_ll(theta - e, obs)) / (2 * h)
        rel_g = np.linalg.norm(fd_g - grad) / max(np.linalg.norm(grad), 1e-9)
        rel_h = np.linalg.norm(fd_h - hess) / max(np.linalg.norm(hess), 1e-9)
        eig_max = float(np.max(np.linalg.eigvalsh(hess)))
        assert rel_g <= 1e-5
        assert rel_h <= 1e-5
        assert eig_max <= 1e-10
        worst_g, worst_h = max(worst_g, rel_g), max(worst_h, rel_h)
        worst_eig = max(worst_eig, eig_max)
    _report(3, f"100 points: worst grad rel {worst_g:.2e}, hess rel {worst_h:.2e}, "
               f"max eig {worst_eig:.2e} <= 1e-10")


def test_criterion_04_rho_star_grid_oracle():
    rng = np.random.default_rng(104)
    worst = 0.0
    checked = 0
    while checked < 50:
        d = int(rng.integers(2, 5))
        n = int(rng.integers(3 * d, 80))
        feats = rng.uniform(0.05, 1.0, size=(n, d))
        feats /= np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1.0)
        y = (rng.random(n) < rng.uniform(0.2, 0.9)).astype(int)
        stats = suff_stats(ObservationSet.from_arrays(feats, y))
        result = rho_star(stats)
        if result.singular:
            continue
        checked += 1
        scale = max(float(np.trace(stats.total)), 1.0)
        best = 0.0
        for rho in np.arange(0.0, 1.0 + 5e-5, 1e-4):
            if np.min(np.linalg.eigvalsh(stats.success - rho * stats.total)) >= -1e-12 * scale:
                best = rho
            else:
                break
        assert abs(result.rho - best) <= 2e-4
        gap = np.min(np.linalg.eigvalsh(stats.success - result.rho * stats.total))
        assert gap >= -1e-9 * scale
        worst = max(worst, abs(result.rho - best))
    _report(4, f"50 pairs, worst |rho - grid| = {worst:.2e} <= 2e-4")


def test_criterion_05_mle_consistency():
    d, n = 5, 100_000
    hits = 0
    errs = []
    for rep in range(20):
        rng = derive_rng(105, rep)
        theta_star = rng.uniform(0.3, 1.0, size=d)
        feats = np.repeat(np.eye(d), n // d, axis=0)
        y = (rng.random(n) < -np.expm1(-(feats @ theta_star))).astype(int)
        res = fit_mle(ObservationSet.from_arrays(feats, y), tol=1e-6)
        err = float(np.linalg.norm(res.theta_hat - theta_star))
        errs.append(err)
        hits += err <= 0.05
    assert hits >= 18
    _report(5, f"{hits}/20 replications with error <= 0.05 (median {np.median(errs):.4f})")


def test_criterion_06_ellipsoid_coverage(tmp_path):
    spec = ExperimentSpec(study="coverage", replications=200, base_seed=106,
                          params={"d": 2, "p": 0.5, "delta": 0.05, "threshold": 0.90})
    summary = run_study(spec, out_dir=tmp_path, jobs=JOBS, render=False)
    freq = summary.stats["contains_freq"]
    assert freq >= 0.90
    assert summary.passed
    _report(6, f"coverage {freq:.3f} >= 0.90 over 200 replications "
               f"(precondition rate {summary.stats['precondition_rate']:.2f})")


def test_criterion_07_rho_floor_in_exploitation():
    g, fm, theta = chain_instance(4, 0.5)
    horizon = 400
    tau = math.ceil(math.sqrt(horizon) * math.log(horizon))
    config = AlgoConfig(horizon=horizon, seed_size=1,
                        norm_bound=float(np.linalg.norm(theta.theta)),
                        p_min_assumed=0.5, n_mc=120, tau_override=tau)
    flags = []
    for rep in range(20):
        result = run_tpnodeim(g, fm, theta, config, seed=1070 + rep)
        flags.extend(result.metadata["vm_floor_flags"])
    rate = float(np.mean(flags))
    assert len(flags) == 20 * (horizon - 3 * tau)
    assert rate >= 0.95
    _report(7, f"success-moment floor held in {rate:.3f} of {len(flags)} "
               f"exploitation rounds (tau={tau}) >= 0.95")


def test_criterion_08_exploration_eigenvalue_growth():
    runs = [
        (chain_instance(5, 0.5), 50, 1074),
        (fig1_instance(), 30, 1075),
        (er_instance(7, 0.35, 0.4, 4), 10, 1076),
    ]
    total = 0
    for (g, fm, theta), tau, seed in runs:
        d = fm.dimension
        config = AlgoConfig(horizon=d * tau, seed_size=1,
                            norm_bound=float(np.linalg.norm(theta.theta)),
                            p_min_assumed=0.2, n_mc=50, tau_override=tau)
        result = run_tpnodeim(g, fm, theta, config, seed=seed)
        checks = result.metadata["lemma3_checks"]
        assert len(checks) == tau
        assert all(c["ok"] for c in checks), "eigenvalue growth bound violated"
        total += len(checks)
    _report(8, f"lambda_min(total moment) >= k * lambda_min_o at all {total} "
               "super-rounds, zero violations")


def test_criterion_09_greedy_guarantee():
    fixtures = [
        ("fig1", fig1_instance(), 1),
        ("chain6", chain_instance(6, 0.5), 2),
        ("star5", star_instance(5, 0.4), 3),
        ("er7", er_instance(7, 0.35, 0.4, 4), 3),
        ("er8", er_instance(8, 0.3, 0.25, 3), 2),
    ]
    ratio_floor = 1.0 - 1.0 / math.e
    worst = math.inf
    for name, (g, fm, theta), k in fixtures:
        assert g.node_count <= 8 and k <= 3
        _, best = exhaustive_opt(g, fm, theta, k)
        val = exact_influence(g, fm, theta, greedy_im(g, fm, theta, k, exact=True))
        assert val >= ratio_floor * best - 1e-9, name
        worst = min(worst, val / best)
    _report(9, f"5 fixtures, worst greedy/optimal ratio {worst:.3f} >= {ratio_floor:.3f}")


def test_criterion_10_end_to_end_regret(tmp_path):
    configs = [
        ("fig1", {"kind": "fig1"},
         {"seed_size": 1, "n_mc": 150, "mle_max_iter": 200},
         {"tau_policy": "sqrt"}),
        ("er", {"kind": "er", "params": {"n": 8, "p_edge": 0.3,
                                         "p_target": 0.25, "seed": 3}},
         {"seed_size": 2, "n_mc": 120, "m_rand": 8, "mle_max_iter": 200},
         {"tau_policy": "sqrt_over_d"}),
    ]
    for name, instance, algo, extra in configs:
        params = {"T_grid": [2000, 4000, 8000, 16000],
                  "slope_threshold": 0.75, "decay_threshold": 0.25}
        params.update(extra)
        spec = ExperimentSpec(study="regret_scaling", instance=instance,
                              base_seed=110, algo=algo, params=params)
        summary = run_study(spec, out_dir=tmp_path / name, jobs=JOBS, render=True)
        slope = summary.stats["slope"]
        ratios = summary.stats["decay_ratios"]
        assert slope <= 0.75, f"{name}: slope {slope}"
        assert all(r <= 0.25 for r in ratios), f"{name}: decay ratios {ratios}"
        _report(10, f"{name}: log-log slope {slope:.3f} <= 0.75, "
                    f"decay ratios {[round(r, 3) for r in ratios]} all <= 0.25")


def test_criterion_11_censoring_demonstration(tmp_path):
    spec = ExperimentSpec(study="censoring", base_seed=111,
                          params={"n_cascades": 10_000, "tol": 0.02})
    summary = run_study(spec, out_dir=tmp_path, jobs=1, render=True)
    stats = summary.stats
    assert abs(stats["combined_estimate"] - 0.72) <= 0.02
    assert stats["censored_direction_found"]
    assert stats["profile_ll_range"] <= 1e-6
    assert summary.passed
    _report(11, f"combined estimate {stats['combined_estimate']:.4f} in 0.72 +/- 0.02; "
                f"profile log-likelihood range {stats['profile_ll_range']:.2e} <= 1e-6")
