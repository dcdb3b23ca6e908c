"""Seed selection: greedy influence maximization and the pair oracle that
searches a confidence region for an optimistic (seed set, parameter) pair.

Spread estimates use the live-edge view of a cascade: sample each edge on or
off up front, then count reachability.  That is distribution-identical to the
step-by-step process and lets one batch of coin flips be shared across every
candidate compared in a greedy step (common random numbers).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .diffusion import exact_influence
from .estimator import ConfidenceEllipsoid
from .graphs import DirectedGraph, FeatureMap, ParamVector
from .seeding import derive_rng

BITBOARD_NODE_LIMIT = 64
EXHAUSTIVE_SET_LIMIT = 100_000
EXHAUSTIVE_EDGE_LIMIT = 24


def _as_theta(theta) -> np.ndarray:
    return theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)


class SpreadSampler:
    """Vectorized live-edge spread estimates over a batch of realizations."""

    def __init__(self, graph: DirectedGraph, fm: FeatureMap):
        if graph.node_count > BITBOARD_NODE_LIMIT:
            raise ValueError(f"sampler supports up to {BITBOARD_NODE_LIMIT} nodes")
        self.graph = graph
        self.fm = fm
        self.dsts = np.array([v for _, v in graph.edges], dtype=np.uint64)

    def probabilities(self, theta) -> np.ndarray:
        scores = self.fm.features @ _as_theta(theta)
        return np.minimum(np.maximum(-np.expm1(-scores), 0.0), 1.0)

    def draw_uniforms(self, n_mc: int, rng: np.random.Generator) -> np.ndarray:
        return rng.random((n_mc, self.graph.edge_count))

    def adjacency(self, uniforms: np.ndarray, probs: np.ndarray) -> np.ndarray:
        """Per-realization out-neighbor bitmasks under the live edges."""
        live = uniforms < probs[None, :]
        adj = np.zeros((uniforms.shape[0], self.graph.node_count), dtype=np.uint64)
        one = np.uint64(1)
        for e, (u, _) in enumerate(self.graph.edges):
            adj[live[:, e], u] |= one << self.dsts[e]
        return adj

    def spread_samples(self, adj: np.ndarray, seed_sets) -> np.ndarray:
        """Spread of each seed set in each realization, shape (sets, n_mc)."""
        n_mc = adj.shape[0]
        one = np.uint64(1)
        active = np.zeros((len(seed_sets), n_mc), dtype=np.uint64)
        for i, seeds in enumerate(seed_sets):
            bits = np.uint64(0)
            for s in seeds:
                bits |= one << np.uint64(s)
            active[i, :] = bits
        while True:
            before = active.copy()
            for u in range(self.graph.node_count):
                fired = (active >> np.uint64(u)) & one
                active |= fired * adj[:, u]
            if np.array_equal(before, active):
                break
        return np.bitwise_count(active).astype(float)

    def adjacency_batch(self, uniforms: np.ndarray, probs_batch: np.ndarray) -> np.ndarray:
        """Live adjacencies for many parameter candidates against one batch of
        uniforms: result has shape (n_theta, n_mc, nodes)."""
        live = uniforms[None, :, :] < probs_batch[:, None, :]
        n_theta, n_mc = probs_batch.shape[0], uniforms.shape[0]
        adj = np.zeros((n_theta, n_mc, self.graph.node_count), dtype=np.uint64)
        one = np.uint64(1)
        for e, (u, _) in enumerate(self.graph.edges):
            adj[:, :, u] |= live[:, :, e] * (one << self.dsts[e])
        return adj

    def spread_samples_batch(self, adj: np.ndarray, seed_bits: np.ndarray) -> np.ndarray:
        """Spreads for per-candidate seed sets: ``adj`` is (n_theta, n_mc,
        nodes), ``seed_bits`` is (n_theta, n_sets) of node bitmasks; returns
        (n_theta, n_sets, n_mc)."""
        one = np.uint64(1)
        n_mc = adj.shape[1]
        active = np.broadcast_to(seed_bits[:, :, None],
                                 seed_bits.shape + (n_mc,)).copy()
        while True:
            before = active.copy()
            for u in range(self.graph.node_count):
                fired = (active >> np.uint64(u)) & one
                active |= fired * adj[:, None, :, u]
            if np.array_equal(before, active):
                break
        return np.bitwise_count(active).astype(float)


def greedy_im(graph: DirectedGraph, fm: FeatureMap, theta, k: int,
              n_mc: int = 1000, rng: np.random.Generator | None = None,
              exact: bool = False, lazy: bool = False):
    """Greedy seed selection under a fixed parameter, ties to smaller index.

    Monte Carlo evaluation shares one batch of live-edge draws across all
    candidates within a greedy step; ``exact`` switches to the enumeration
    oracle (small graphs only).  ``lazy`` enables stale marginal-gain caching.
    """
    seeds, _, _ = greedy_im_with_value(graph, fm, theta, k, n_mc=n_mc, rng=rng,
                                       exact=exact, lazy=lazy)
    return seeds


def greedy_im_with_value(graph: DirectedGraph, fm: FeatureMap, theta, k: int,
                         n_mc: int = 1000, rng: np.random.Generator | None = None,
                         exact: bool = False, lazy: bool = False):
    """Greedy selection returning (seed tuple, estimated value, standard error)."""
    if not 1 <= k <= graph.node_count:
        raise ValueError(f"k must be in [1, {graph.node_count}]")
    if not exact and rng is None:
        raise ValueError("Monte Carlo greedy needs an rng")

    sampler = None if exact else SpreadSampler(graph, fm)
    probs = None if exact else sampler.probabilities(theta)

    chosen: list = []
    value, se = 0.0, 0.0
    stale_gain = {v: math.inf for v in range(graph.node_count)}
    for _ in range(k):
        if exact:
            def evaluate(cands):
                vals = np.array([exact_influence(graph, fm, theta, chosen + [v])
                                 for v in cands])
                return vals, np.zeros(len(cands))
        else:
            adj = sampler.adjacency(sampler.draw_uniforms(n_mc, rng), probs)

            def evaluate(cands):
                samples = sampler.spread_samples(adj, [chosen + [v] for v in cands])
                if n_mc > 1:
                    ses = samples.std(axis=1, ddof=1) / math.sqrt(n_mc)
                else:
                    ses = np.zeros(len(cands))
                return samples.mean(axis=1), ses

        remaining = [v for v in range(graph.node_count) if v not in chosen]
        if lazy and chosen:
            # base value of the current set under this step's draws
            if exact:
                base = exact_influence(graph, fm, theta, chosen)
            else:
                base = float(sampler.spread_samples(adj, [chosen]).mean(axis=1)[0])
            best_v, best_val, best_se = None, -math.inf, 0.0
            order = sorted(remaining, key=lambda v: (-stale_gain[v], v))
            for v in order:
                if best_v is not None:
                    gain_best = best_val - base
                    # stale gains only shrink, so nothing below the realized
                    # best can win; an equal stale gain can at most tie, which
                    # a larger index loses anyway
                    if stale_gain[v] < gain_best:
                        break
                    if stale_gain[v] == gain_best and v > best_v:
                        break
                vals, ses = evaluate([v])
                stale_gain[v] = float(vals[0]) - base
                better = float(vals[0]) > best_val or (float(vals[0]) == best_val
                                                       and best_v is not None and v < best_v)
                if better:
                    best_v, best_val, best_se = v, float(vals[0]), float(ses[0])
        else:
            vals, ses = evaluate(remaining)
            best_i = 0
            for i in range(1, len(remaining)):
                if vals[i] > vals[best_i]:
                    best_i = i
            best_v, best_val, best_se = remaining[best_i], float(vals[best_i]), float(ses[best_i])
            if lazy:
                for i, v in enumerate(remaining):
                    stale_gain[v] = float(vals[i]) - value
        chosen.append(best_v)
        chosen.sort()
        value, se = best_val, best_se
    return tuple(chosen), value, se


@dataclass
class OraclePair:
    """Optimistic seed set and the in-region parameter that justifies it."""

    seed_set: tuple
    theta_tilde: np.ndarray
    estimated_value: float
    estimated_se: float = 0.0
    degenerate: bool = False
    candidates: list = field(default_factory=list)


def _ball_projected(center: np.ndarray, offset: np.ndarray, norm_bound: float) -> np.ndarray:
    """Shrink an offset from the center until the point fits the norm ball.

    Shrinking toward the center preserves ellipsoid membership, so the result
    stays inside both regions.
    """
    point = center + offset
    if math.isinf(norm_bound) or float(np.linalg.norm(point)) <= norm_bound:
        return point
    a = float(np.dot(offset, offset))
    b = float(np.dot(center, offset))
    c = float(np.dot(center, center)) - norm_bound ** 2
    if a <= 0.0:
        return center.copy()
    disc = max(b * b - a * c, 0.0)
    gamma = (-b + math.sqrt(disc)) / a
    gamma = min(max(gamma, 0.0), 1.0)
    return center + gamma * offset


def pair_oracle(graph: DirectedGraph, fm: FeatureMap, ellipsoid: ConfidenceEllipsoid,
                k: int, m_rand: int | None = None, n_mc: int = 1000,
                rng: np.random.Generator | None = None,
                norm_bound: float = math.inf) -> OraclePair:
    """Search a finite candidate set of parameters inside the ellipsoid and
    return the (seed set, parameter) pair with the best estimated spread.

    Candidates: the center, the two extreme points along every eigendirection
    of the shape matrix, and ``m_rand`` samples of the ellipsoid boundary via
    whitening (default 2d).  All candidates are pulled back into the parameter
    norm ball along the ray from the center, which keeps them inside the
    ellipsoid.  Greedy runs under each candidate share live-edge draws, and
    the final comparison re-estimates every pair on one fresh common batch.
    A singular shape matrix degrades to the center-only candidate with a flag.
    """
    if rng is None:
        raise ValueError("pair_oracle needs an rng")
    if k < 1:
        raise ValueError("k must be at least 1")
    d = ellipsoid.center.shape[0]
    if m_rand is None:
        m_rand = 2 * d
    center = np.array(ellipsoid.center, dtype=float)
    inward = 1.0 - 1e-9  # stay strictly inside despite rounding

    degenerate = False
    thetas = [center]
    radius = math.inf if math.isinf(ellipsoid.radius_sq) else math.sqrt(ellipsoid.radius_sq)
    try:
        lower = linalg.cholesky_lower(ellipsoid.shape)
    except linalg.FactorizationError:
        lower = None
    if lower is None or radius == 0.0 or (math.isinf(radius) and math.isinf(norm_bound)):
        degenerate = True
    else:
        vals, vecs = linalg.sym_eigh(ellipsoid.shape)
        big = 4.0 * (norm_bound + 1.0)
        for j in range(d):
            lam = float(vals[j])
            if lam <= 1e-14 * max(float(vals[-1]), 1.0):
                continue
            scale = big if math.isinf(radius) else inward * radius / math.sqrt(lam)
            for sign in (1.0, -1.0):
                thetas.append(_ball_projected(center, sign * scale * vecs[:, j], norm_bound))
        for _ in range(m_rand):
            z = rng.standard_normal(d)
            norm = float(np.linalg.norm(z))
            if norm == 0.0:
                continue
            direction = linalg.solve_upper(lower.T, z / norm)
            if math.isinf(radius):
                dir_norm = max(float(np.linalg.norm(direction)), 1e-300)
                offset = (big / dir_norm) * direction
            else:
                offset = inward * radius * direction
            thetas.append(_ball_projected(center, offset, norm_bound))

    greedy_seed = int(rng.integers(2 ** 63))
    sampler = SpreadSampler(graph, fm)
    n_nodes = graph.node_count
    theta_mat = np.array(thetas)
    probs_batch = np.minimum(np.maximum(-np.expm1(-(theta_mat @ fm.features.T)), 0.0), 1.0)
    n_theta = theta_mat.shape[0]
    k_eff = min(k, n_nodes)

    # Joint greedy over all candidate parameters, with every candidate seed
    # extension in one greedy step evaluated on the same live-edge draws.
    step_rng = derive_rng(greedy_seed, 0)
    chosen = [[] for _ in range(n_theta)]
    one = np.uint64(1)
    for _ in range(k_eff):
        adj = sampler.adjacency_batch(sampler.draw_uniforms(n_mc, step_rng), probs_batch)
        remaining = [[v for v in range(n_nodes) if v not in chosen[i]]
                     for i in range(n_theta)]
        n_rem = len(remaining[0])
        seed_bits = np.zeros((n_theta, n_rem), dtype=np.uint64)
        for i in range(n_theta):
            base = np.uint64(0)
            for s in chosen[i]:
                base |= one << np.uint64(s)
            for j, v in enumerate(remaining[i]):
                seed_bits[i, j] = base | (one << np.uint64(v))
        means = sampler.spread_samples_batch(adj, seed_bits).mean(axis=2)
        for i in range(n_theta):
            best_j = int(np.argmax(means[i]))  # first max: smallest node index
            chosen[i].append(remaining[i][best_j])
            chosen[i].sort()

    # Fresh common batch for the final cross-candidate comparison.
    adj_eval = sampler.adjacency_batch(
        sampler.draw_uniforms(n_mc, derive_rng(greedy_seed, 1)), probs_batch)
    final_bits = np.zeros((n_theta, 1), dtype=np.uint64)
    for i in range(n_theta):
        bits = np.uint64(0)
        for s in chosen[i]:
            bits |= one << np.uint64(s)
        final_bits[i, 0] = bits
    samples = sampler.spread_samples_batch(adj_eval, final_bits)[:, 0, :]
    values = samples.mean(axis=1)
    ses = (samples.std(axis=1, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else np.zeros(n_theta)

    rows = []
    best = None
    for idx in range(n_theta):
        seeds = tuple(chosen[idx])
        value, se = float(values[idx]), float(ses[idx])
        rows.append({"theta_index": idx, "seed_set": seeds, "value": value, "se": se})
        inside = idx == 0 or ellipsoid.contains(theta_mat[idx])
        if inside and (best is None or value > best[0]):
            best = (value, se, seeds, theta_mat[idx])

    value, se, seeds, theta_t = best
    return OraclePair(seed_set=seeds, theta_tilde=np.asarray(theta_t, dtype=float),
                      estimated_value=value, estimated_se=se,
                      degenerate=degenerate, candidates=rows)


def write_candidate_table(pair: OraclePair, path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta_index", "seed_set", "value", "se"])
        for row in pair.candidates:
            writer.writerow([row["theta_index"], ";".join(map(str, row["seed_set"])),
                             repr(row["value"]), repr(row["se"])])


def exhaustive_opt(graph: DirectedGraph, fm: FeatureMap, theta, k: int):
    """Exact optimum over all seed sets of size at most k (test oracle)."""
    if math.comb(graph.node_count, k) > EXHAUSTIVE_SET_LIMIT:
        raise ValueError("too many seed sets to enumerate")
    if graph.edge_count > EXHAUSTIVE_EDGE_LIMIT:
        raise ValueError(f"exhaustive search limited to {EXHAUSTIVE_EDGE_LIMIT} edges")
    best_set: tuple = ()
    best_val = 0.0
    for size in range(1, k + 1):
        for combo in itertools.combinations(range(graph.node_count), size):
            val = exact_influence(graph, fm, theta, combo)
            if val > best_val:
                best_set, best_val = combo, val
    return best_set, best_val
