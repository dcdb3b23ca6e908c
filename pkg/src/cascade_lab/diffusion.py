"""Independent-cascade simulation with node-level (censored) feedback.

A cascade is simulated in discrete steps.  When several parents of an
inactive node activated in the previous step, their attempts collapse into a
single combined observation: one feature (the sum of the member edge
features) and one binary outcome.  Individual edge outcomes are never part of
a trace; a debug mode can sample per-edge coin flips and OR them, which is
distribution-identical, to cross-check the combined sampling.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import DirectedGraph, FeatureMap, ParamVector

EXACT_EDGE_LIMIT = 24
_MASK_CHUNK = 1 << 20


@dataclass
class HyperEdgeObservation:
    """One censored observation: a parent set attempting a single target."""

    target: int
    parents: tuple
    feature: np.ndarray
    outcome: int
    step: int


@dataclass
class CascadeTrace:
    """Full record of one cascade: activation times and censored observations."""

    activated_at: list  # per-node step index, or None
    observations: list = field(default_factory=list)

    @property
    def spread(self) -> int:
        return sum(1 for s in self.activated_at if s is not None)


def _as_theta(theta) -> np.ndarray:
    return theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)


def _check_seed_set(graph: DirectedGraph, seed_set) -> list:
    seeds = sorted(set(int(s) for s in seed_set))
    for s in seeds:
        if not (0 <= s < graph.node_count):
            raise ValueError(f"seed node {s} out of range")
    return seeds


def _step_targets(graph: DirectedGraph, newly: list, active: list) -> dict:
    """Inactive nodes with at least one parent that activated last step."""
    targets: dict = {}
    for u in newly:
        for v in graph.out_neighbors[u]:
            if active[v] is None:
                targets.setdefault(v, []).append(u)
    return targets


def simulate_cascade(graph: DirectedGraph, fm: FeatureMap, theta_true, seed_set,
                     rng: np.random.Generator, debug_edge_flips: bool = False) -> CascadeTrace:
    """Run one cascade from ``seed_set`` and return its trace.

    One Bernoulli draw is made per (target, step) pair with the combined
    parent-set probability; with ``debug_edge_flips`` each member edge is
    flipped independently and the outcome is their OR.
    """
    seeds = _check_seed_set(graph, seed_set)
    if not seeds:
        raise ValueError("seed set must be nonempty")
    theta = _as_theta(theta_true)
    scores = fm.features @ theta
    active: list = [None] * graph.node_count
    for s in seeds:
        active[s] = 0
    newly = seeds
    observations = []
    step = 0
    while newly:
        step += 1
        targets = _step_targets(graph, newly, active)
        next_newly = []
        for v in sorted(targets):
            parents = sorted(targets[v])
            rows = [graph.edge_index[(u, v)] for u in parents]
            if debug_edge_flips:
                outcome = 0
                for k in rows:
                    p_edge = min(max(-math.expm1(-scores[k]), 0.0), 1.0)
                    if rng.random() < p_edge:
                        outcome = 1
            else:
                p_comb = min(max(-math.expm1(-float(sum(scores[k] for k in rows))), 0.0), 1.0)
                outcome = 1 if rng.random() < p_comb else 0
            observations.append(HyperEdgeObservation(
                target=v,
                parents=tuple(parents),
                feature=fm.features[rows].sum(axis=0),
                outcome=outcome,
                step=step,
            ))
            if outcome:
                active[v] = step
                next_newly.append(v)
        newly = next_newly
    return CascadeTrace(activated_at=active, observations=observations)


def _spread_once(graph: DirectedGraph, scores: np.ndarray, seeds: list,
                 rng: np.random.Generator) -> int:
    """Spread of one cascade without building trace objects."""
    active: list = [None] * graph.node_count
    count = len(seeds)
    for s in seeds:
        active[s] = 0
    newly = seeds
    step = 0
    while newly:
        step += 1
        targets = _step_targets(graph, newly, active)
        next_newly = []
        for v in sorted(targets):
            z = 0.0
            for u in sorted(targets[v]):
                z += scores[graph.edge_index[(u, v)]]
            p_comb = min(max(-math.expm1(-z), 0.0), 1.0)
            if rng.random() < p_comb:
                active[v] = step
                next_newly.append(v)
                count += 1
        newly = next_newly
    return count


def mc_influence(graph: DirectedGraph, fm: FeatureMap, theta, seed_set,
                 n_samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of the expected spread."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    seeds = _check_seed_set(graph, seed_set)
    if not seeds:
        return 0.0, 0.0
    scores = fm.features @ _as_theta(theta)
    total = 0.0
    total_sq = 0.0
    for _ in range(n_samples):
        s = _spread_once(graph, scores, seeds, rng)
        total += s
        total_sq += s * s
    mean = total / n_samples
    if n_samples == 1:
        return mean, 0.0
    var = max(total_sq / n_samples - mean * mean, 0.0) * n_samples / (n_samples - 1)
    return mean, math.sqrt(var / n_samples)


def exact_influence(graph: DirectedGraph, fm: FeatureMap, theta, seed_set) -> float:
    """Expected spread by enumerating every edge realization (up to 24 edges).

    Each of the 2^E on/off patterns is weighted by its probability; the
    spread of a pattern is the number of nodes reachable from the seeds
    through the surviving edges.  This is the brute-force oracle that all
    spread estimates are checked against.
    """
    n_edges = graph.edge_count
    if n_edges > EXACT_EDGE_LIMIT:
        raise ValueError(f"exact enumeration limited to {EXACT_EDGE_LIMIT} edges, "
                         f"graph has {n_edges}")
    seeds = _check_seed_set(graph, seed_set)
    if not seeds:
        return 0.0
    scores = fm.features @ _as_theta(theta)
    probs = np.minimum(np.maximum(-np.expm1(-scores), 0.0), 1.0)

    involved = sorted({u for e in graph.edges for u in e})
    bit_of = {u: i for i, u in enumerate(involved)}
    outside_seeds = sum(1 for s in seeds if s not in bit_of)
    if not involved:
        return float(len(seeds))
    seed_bits = np.uint64(0)
    for s in seeds:
        if s in bit_of:
            seed_bits |= np.uint64(1) << np.uint64(bit_of[s])
    src_bits = [bit_of[u] for u, _ in graph.edges]
    dst_bits = [bit_of[v] for _, v in graph.edges]

    expected = 0.0
    total_masks = 1 << n_edges
    one = np.uint64(1)
    for start in range(0, total_masks, _MASK_CHUNK):
        masks = np.arange(start, min(start + _MASK_CHUNK, total_masks), dtype=np.uint64)
        weight = np.ones(masks.shape[0])
        for e in range(n_edges):
            on = ((masks >> np.uint64(e)) & one).astype(bool)
            weight *= np.where(on, probs[e], 1.0 - probs[e])
        active = np.full(masks.shape[0], seed_bits, dtype=np.uint64)
        while True:
            before = active.copy()
            for e in range(n_edges):
                on = ((masks >> np.uint64(e)) & one).astype(bool)
                src_on = ((active >> np.uint64(src_bits[e])) & one).astype(bool)
                fires = on & src_on
                active |= np.where(fires, one << np.uint64(dst_bits[e]), np.uint64(0))
            if np.array_equal(before, active):
                break
        expected += float(np.dot(weight, np.bitwise_count(active).astype(float)))
    return expected + outside_seeds


def _reachable(graph: DirectedGraph, sources, forward: bool = True) -> set:
    seen = set(sources)
    frontier = list(sources)
    while frontier:
        nxt = []
        for u in frontier:
            neighbors = graph.out_neighbors[u] if forward else graph.in_neighbors[u]
            for v in neighbors:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return seen


def path_subgraph(graph: DirectedGraph, seed_set, v: int) -> tuple[set, set]:
    """Nodes and edge indices lying on some directed path from the seeds to v."""
    seeds = set(_check_seed_set(graph, seed_set))
    fwd = _reachable(graph, seeds, forward=True)
    bwd = _reachable(graph, {v}, forward=False)
    nodes = fwd & bwd
    edges = {k for k, (a, b) in enumerate(graph.edges) if a in nodes and b in nodes}
    return nodes, edges


def relevant_edge_sets(graph: DirectedGraph, seed_set) -> dict:
    """Per-node collections of same-target edge sets inside the seed-to-node
    path subgraph.

    For each non-seed node v, an edge set qualifies when all of its edges lie
    in the path subgraph toward v and point at one common node of it.  These
    are exactly the parent groups whose combined outcome can be observed on
    the way to v.
    """
    seeds = set(_check_seed_set(graph, seed_set))
    out: dict = {}
    for v in range(graph.node_count):
        if v in seeds:
            continue
        nodes, edge_idx = path_subgraph(graph, seeds, v)
        sets: list = []
        for u in sorted(nodes):
            in_here = sorted(k for k in edge_idx if graph.edges[k][1] == u)
            if len(in_here) > 20:
                raise ValueError(f"in-degree {len(in_here)} at node {u} too large "
                                 "to enumerate relevant edge sets")
            for r in range(1, len(in_here) + 1):
                sets.extend(frozenset(c) for c in itertools.combinations(in_here, r))
        out[v] = sets
    return out


def relevance_weight(graph: DirectedGraph, fm: FeatureMap, theta, seed_set,
                     n_samples: int, rng: np.random.Generator) -> dict:
    """Diagnostic topology weight: sum over relevant edge sets of
    (observed frequency) x (number of nodes the set is relevant to)^2.

    Observation frequencies are estimated over ``n_samples`` cascades.
    """
    per_node = relevant_edge_sets(graph, seed_set)
    relevance_count: dict = {}
    for sets in per_node.values():
        for b in sets:
            relevance_count[b] = relevance_count.get(b, 0) + 1

    observed: dict = {b: 0 for b in relevance_count}
    for _ in range(n_samples):
        trace = simulate_cascade(graph, fm, theta, seed_set, rng)
        for obs in trace.observations:
            b = frozenset(graph.edge_index[(u, obs.target)] for u in obs.parents)
            if b in observed:
                observed[b] += 1
    weight = sum((observed[b] / n_samples) * relevance_count[b] ** 2 for b in observed)
    return {
        "weight": weight,
        "relevant_sets": len(relevance_count),
        "observed_freq": {tuple(sorted(b)): observed[b] / n_samples for b in observed},
    }


def dump_trace_jsonl(trace: CascadeTrace, path) -> None:
    """Write one observation per line as JSON (debug format)."""
    with open(path, "w") as fh:
        for obs in trace.observations:
            fh.write(json.dumps({
                "step": obs.step,
                "target": obs.target,
                "parents": list(obs.parents),
                "y": obs.outcome,
            }) + "\n")
