"""Instance generators for experiments and tests.

All generators use the one-hot-per-edge (tabular) feature scheme, with the
parameter chosen so every edge hits its requested probability.  A probability
of 1 is encoded as a score of 40, which rounds to probability 1.0 in double
precision; the exponential link cannot represent certainty exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .graphs import DirectedGraph, ParamVector, build_tabular_features
from .seeding import derive_rng

SATURATION_SCORE = 40.0  # 1 - exp(-40) == 1.0 in float64

FIG1_NODES = ("O", "A", "B", "C")


def _score_for(p: float) -> float:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"edge probability must be in (0, 1], got {p}")
    if p == 1.0:
        return SATURATION_SCORE
    return -math.log1p(-p)


def _tabular_instance(graph: DirectedGraph, edge_probs) -> tuple:
    fm = build_tabular_features(graph)
    theta = np.zeros(graph.edge_count)
    for k, (_, v) in enumerate(graph.edges):
        theta[k] = graph.in_degree(v) * _score_for(edge_probs[k])
    pv = ParamVector(theta=theta, norm_bound=float(np.linalg.norm(theta)))
    return graph, fm, pv


def fig1_instance() -> tuple:
    """Four nodes O, A, B, C; O activates A and B surely, which then jointly
    attempt C with individual probabilities 0.6 and 0.3 (combined 0.72)."""
    graph = DirectedGraph(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
    return _tabular_instance(graph, [1.0, 1.0, 0.6, 0.3])


def chain_instance(n: int, p: float = 1.0) -> tuple:
    """Directed path 0 -> 1 -> ... -> n-1 with uniform edge probability."""
    if n < 2:
        raise ValueError("chain needs at least 2 nodes")
    graph = DirectedGraph(n, [(i, i + 1) for i in range(n - 1)])
    return _tabular_instance(graph, [p] * (n - 1))


def star_instance(parents: int, p: float = 0.5) -> tuple:
    """``parents`` source nodes all pointing at one shared child."""
    if parents < 1:
        raise ValueError("star needs at least one parent")
    child = parents
    graph = DirectedGraph(parents + 1, [(i, child) for i in range(parents)])
    return _tabular_instance(graph, [p] * parents)


def er_instance(n: int, p_edge: float, p_target: float = 0.25,
                seed: int = 0) -> tuple:
    """Directed Erdos-Renyi graph with all edge probabilities at p_target.

    Resamples (deterministically from the seed) until the draw has at least
    one edge.
    """
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if not 0.0 < p_edge <= 1.0:
        raise ValueError("p_edge must be in (0, 1]")
    for attempt in range(1000):
        rng = derive_rng(seed, attempt)
        edges = [(u, v) for u in range(n) for v in range(n)
                 if u != v and rng.random() < p_edge]
        if edges:
            graph = DirectedGraph(n, edges)
            return _tabular_instance(graph, [p_target] * len(edges))
    raise ValueError("could not draw a nonempty graph")


def generate_graph(kind: str, params: dict | None = None, seed: int = 0) -> tuple:
    """Dispatch on generator kind: fig1 | chain | er | star."""
    params = dict(params or {})
    if kind == "fig1":
        return fig1_instance()
    if kind == "chain":
        return chain_instance(int(params.get("n", 4)), float(params.get("p", 1.0)))
    if kind == "star":
        return star_instance(int(params.get("parents", 3)), float(params.get("p", 0.5)))
    if kind == "er":
        return er_instance(int(params.get("n", 8)), float(params.get("p_edge", 0.3)),
                           float(params.get("p_target", 0.25)),
                           int(params.get("seed", seed)))
    raise ValueError(f"unknown graph kind: {kind!r}")
