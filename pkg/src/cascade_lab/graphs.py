"""Directed graphs, edge features, and the probability link.

An edge's activation probability is tied to a parameter vector through the
exponential link ``p = 1 - exp(-score)`` with ``score = x_e . theta``.  A set
of parents hitting one target acts as a single combined edge whose feature is
the sum of the member features, so the combined success probability is the
same link applied to the summed score.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXACT_SUBSET_DEGREE_LIMIT = 20
SAMPLED_SUBSET_COUNT = 10_000


class InstanceInvalidError(ValueError):
    """A graph/feature/parameter triple violates the model's assumptions."""


class DirectedGraph:
    """Simple directed graph over nodes 0..n-1 with no self-loops or duplicate edges."""

    def __init__(self, node_count: int, edges):
        if node_count <= 0:
            raise ValueError("node_count must be positive")
        self.node_count = int(node_count)
        self.edges = [(int(u), int(v)) for u, v in edges]
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise ValueError(f"edge ({u},{v}) out of range")
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
        self.edge_index = {e: k for k, e in enumerate(self.edges)}
        self.in_neighbors = [[] for _ in range(node_count)]
        self.out_neighbors = [[] for _ in range(node_count)]
        for u, v in self.edges:
            self.in_neighbors[v].append(u)
            self.out_neighbors[u].append(v)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def in_degree(self, v: int) -> int:
        return len(self.in_neighbors[v])

    def __repr__(self):
        return f"DirectedGraph(nodes={self.node_count}, edges={self.edge_count})"


@dataclass
class FeatureMap:
    """Per-edge feature vectors, stored densely as an (edges, dimension) array."""

    dimension: int
    features: np.ndarray  # shape (n_edges, dimension)
    tabular: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2 or self.features.shape[1] != self.dimension:
            raise ValueError(
                f"features must be (n_edges, {self.dimension}), got {self.features.shape}"
            )

    def edge_feature(self, k: int) -> np.ndarray:
        return self.features[k]


@dataclass
class ParamVector:
    """Model parameter with its configured norm bound."""

    theta: np.ndarray
    norm_bound: float = math.inf

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 1:
            raise ValueError("theta must be a vector")
        if self.norm_bound < 0:
            raise ValueError("norm_bound must be nonnegative")


@dataclass
class ProbabilityTable:
    """Per-edge activation probabilities induced by a parameter vector."""

    probs: np.ndarray

    @property
    def p_min(self) -> float:
        return float(np.min(self.probs)) if self.probs.size else 1.0

    @property
    def reciprocal_p_min(self) -> float:
        return 1.0 / self.p_min


def prob_from_score(score: float) -> float:
    """Activation probability 1 - exp(-score); negative scores give negative values."""
    return -math.expm1(-score)


def log_prob_from_score(score: float) -> float:
    """log(1 - exp(-score)) for score > 0, computed stably near both ends."""
    if score <= 0.0:
        raise ValueError(f"score must be positive, got {score}")
    if score > math.log(2.0):
        return math.log1p(-math.exp(-score))
    return math.log(-math.expm1(-score))


def edge_prob(x: np.ndarray, theta) -> float:
    """Probability of a single edge with feature ``x`` under ``theta``."""
    th = theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    return prob_from_score(float(np.dot(x, th)))


def aggregated_prob(parents, target: int, theta, fm: FeatureMap, graph: DirectedGraph) -> float:
    """Combined activation probability of a nonempty parent set on one target."""
    parents = list(parents)
    if not parents:
        raise ValueError("parent set must be nonempty")
    in_set = set(graph.in_neighbors[target])
    for u in parents:
        if u not in in_set:
            raise ValueError(f"node {u} is not a parent of {target}")
    th = theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    score = sum(float(fm.features[graph.edge_index[(u, target)]] @ th) for u in parents)
    return prob_from_score(score)


def build_tabular_features(graph: DirectedGraph) -> FeatureMap:
    """One-hot-per-edge features, scaled by the reciprocal in-degree of the target.

    The scaling makes every parent-set feature sum have norm at most 1.
    """
    if graph.edge_count == 0:
        raise ValueError("graph has no edges")
    d = graph.edge_count
    feats = np.zeros((d, d))
    for k, (_, v) in enumerate(graph.edges):
        feats[k, k] = 1.0 / graph.in_degree(v)
    return FeatureMap(dimension=d, features=feats, tabular=True)


def edge_probabilities(graph: DirectedGraph, fm: FeatureMap, theta) -> ProbabilityTable:
    th = theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    scores = fm.features @ th
    return ProbabilityTable(probs=-np.expm1(-scores))


@dataclass
class ValidationReport:
    """Outcome of instance validation plus the derived model constants."""

    p_min: float
    reciprocal_p_min: float
    feature_bound: float  # max over parent sets of ||sum of features||^4
    subset_check_exact: bool
    warnings: list = field(default_factory=list)


def validate_instance(graph: DirectedGraph, fm: FeatureMap, theta,
                      rng: np.random.Generator | None = None) -> ValidationReport:
    """Check the normalization and positivity assumptions for an instance.

    Parent subsets are enumerated exactly up to in-degree 20; beyond that a
    random sample of subsets is checked and the report flags the check as
    probabilistic.  Violations raise InstanceInvalidError naming the offender.
    """
    th = theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    scores = fm.features @ th
    for k, score in enumerate(scores):
        if score <= 0.0:
            raise InstanceInvalidError(
                f"edge {graph.edges[k]} has nonpositive score {score:.3e}; "
                "probabilities must be strictly positive"
            )

    exact = True
    warnings: list = []
    feature_bound = 0.0
    if rng is None:
        rng = np.random.default_rng(0)
    for v in range(graph.node_count):
        parents = graph.in_neighbors[v]
        if not parents:
            continue
        rows = np.array([fm.features[graph.edge_index[(u, v)]] for u in parents])
        deg = len(parents)
        if deg <= EXACT_SUBSET_DEGREE_LIMIT:
            subsets = []
            for r in range(1, deg + 1):
                subsets.extend(itertools.combinations(range(deg), r))
        else:
            exact = False
            warnings.append(
                f"node {v}: in-degree {deg} > {EXACT_SUBSET_DEGREE_LIMIT}, "
                f"checked {SAMPLED_SUBSET_COUNT} sampled subsets only"
            )
            subsets = []
            for _ in range(SAMPLED_SUBSET_COUNT):
                mask = rng.random(deg) < 0.5
                idx = tuple(np.nonzero(mask)[0])
                if idx:
                    subsets.append(idx)
        for idx in subsets:
            norm = float(np.linalg.norm(rows[list(idx)].sum(axis=0)))
            if norm > 1.0 + 1e-9:
                members = [parents[i] for i in idx]
                raise InstanceInvalidError(
                    f"feature sum norm {norm:.6f} > 1 for target {v}, parents {members}"
                )
            feature_bound = max(feature_bound, norm ** 4)

    probs = -np.expm1(-scores)
    p_min = float(np.min(probs))
    return ValidationReport(
        p_min=p_min,
        reciprocal_p_min=1.0 / p_min,
        feature_bound=feature_bound,
        subset_check_exact=exact,
        warnings=warnings,
    )


def save_instance(path, graph: DirectedGraph, fm: FeatureMap, theta: ParamVector) -> None:
    payload = {
        "nodes": graph.node_count,
        "edges": [[u, v] for u, v in graph.edges],
        "features": "tabular" if fm.tabular else fm.features.tolist(),
        "theta": theta.theta.tolist(),
    }
    if math.isfinite(theta.norm_bound):
        payload["norm_bound"] = theta.norm_bound
    Path(path).write_text(json.dumps(payload, indent=2))


def load_instance(path) -> tuple[DirectedGraph, FeatureMap, ParamVector]:
    """Read a graph/feature/theta instance from its JSON file format."""
    payload = json.loads(Path(path).read_text())
    graph = DirectedGraph(payload["nodes"], payload["edges"])
    if payload["features"] == "tabular":
        fm = build_tabular_features(graph)
    else:
        feats = np.asarray(payload["features"], dtype=float)
        fm = FeatureMap(dimension=feats.shape[1], features=feats)
    theta = ParamVector(theta=np.asarray(payload["theta"], dtype=float),
                        norm_bound=float(payload.get("norm_bound", math.inf)))
    return graph, fm, theta
