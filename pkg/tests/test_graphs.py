import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascade_lab.generators import chain_instance, fig1_instance, star_instance
from cascade_lab.graphs import (DirectedGraph, FeatureMap, InstanceInvalidError,
                                ParamVector, aggregated_prob, build_tabular_features,
                                edge_prob, edge_probabilities, load_instance,
                                prob_from_score, save_instance, validate_instance)


def test_graph_invariants():
    g = DirectedGraph(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
    assert g.in_neighbors[3] == [1, 2]
    assert g.in_neighbors[0] == []
    assert g.out_neighbors[0] == [1, 2]
    with pytest.raises(ValueError):
        DirectedGraph(3, [(0, 0)])
    with pytest.raises(ValueError):
        DirectedGraph(3, [(0, 1), (0, 1)])
    with pytest.raises(ValueError):
        DirectedGraph(3, [(0, 5)])


def test_tabular_features_fig1():
    g = DirectedGraph(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
    fm = build_tabular_features(g)
    assert fm.dimension == 4
    # in-degree of node 3 is 2, so the (1,3) edge feature is e_3 / 2
    np.testing.assert_allclose(fm.features[2], [0.0, 0.0, 0.5, 0.0])
    np.testing.assert_allclose(fm.features[0], [1.0, 0.0, 0.0, 0.0])


def test_tabular_single_edge_and_star():
    g = DirectedGraph(2, [(0, 1)])
    fm = build_tabular_features(g)
    np.testing.assert_allclose(fm.features, [[1.0]])
    g3, fm3, _ = star_instance(3, p=0.5)
    for k in range(3):
        assert fm3.features[k, k] == pytest.approx(1.0 / 3.0)


def test_edge_prob_values():
    assert edge_prob(np.array([1.0]), np.array([0.0])) == 0.0
    z = -math.log(0.4)
    assert edge_prob(np.array([1.0]), np.array([z])) == pytest.approx(0.6, abs=1e-15)
    assert edge_prob(np.array([1.0]), np.array([50.0])) == 1.0
    # negative scores are returned raw; validity is the validator's job
    assert edge_prob(np.array([1.0]), np.array([-1.0])) < 0.0


def test_aggregated_prob_fig1():
    g, fm, theta = fig1_instance()
    agg = aggregated_prob([1, 2], 3, theta, fm, g)
    assert abs(agg - 0.72) <= 1e-12
    assert aggregated_prob([1], 3, theta, fm, g) == pytest.approx(0.6, abs=1e-12)
    with pytest.raises(ValueError):
        aggregated_prob([], 3, theta, fm, g)
    with pytest.raises(ValueError):
        aggregated_prob([0], 3, theta, fm, g)  # 0 is not a parent of 3


def test_aggregated_three_halves():
    g, fm, theta = star_instance(3, p=0.5)
    agg = aggregated_prob([0, 1, 2], 3, theta, fm, g)
    assert agg == pytest.approx(0.875, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_aggregated_matches_product_identity(n_parents, seed):
    rng = np.random.default_rng(seed)
    g, fm, _ = star_instance(n_parents)
    theta = ParamVector(rng.uniform(0.1, 2.0, size=n_parents))
    parents = [u for u in range(n_parents) if rng.random() < 0.7] or [0]
    agg = aggregated_prob(parents, n_parents, theta, fm, g)
    prod = 1.0
    for u in parents:
        prod *= 1.0 - edge_prob(fm.features[g.edge_index[(u, n_parents)]], theta)
    assert abs(agg - (1.0 - prod)) <= 1e-12


def test_aggregated_monotone_in_parent_set():
    g, fm, theta = star_instance(4, p=0.4)
    child = 4
    smaller = aggregated_prob([0, 1], child, theta, fm, g)
    larger = aggregated_prob([0, 1, 2], child, theta, fm, g)
    assert larger >= smaller


def test_validate_instance_tabular_passes():
    g, fm, theta = fig1_instance()
    report = validate_instance(g, fm, theta)
    assert report.p_min == pytest.approx(0.3)
    assert report.reciprocal_p_min == pytest.approx(1.0 / 0.3)
    assert report.subset_check_exact
    # tabular full parent sets attain norm exactly 1
    assert report.feature_bound == pytest.approx(1.0)


def test_validate_rejects_zero_score_edge():
    g = DirectedGraph(2, [(0, 1)])
    fm = build_tabular_features(g)
    with pytest.raises(InstanceInvalidError):
        validate_instance(g, fm, ParamVector(np.array([0.0])))


def test_validate_rejects_oversized_feature_sum():
    g = DirectedGraph(3, [(0, 2), (1, 2)])
    fm = FeatureMap(dimension=2, features=np.array([[0.9, 0.0], [0.9, 0.0]]))
    with pytest.raises(InstanceInvalidError):
        validate_instance(g, fm, ParamVector(np.array([1.0, 0.0])))


def test_feature_bound_single_unit_norm():
    g = DirectedGraph(2, [(0, 1)])
    fm = FeatureMap(dimension=2, features=np.array([[1.0, 0.0]]))
    report = validate_instance(g, fm, ParamVector(np.array([0.5, 0.0])))
    assert report.feature_bound == pytest.approx(1.0)


def test_prob_from_score_small_values_stable():
    assert prob_from_score(1e-12) == pytest.approx(1e-12, rel=1e-6)


def test_instance_json_round_trip(tmp_path):
    g, fm, theta = chain_instance(4, p=0.5)
    path = tmp_path / "inst.json"
    save_instance(path, g, fm, theta)
    g2, fm2, theta2 = load_instance(path)
    assert g2.edges == g.edges
    np.testing.assert_array_equal(fm2.features, fm.features)
    np.testing.assert_array_equal(theta2.theta, theta.theta)


def test_edge_probabilities_table():
    g, fm, theta = fig1_instance()
    table = edge_probabilities(g, fm, theta)
    np.testing.assert_allclose(table.probs, [1.0, 1.0, 0.6, 0.3], atol=1e-12)
    assert table.p_min == pytest.approx(0.3)
