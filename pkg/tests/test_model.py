import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynmap.model import (EuclideanGraph, VehicleState, adjacency_matrix, build_graph, distance,
                          pairwise_distances, wrap_angle)


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_range_and_equivalence(h):
    w = wrap_angle(h)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(h), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(h), abs_tol=1e-9)


def test_wrap_angle_boundaries():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0


def test_vehicle_state_roundtrip_and_validity():
    s = VehicleState(1.0, 2.0, 1.0, 3.0, 0.5, 0.1)
    assert VehicleState.from_array(s.as_array()) == s
    assert s._replace(h=4.0).normalized().h == pytest.approx(4.0 - 2 * math.pi)
    assert not VehicleState(0, 0, 0, -1.0, 0, 0).is_valid()


def _brute_edges(states, r):
    out = set()
    for (i, a), (j, b) in itertools.combinations(states.items(), 2):
        if math.hypot(a.x - b.x, a.y - b.y) < r:
            out.add((min(i, j), max(i, j)))
    return out


@given(st.lists(st.tuples(st.floats(0, 500), st.floats(0, 500)), min_size=0, max_size=25))
def test_graph_matches_brute_force(points):
    states = {10 + k: VehicleState(x, y, 0, 0, 0, 0) for k, (x, y) in enumerate(points)}
    g = build_graph(states, 140.0)
    assert g.edges == _brute_edges(states, 140.0)
    for vid in states:
        assert vid not in g.neighbors(vid)


def test_edge_requires_strict_range():
    states = {1: VehicleState(0, 0, 0, 0, 0, 0), 2: VehicleState(140.0, 0, 0, 0, 0, 0),
              3: VehicleState(0, 139.999, 0, 0, 0, 0)}
    g = build_graph(states, 140.0)
    assert g.neighbors(1) == {3}
    assert g.neighbors(2) == set()


def test_empty_and_single_graph():
    assert len(build_graph({}, 140.0)) == 0
    g = build_graph({7: VehicleState(0, 0, 0, 0, 0, 0)}, 140.0)
    assert g.neighbors(7) == set() and g.edges == set()
    with pytest.raises(KeyError):
        g.index_of(8)


def test_distance_helpers(rng):
    xy = rng.uniform(0, 100, (6, 2))
    D = pairwise_distances(xy)
    assert np.allclose(D, D.T) and np.all(np.diag(D) == 0)
    a, b = VehicleState(0, 0, 0, 0, 0, 0), VehicleState(3, 4, 0, 0, 0, 0)
    assert distance(a, b) == 5.0
    adj = adjacency_matrix(xy, 50.0)
    assert not adj.diagonal().any() and (adj == adj.T).all()
    assert isinstance(build_graph({0: a, 1: b}, 10.0), EuclideanGraph)
