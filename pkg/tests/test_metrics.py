import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynmap.metrics import (METRICS_SCHEMA, SERIES_SCHEMA, RichardsParams, aggregate, detection_error, ego_error,
                            nearest_rank, network_error, richards_weight)


def test_richards_reference_values():
    assert richards_weight(42.0) == pytest.approx(1 - 2**-5)
    # 1 - (1 + e^{2.1})^{-5}
    assert richards_weight(0.0) == pytest.approx(1 - (1 + math.exp(2.1)) ** -5)
    assert richards_weight(0.0) == pytest.approx(0.99998, abs=1e-5)
    assert richards_weight(1000.0) == pytest.approx(0.0, abs=1e-12)


def test_richards_strictly_decreasing():
    d = np.linspace(0, 300, 1000)
    assert np.all(np.diff(richards_weight(d)) < 0)
    with pytest.raises(ValueError):
        RichardsParams(nu=0.0)


def test_ego_error_hand_example():
    truth = {0: np.array([0.0, 0.0]), 1: np.array([42.0, 0.0])}
    est = {0: np.array([3.0, 4.0]), 1: np.array([42.0, 2.0])}
    want = (richards_weight(0.0) * 5.0 + richards_weight(42.0) * 2.0) / 2
    assert ego_error(0, est, truth) == pytest.approx(want)


@given(st.lists(st.tuples(st.floats(-200, 200), st.floats(-200, 200), st.floats(-5, 5), st.floats(-5, 5)),
                min_size=1, max_size=8))
def test_ego_error_nonnegative_zero_iff_exact(rows):
    truth = {k: np.array(r[:2]) for k, r in enumerate(rows)}
    exact = {k: v.copy() for k, v in truth.items()}
    assert ego_error(0, exact, truth) == 0.0
    noisy = {k: truth[k] + np.array(r[2:]) for k, r in enumerate(rows)}
    e = ego_error(0, noisy, truth)
    assert e >= 0.0
    if any(abs(r[2]) + abs(r[3]) > 1e-3 and np.hypot(*np.subtract(r[:2], rows[0][:2])) < 150 for r in rows):
        assert e > 0


def test_ego_error_skips_targets_without_truth():
    truth = {0: np.zeros(2)}
    est = {0: np.zeros(2), 9: np.array([5.0, 5.0])}
    assert ego_error(0, est, truth) == 0.0


def test_network_and_detection():
    assert network_error([1.0, 2.0, 3.0]) == 2.0
    with pytest.raises(ValueError):
        network_error([])
    assert detection_error({1, 2, 3}, {2, 3, 4, 5}) == (1, 2)


def test_nearest_rank():
    x = np.arange(1, 101)
    assert nearest_rank(x, 95) == 95
    assert nearest_rank([3.0], 95) == 3.0
    assert nearest_rank([1, 2, 3, 4], 50) == 2
    assert math.isnan(nearest_rank([], 95))


def test_aggregate_and_serialisation(tmp_path):
    m = aggregate(np.array([1.0, 2.0, 3.0, 10.0]), np.array([0.0, 0.5]), np.array([0.25, 0.25]), n_collisions=6,
                  n_vehicles=3, duration_s=2.0, grant_slots={1: [0, 3, 6], 2: [1], 3: []}, T_t=0.1,
                  series=np.array([0.5, 0.7]), mean_rho=0.2)
    assert m.mean_error == 4.0 and m.p95_error == 10.0
    assert m.p_miss == 0.25 and m.p_false == 0.25 and m.detection_error == 0.5
    assert m.collision_rate == 1.0
    assert m.mean_tx_interval == pytest.approx(0.3)
    assert m.n_transmissions == 4 and m.mean_rho == 0.2
    d = json.loads(m.to_json())
    assert d["schema"] == METRICS_SCHEMA and "series" not in d
    m.write_series_csv(tmp_path / "s.csv", 0.1, first_slot=20)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == SERIES_SCHEMA and lines[2].startswith("20,")


def test_json_maps_non_finite_to_null():
    m = aggregate(np.zeros(0), np.zeros(0), np.zeros(0), 0, 1, 0.0, {1: []}, 0.1)
    d = json.loads(m.to_json())
    assert d["mean_tx_interval"] is None and d["mean_error"] is None
