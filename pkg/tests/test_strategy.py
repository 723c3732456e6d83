import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynmap.strategy import StrategyState, decide_batch, etb_decide, pb_decide

T_T = 0.1


def test_pb_period_boundary_and_residual():
    tx, s = pb_decide(StrategyState("PB", T_last_tx=9.95, T_period=10.0), T_T)
    assert tx and s.T_last_tx == pytest.approx(0.05)
    tx, s = pb_decide(StrategyState("PB", T_last_tx=9.85, T_period=10.0), T_T)
    assert not tx and s.T_last_tx == pytest.approx(9.95)


def test_pb_new_neighbour_needs_strictly_two_slots():
    tx, _ = pb_decide(StrategyState("PB", T_last_tx=0.1, new_neighbor=True), T_T)
    assert not tx
    tx, s = pb_decide(StrategyState("PB", T_last_tx=0.2, new_neighbor=True, T_period=1.0), T_T)
    assert tx and s.T_last_tx == 0.0 and not s.new_neighbor


def test_pb_infinite_period_never_fires():
    s = StrategyState("PB", T_period=math.inf)
    for _ in range(1000):
        tx, s = pb_decide(s, T_T)
        assert not tx


def test_pb_gap_equals_period_despite_float_accumulation():
    s = StrategyState("PB", T_period=1.0)
    fired = []
    for k in range(1, 101):
        tx, s = pb_decide(s, T_T)
        if tx:
            fired.append(k)
    gaps = np.diff(fired)
    assert set(gaps.tolist()) <= {10, 11}
    assert abs(np.mean(gaps) * T_T - 1.0) <= T_T


def test_etb_threshold_is_strict():
    st0 = StrategyState("ETB", T_last_tx=0.0, E_thr=5.0)
    assert not etb_decide(st0, 5.0, T_T)[0]
    assert etb_decide(st0, 5.0 + 1e-6, T_T)[0]


def test_etb_timeout_and_reset():
    tx, s = etb_decide(StrategyState("ETB", T_last_tx=10.0, E_thr=5.0, T_max=10.0), 0.0, T_T)
    assert tx and s.T_last_tx == pytest.approx(0.1)
    tx, s = etb_decide(StrategyState("ETB", T_last_tx=2.0, E_thr=5.0), 7.0, T_T)
    assert tx and s.T_last_tx == 0.0


def test_etb_zero_threshold_fires_on_any_divergence():
    s = StrategyState("ETB", E_thr=0.0)
    assert etb_decide(s, 1e-9, T_T)[0]
    assert not etb_decide(s, 0.0, T_T)[0]
    with pytest.raises(ValueError):
        etb_decide(s, -1.0, T_T)


@given(st.lists(st.tuples(st.floats(0, 20), st.floats(0.05, 5), st.booleans()), min_size=1, max_size=30),
       st.floats(0, 10))
def test_batch_matches_scalar(rows, d):
    T_last = np.array([r[0] for r in rows])
    param = np.array([r[1] for r in rows])
    nn = np.array([r[2] for r in rows])
    tx, t = decide_batch("PB", T_last, nn, T_T, T_period=param)
    for k in range(len(rows)):
        a, s = pb_decide(StrategyState("PB", T_last[k], param[k], new_neighbor=bool(nn[k])), T_T)
        assert a == tx[k] and s.T_last_tx == pytest.approx(t[k])
    div = np.full(len(rows), d)
    tx, t = decide_batch("ETB", T_last, nn, T_T, E_thr=param, d_div=div, T_max=10.0)
    for k in range(len(rows)):
        a, s = etb_decide(StrategyState("ETB", T_last[k], E_thr=param[k], new_neighbor=bool(nn[k])), d, T_T)
        assert a == tx[k] and s.T_last_tx == pytest.approx(t[k])
    with pytest.raises(ValueError):
        decide_batch("XYZ", T_last, nn, T_T)
