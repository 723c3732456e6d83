"""Transmission decisions: Periodic Broadcasting (PB) and Error Threshold
Broadcasting (ETB).

Both count the time since the last transmission in ``T_last_tx`` and add one
slot per decision. A fresh neighbour triggers an extra transmission unless one
was sent within the last two slots. Comparisons are strict; a ``1e-9`` s
margin keeps accumulated float error (ten times 0.1 is 0.9999999999999999)
from flipping them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

TOL = 1e-9


@dataclass(frozen=True)
class StrategyState:
    kind: str = "PB"
    T_last_tx: float = 0.0
    T_period: float = 1.0
    E_thr: float = 5.0
    T_max: float = 10.0
    new_neighbor: bool = False


def pb_decide(st: StrategyState, T_t: float):
    t = st.T_last_tx + T_t
    tx = t > st.T_period + TOL or (st.new_neighbor and t > 2.0 * T_t + TOL)
    if tx:
        t = max(t - st.T_period, 0.0)
    return tx, replace(st, T_last_tx=t, new_neighbor=False)


def etb_decide(st: StrategyState, d_div: float, T_t: float):
    if d_div < 0:
        raise ValueError("divergence must be non-negative")
    t = st.T_last_tx + T_t
    tx = d_div > st.E_thr or t > st.T_max + TOL or (st.new_neighbor and t > 2.0 * T_t + TOL)
    if tx:
        # the residual uses T_max where the periodic rule uses T_period
        t = max(t - st.T_max, 0.0)
    return tx, replace(st, T_last_tx=t, new_neighbor=False)


def decide_batch(kind: str, T_last, new_neighbor, T_t: float, T_period=None, E_thr=None, d_div=None,
                 T_max: float = 10.0):
    """Vectorised form of :func:`pb_decide` / :func:`etb_decide`.

    Returns ``(transmit, T_last_tx)`` arrays.
    """
    t = np.asarray(T_last, dtype=float) + T_t
    nn = np.asarray(new_neighbor, dtype=bool) & (t > 2.0 * T_t + TOL)
    if kind == "PB":
        period = np.broadcast_to(np.asarray(T_period, dtype=float), t.shape)
        tx = (t > period + TOL) | nn
        t = np.where(tx, np.maximum(t - period, 0.0), t)
    elif kind == "ETB":
        tx = (np.asarray(d_div, dtype=float) > np.asarray(E_thr, dtype=float)) | (t > T_max + TOL) | nn
        t = np.where(tx, np.maximum(t - T_max, 0.0), t)
    else:
        raise ValueError(f"unknown strategy {kind!r}")
    return tx, t
