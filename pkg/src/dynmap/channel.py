"""Slotted multi-subcarrier broadcast channel.

Contenders on a subcarrier are served in random order; one is granted unless a
same-subcarrier transmitter already granted this slot is within range (ideal
carrier sense). Receivers in range of two granted same-subcarrier senders lose
both packets (hidden terminal). Packets arrive a fixed number of slots later.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Any, Optional, TextIO

import numpy as np

from . import kernels

LOG_HEADER = ["slot", "subcarrier", "sender", "receiver", "outcome"]
_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def assign_subcarrier(vid: int, n_sc: int) -> int:
    """Stable hash of the vehicle id onto ``0..n_sc-1``."""
    if n_sc < 1:
        raise ValueError("n_sc must be >= 1")
    return _splitmix64(int(vid)) % n_sc


def assign_subcarriers(ids, n_sc: int) -> np.ndarray:
    """Balanced assignment for a known vehicle set.

    Each id starts at its hash bucket and probes upward past buckets that
    already hold ``ceil(len(ids) / n_sc)`` vehicles (ids taken in sorted
    order). Loads therefore differ by at most one, and with ``n_sc >= len(ids)``
    every vehicle has a subcarrier of its own.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if n_sc < 1:
        raise ValueError("n_sc must be >= 1")
    out = np.zeros(len(ids), dtype=np.int64)
    if len(ids) == 0:
        return out
    cap = -(-len(ids) // n_sc)
    load = np.zeros(n_sc, dtype=np.int64)
    for k in np.argsort(ids, kind="stable"):
        sc = assign_subcarrier(int(ids[k]), n_sc)
        while load[sc] >= cap:
            sc = (sc + 1) % n_sc
        load[sc] += 1
        out[k] = sc
    return out


@dataclass(frozen=True)
class Packet:
    sender: int
    payload: Any
    created_slot: int
    subcarrier: int


class AccessQueue:
    """Vehicles waiting for a grant; membership persists until served."""

    def __init__(self, n: int):
        self.waiting = np.zeros(n, dtype=bool)

    def add(self, idx) -> None:
        self.waiting[idx] = True

    def remove(self, idx) -> None:
        self.waiting[idx] = False

    def members(self, subcarrier: np.ndarray, sc: int) -> np.ndarray:
        return np.flatnonzero(self.waiting & (subcarrier == sc))

    def __len__(self) -> int:
        return int(self.waiting.sum())


@dataclass
class SlotOutcome:
    """Result of one slot; ``heard[a, b]`` means b was in range of granted a."""

    granted: np.ndarray
    delivered: np.ndarray
    collided: np.ndarray
    busy: np.ndarray

    @property
    def n_collisions(self) -> int:
        return int(self.collided.sum())

    def granted_on(self, subcarrier: np.ndarray, sc: int) -> np.ndarray:
        return np.flatnonzero(self.granted & (subcarrier == sc))


def receptions(adj: np.ndarray, subcarrier: np.ndarray, granted: np.ndarray, n_sc: int):
    """Delivery/collision masks and busy flags for a set of granted senders."""
    adj = np.asarray(adj, dtype=bool)
    n = len(granted)
    onehot = np.zeros((n, n_sc), dtype=np.int64)
    onehot[np.flatnonzero(granted), subcarrier[granted]] = 1
    # load[b, s]: granted senders on subcarrier s that b can hear
    load = adj.T.astype(np.int64) @ onehot
    heard = adj & granted[:, None]
    load_pair = load[:, subcarrier].T  # [a, b] -> load at b on a's subcarrier
    delivered = heard & (load_pair == 1)
    collided = heard & (load_pair >= 2)
    busy = granted | (load[np.arange(n), subcarrier] > 0)
    return delivered, collided, busy


def resolve_slot(adj: np.ndarray, subcarrier: np.ndarray, queue: AccessQueue, rng: np.random.Generator,
                 n_sc: Optional[int] = None, active: Optional[np.ndarray] = None) -> SlotOutcome:
    """Arbitrate one slot and remove granted vehicles from ``queue``.

    ``adj`` may be a boolean adjacency matrix or an object with an
    ``adjacency`` attribute (such as :class:`~dynmap.model.EuclideanGraph`).
    """
    adj = np.asarray(getattr(adj, "adjacency", adj), dtype=bool)
    subcarrier = np.asarray(subcarrier, dtype=np.int64)
    n_sc = int(subcarrier.max()) + 1 if n_sc is None else n_sc
    waiting = queue.waiting if active is None else queue.waiting & active
    contenders = np.flatnonzero(waiting)
    order = rng.permutation(contenders) if len(contenders) else contenders
    granted = kernels.grant(order, subcarrier, adj) if len(order) else np.zeros(len(subcarrier), dtype=bool)
    queue.remove(granted)
    delivered, collided, busy = receptions(adj, subcarrier, granted, n_sc)
    return SlotOutcome(granted, delivered, collided, busy)


@dataclass
class _InFlight:
    due: int
    packet: Packet
    receivers: np.ndarray


@dataclass
class ChannelState:
    """Packets on the air, delivered after ``delay_slots``.

    Receivers are fixed at the grant slot: a receiver that moves out of range
    before delivery still gets the packet; one that enters later does not.
    """

    subcarrier: np.ndarray
    delay_slots: int = 1
    log: Optional[TextIO] = None
    in_flight: list = field(default_factory=list)
    _writer: Any = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.log is not None:
            self._writer = csv.writer(self.log)
            self._writer.writerow(LOG_HEADER)

    def send(self, slot: int, outcome: SlotOutcome, payloads) -> None:
        """Queue the granted packets of ``outcome``; ``payloads[a]`` is a's content."""
        for a in np.flatnonzero(outcome.granted):
            pkt = Packet(int(a), payloads[a], slot, int(self.subcarrier[a]))
            self.in_flight.append(_InFlight(slot + self.delay_slots, pkt, np.flatnonzero(outcome.delivered[a])))
            if self._writer is not None:
                for b in np.flatnonzero(outcome.delivered[a]):
                    self._writer.writerow([slot, pkt.subcarrier, int(a), int(b), "delivered"])
                for b in np.flatnonzero(outcome.collided[a]):
                    self._writer.writerow([slot, pkt.subcarrier, int(a), int(b), "hidden_collision"])

    def due_packets(self, now: int) -> list:
        """Packets arriving at ``now`` with their receiver arrays."""
        ready = [f for f in self.in_flight if f.due <= now]
        self.in_flight = [f for f in self.in_flight if f.due > now]
        return [(f.packet, f.receivers) for f in ready]

    def deliver_due(self, now: int) -> list:
        """Flat ``(receiver, packet)`` pairs arriving at ``now``."""
        return [(int(b), pkt) for pkt, rec in self.due_packets(now) for b in rec]
