"""Vehicle state, distances and the range-limited connectivity graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

# state vector layout used everywhere: (x, y, h, u, a, omega)
X, Y, H, U, A, W = range(6)
STATE_DIM = 6


def wrap_angle(h):
    """Map angles to (-pi, pi]. Works on scalars and arrays."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(h, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


class VehicleState(NamedTuple):
    """Ground-truth kinematic state of one vehicle at one slot.

    Units: metres, radians, m/s, m/s^2, rad/s.
    """

    x: float
    y: float
    h: float
    u: float
    a: float
    omega: float

    @classmethod
    def from_array(cls, v) -> "VehicleState":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), float(v[1]), wrap_angle(v[2]), float(v[3]), float(v[4]), float(v[5]))

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    def normalized(self) -> "VehicleState":
        return self._replace(h=wrap_angle(self.h), u=max(self.u, 0.0))

    def is_valid(self) -> bool:
        return bool(np.all(np.isfinite(self.as_array())) and self.u >= 0.0 and -np.pi < self.h <= np.pi)


def distance(s1, s2) -> float:
    """Planar distance between two states; only x and y matter."""
    return float(np.hypot(s1[0] - s2[0], s1[1] - s2[1]))


def pairwise_distances(xy: np.ndarray) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    diff = xy[:, None, :] - xy[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True)
class EuclideanGraph:
    """Undirected graph over vehicle positions; an edge means distance < r."""

    ids: np.ndarray
    positions: np.ndarray
    adjacency: np.ndarray
    r: float

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def edges(self) -> set[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return {(int(self.ids[a]), int(self.ids[b])) for a, b in zip(i, j)}

    def index_of(self, vid: int) -> int:
        hits = np.nonzero(self.ids == vid)[0]
        if len(hits) == 0:
            raise KeyError(vid)
        return int(hits[0])

    def neighbors(self, vid: int) -> set[int]:
        row = self.adjacency[self.index_of(vid)]
        return {int(v) for v in self.ids[row]}


def adjacency_matrix(xy: np.ndarray, r: float) -> np.ndarray:
    adj = pairwise_distances(xy) < r
    np.fill_diagonal(adj, False)
    return adj


def build_graph(states: Mapping[int, VehicleState], r: float) -> EuclideanGraph:
    ids = np.array(sorted(states), dtype=np.int64)
    if len(ids) == 0:
        return EuclideanGraph(ids, np.zeros((0, 2)), np.zeros((0, 0), dtype=bool), float(r))
    xy = np.array([[states[i][0], states[i][1]] for i in ids], dtype=float)
    return EuclideanGraph(ids, xy, adjacency_matrix(xy, r), float(r))
