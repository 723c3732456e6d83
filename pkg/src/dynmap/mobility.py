"""Ground-truth vehicle trajectories.

Traces come either from SUMO floating-car-data exports or from a synthetic
Manhattan-grid generator whose macro parameters (speed limit, density, area)
match the reference urban scenario. Everything is stored on the slot grid as
a dense ``(slots, vehicles, 6)`` array with a presence mask.
"""

from __future__ import annotations

import csv
import math
import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import STATE_DIM, VehicleState, wrap_angle

TRACE_HEADER = ["slot", "id", "x", "y", "h", "u", "a", "omega"]
TRACE_SCHEMA = "# dynmap trace v1"


class TraceError(ValueError):
    """Unreadable or inconsistent trace input."""


class TraceSchemaError(TraceError):
    """A required attribute or column is missing."""


class ResamplingError(TraceError):
    """Trace time steps cannot be aligned with the slot grid."""


# ---------------------------------------------------------------------------
# trace container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceSet:
    states: np.ndarray
    present: np.ndarray
    ids: np.ndarray
    T_t: float
    area_km2: float

    @property
    def n_slots(self) -> int:
        return self.states.shape[0]

    @property
    def n_vehicles(self) -> int:
        return self.states.shape[1]

    def entry_slot(self, k: int) -> int:
        return int(np.argmax(self.present[:, k]))

    def exit_slot(self, k: int) -> int:
        """Last slot in which column ``k`` is present."""
        return int(self.n_slots - 1 - np.argmax(self.present[::-1, k]))

    def states_at(self, slot: int) -> dict[int, VehicleState]:
        cols = np.flatnonzero(self.present[slot])
        return {int(self.ids[k]): VehicleState.from_array(self.states[slot, k]) for k in cols}

    def series(self, vid: int):
        k = int(np.flatnonzero(self.ids == vid)[0])
        slots = np.flatnonzero(self.present[:, k])
        return slots, self.states[slots, k]

    def density(self) -> float:
        """Mean vehicles per km² over the run."""
        return float(self.present.sum(axis=1).mean() / self.area_km2)

    def head(self, n_slots: int) -> "TraceSet":
        return TraceSet(self.states[:n_slots], self.present[:n_slots], self.ids, self.T_t, self.area_km2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"{TRACE_SCHEMA} T_t={self.T_t!r} area_km2={self.area_km2!r}\n")
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for s in range(self.n_slots):
                for k in np.flatnonzero(self.present[s]):
                    w.writerow([s, int(self.ids[k])] + [repr(float(v)) for v in self.states[s, k]])

    @classmethod
    def from_csv(cls, path, T_t: float | None = None, area_km2: float | None = None) -> "TraceSet":
        meta = {}
        rows = []
        with open(path, newline="") as fh:
            lines = [ln for ln in fh]
        body = []
        for ln in lines:
            if ln.startswith("#"):
                if ln.startswith(TRACE_SCHEMA):
                    meta = dict(tok.split("=", 1) for tok in ln[len(TRACE_SCHEMA):].split())
                continue
            body.append(ln)
        reader = csv.reader(body)
        header = next(reader, None)
        if header is None:
            raise TraceError(f"{path}: empty trace")
        missing = [c for c in TRACE_HEADER if c not in header]
        if missing:
            raise TraceSchemaError(f"{path}: missing column {missing[0]!r}")
        col = {c: header.index(c) for c in TRACE_HEADER}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                rows.append([float(row[col[c]]) for c in TRACE_HEADER])
            except (ValueError, IndexError):
                raise TraceError(f"{path}:{lineno}: malformed row") from None
        T_t = float(meta.get("T_t", T_t if T_t is not None else 0.1))
        area = float(meta.get("area_km2", area_km2 if area_km2 is not None else math.nan))
        arr = np.array(rows).reshape(-1, 8)
        ids = np.unique(arr[:, 1].astype(np.int64))
        n_slots = int(arr[:, 0].max()) + 1 if len(arr) else 0
        states = np.full((n_slots, len(ids), STATE_DIM), np.nan)
        present = np.zeros((n_slots, len(ids)), dtype=bool)
        cols = np.searchsorted(ids, arr[:, 1].astype(np.int64))
        slots = arr[:, 0].astype(np.int64)
        states[slots, cols] = arr[:, 2:]
        present[slots, cols] = True
        return cls(states, present, ids, T_t, area)


# ---------------------------------------------------------------------------
# state derivation from positions
# ---------------------------------------------------------------------------

def derive_state(positions, T_t: float, eps_speed: float = 1e-6) -> np.ndarray:
    """Fill heading, speed, acceleration and turn rate from sampled positions.

    Velocities use central differences (one-sided at the ends). While the
    vehicle is stationary the heading is held from the nearest moving sample
    and the turn rate is zero.
    """
    p = np.asarray(positions, dtype=float)
    if p.ndim != 2 or p.shape[1] < 2 or len(p) < 3:
        raise ValueError("derive_state needs at least 3 position samples")
    vx = np.gradient(p[:, 0], T_t)
    vy = np.gradient(p[:, 1], T_t)
    u = np.hypot(vx, vy)
    moving = u > eps_speed
    h = np.arctan2(vy, vx)
    if moving.any():
        idx = np.where(moving, np.arange(len(p)), -1)
        idx = np.maximum.accumulate(idx)
        first = int(np.argmax(moving))
        idx[idx < 0] = first
        h = h[idx]
    else:
        h = np.zeros(len(p))
    hu = np.unwrap(h)
    omega = np.where(moving, np.gradient(hu, T_t), 0.0)
    a = np.gradient(u, T_t)
    # differences of equal values leave rounding residue; report it as zero
    omega[np.abs(omega) < 1e-9] = 0.0
    a[np.abs(a) < 1e-9 * max(1.0, float(u.max()))] = 0.0
    out = np.column_stack([p[:, 0], p[:, 1], wrap_angle(hu), u, a, omega])
    return out


# ---------------------------------------------------------------------------
# SUMO FCD import
# ---------------------------------------------------------------------------

_FCD_ATTRS = ("id", "x", "y", "angle", "speed")


def sumo_angle_to_heading(angle_deg):
    """SUMO angles are degrees clockwise from north; headings are radians
    counter-clockwise from +x."""
    return wrap_angle(math.pi / 2.0 - np.asarray(angle_deg, dtype=float) * math.pi / 180.0)


def _read_fcd(path):
    samples = {}
    times = []
    try:
        for _event, elem in ET.iterparse(str(path), events=("end",)):
            if elem.tag == "timestep":
                if "time" not in elem.attrib:
                    raise TraceSchemaError(f"{path}: timestep element missing attribute 'time'")
                t = float(elem.attrib["time"])
                times.append(t)
                for veh in elem.iter("vehicle"):
                    for attr in _FCD_ATTRS:
                        if attr not in veh.attrib:
                            raise TraceSchemaError(f"{path}: vehicle element missing attribute {attr!r} at time {t}")
                    a = veh.attrib
                    samples.setdefault(a["id"], []).append(
                        (t, float(a["x"]), float(a["y"]), float(a["angle"]), float(a["speed"])))
                elem.clear()
    except ET.ParseError as exc:
        line, col = exc.position
        raise TraceError(f"{path}:{line}:{col}: malformed XML ({exc.msg if hasattr(exc, 'msg') else exc})") from None
    return np.asarray(times, dtype=float), samples


def _check_steps(times: np.ndarray, T_t: float) -> None:
    if len(times) < 2:
        return
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise ResamplingError("timestep times must be strictly increasing")
    ratio = steps / T_t
    if np.all(np.abs(ratio - np.round(ratio)) < 1e-6):
        return
    inv = T_t / steps
    if np.allclose(steps, steps[0], rtol=0, atol=1e-9) and abs(inv[0] - round(inv[0])) < 1e-6:
        return
    raise ResamplingError(f"time steps {np.unique(np.round(steps, 9))} cannot be aligned to T_t={T_t}")


def load_fcd_trace(path, T_t: float = 0.1, area_km2: float | None = None) -> TraceSet:
    """Read a SUMO FCD export and align it with the slot grid.

    Coarser traces are linearly interpolated (heading on the unwrapped angle),
    finer ones are sampled at slot instants. Acceleration and turn rate are
    differenced from the resampled speed and heading.
    """
    times, samples = _read_fcd(path)
    _check_steps(times, T_t)
    if len(times) == 0:
        return TraceSet(np.zeros((0, 0, STATE_DIM)), np.zeros((0, 0), dtype=bool), np.zeros(0, dtype=np.int64),
                        T_t, area_km2 if area_km2 is not None else math.nan)
    t0 = times[0]
    n_slots = int(round((times[-1] - t0) / T_t)) + 1
    keys = sorted(samples, key=lambda k: (0, int(k)) if k.lstrip("-").isdigit() else (1, k))
    ids = np.array([int(k) if k.lstrip("-").isdigit() else i for i, k in enumerate(keys)], dtype=np.int64)
    if len(set(ids.tolist())) != len(ids):
        ids = np.arange(len(keys), dtype=np.int64)
    states = np.full((n_slots, len(keys), STATE_DIM), np.nan)
    present = np.zeros((n_slots, len(keys)), dtype=bool)
    grid_t = t0 + T_t * np.arange(n_slots)
    xs, ys = [], []
    for k, key in enumerate(keys):
        arr = np.asarray(samples[key])
        t, x, y = arr[:, 0], arr[:, 1], arr[:, 2]
        h = np.unwrap(sumo_angle_to_heading(arr[:, 3]))
        first = int(round((t[0] - t0) / T_t))
        last = int(round((t[-1] - t0) / T_t))
        sl = slice(first, last + 1)
        tg = grid_t[sl]
        u = np.interp(tg, t, arr[:, 4])
        hh = np.interp(tg, t, h)
        st = states[sl, k]
        st[:, 0] = np.interp(tg, t, x)
        st[:, 1] = np.interp(tg, t, y)
        st[:, 2] = wrap_angle(hh)
        st[:, 3] = u
        if len(tg) >= 2:
            st[:, 4] = np.gradient(u, T_t)
            st[:, 5] = np.gradient(hh, T_t)
        else:
            st[:, 4:] = 0.0
        states[sl, k] = st
        present[sl, k] = True
        xs.append(x)
        ys.append(y)
    if area_km2 is None:
        allx, ally = np.concatenate(xs), np.concatenate(ys)
        area_km2 = max((allx.max() - allx.min()) * (ally.max() - ally.min()) / 1e6, 1e-12)
    return TraceSet(states, present, ids, float(T_t), float(area_km2))


# ---------------------------------------------------------------------------
# synthetic grid mobility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridMapSpec:
    """Square street grid with ``n_nodes`` junctions per side.

    The defaults give a 0.5168 km² area, which with 62 vehicles is the
    reference density of 120 vehicles/km².
    """

    block: float = 102.698
    n_nodes: int = 8
    v_max: float = 13.89
    p_straight: float = 0.5
    p_left: float = 0.25
    p_right: float = 0.25
    turn_radius: float = 10.0
    turn_speed: float = 5.0
    accel: float = 2.0
    brake: float = 2.0
    brake_max: float = 4.5
    speed_frac: tuple = (0.8, 1.0)

    def __post_init__(self):
        if self.block <= 0 or self.n_nodes < 2:
            raise ValueError("need block > 0 and at least 2 junctions per side")
        if abs(self.p_straight + self.p_left + self.p_right - 1.0) > 1e-9:
            raise ValueError("turn probabilities must sum to 1")
        if not 0 < self.turn_radius < self.block / 2:
            raise ValueError("turn radius must lie in (0, block/2)")

    @property
    def side(self) -> float:
        return (self.n_nodes - 1) * self.block

    @property
    def area_km2(self) -> float:
        return self.side ** 2 / 1e6

    @classmethod
    def for_area(cls, area_km2: float, n_nodes: int = 8, **kw) -> "GridMapSpec":
        return cls(block=math.sqrt(area_km2 * 1e6) / (n_nodes - 1), n_nodes=n_nodes, **kw)


_DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))  # E, N, W, S; index + 1 is a left turn


@dataclass
class _Piece:
    length: float
    x: float
    y: float
    h: float
    kappa: float

    def at(self, s: float):
        if self.kappa == 0.0:
            return self.x + s * math.cos(self.h), self.y + s * math.sin(self.h), self.h
        h1 = self.h + self.kappa * s
        return (self.x + (math.sin(h1) - math.sin(self.h)) / self.kappa,
                self.y - (math.cos(h1) - math.cos(self.h)) / self.kappa, h1)


class _Driver:
    """One vehicle following random turns on the grid."""

    def __init__(self, spec: GridMapSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        n = spec.n_nodes
        self.v_des = spec.v_max * rng.uniform(*spec.speed_frac)
        # start on a random street segment, travelling towards node `self.node`
        while True:
            node = (int(rng.integers(n)), int(rng.integers(n)))
            d = int(rng.integers(4))
            nxt = (node[0] + _DIRS[d][0], node[1] + _DIRS[d][1])
            if 0 <= nxt[0] < n and 0 <= nxt[1] < n:
                break
        self.node, self.dir = nxt, d
        self.pieces: deque = deque()
        self.pieces.append(self._street(node, d))
        self.s = rng.uniform(0.0, self.pieces[0].length)
        self._extend()
        self.u = 0.0
        self.u = min(self.v_des * rng.uniform(0.3, 1.0), self._allowed_speed())

    def _xy(self, node):
        return node[0] * self.spec.block, node[1] * self.spec.block

    def _street(self, from_node, d) -> _Piece:
        R = self.spec.turn_radius
        x, y = self._xy(from_node)
        dx, dy = _DIRS[d]
        return _Piece(self.spec.block - 2 * R, x + R * dx, y + R * dy, math.atan2(dy, dx), 0.0)

    def _choose(self) -> int:
        n = self.spec.n_nodes
        opts, probs = [], []
        for turn, p in ((0, self.spec.p_straight), (1, self.spec.p_left), (-1, self.spec.p_right)):
            d = (self.dir + turn) % 4
            nxt = (self.node[0] + _DIRS[d][0], self.node[1] + _DIRS[d][1])
            if 0 <= nxt[0] < n and 0 <= nxt[1] < n and p > 0:
                opts.append(turn)
                probs.append(p)
        probs = np.asarray(probs) / sum(probs)
        return opts[int(self.rng.choice(len(opts), p=probs))]

    def _extend(self) -> None:
        R = self.spec.turn_radius
        while len(self.pieces) < 5:
            turn = self._choose()
            x, y = self._xy(self.node)
            dx, dy = _DIRS[self.dir]
            h = math.atan2(dy, dx)
            if turn == 0:
                self.pieces.append(_Piece(2 * R, x - R * dx, y - R * dy, h, 0.0))
            else:
                self.pieces.append(_Piece(0.5 * math.pi * R, x - R * dx, y - R * dy, h, turn / R))
            self.dir = (self.dir + turn) % 4
            self.pieces.append(self._street(self.node, self.dir))
            self.node = (self.node[0] + _DIRS[self.dir][0], self.node[1] + _DIRS[self.dir][1])

    def _allowed_speed(self, ahead: float = 0.0) -> float:
        """Highest speed from which every upcoming turn can still be entered at
        turn speed, measured ``ahead`` metres further along the path."""
        sp = self.spec
        cur = self.pieces[0]
        v = self.v_des
        if cur.kappa != 0.0:
            v = min(v, sp.turn_speed)
        dist = max(cur.length - self.s - ahead, 0.0)
        for p in list(self.pieces)[1:]:
            if dist > 200.0:
                break
            if p.kappa != 0.0:
                v = min(v, math.sqrt(sp.turn_speed ** 2 + 2.0 * sp.brake * dist))
            dist += p.length
        return v

    def state(self, dt: float) -> np.ndarray:
        """Current truth state; also fixes the acceleration for the next slot."""
        sp = self.spec
        target = self._allowed_speed(self.u * dt)
        a = (target - self.u) / dt
        a = min(max(a, -sp.brake_max), sp.accel)
        if self.u + a * dt < 0.0:
            a = -self.u / dt
        self.a = a
        x, y, h = self.pieces[0].at(self.s)
        return np.array([x, y, wrap_angle(h), self.u, a, self.u * self.pieces[0].kappa])

    def advance(self, dt: float) -> None:
        ds = self.u * dt + 0.5 * self.a * dt * dt
        self.u = min(max(self.u + self.a * dt, 0.0), self.spec.v_max)
        self.s += max(ds, 0.0)
        while self.s >= self.pieces[0].length:
            self.s -= self.pieces[0].length
            self.pieces.popleft()
            self._extend()


def as_seed_sequence(seed) -> np.random.SeedSequence:
    """A fresh ``SeedSequence`` for ``seed``.

    ``spawn()`` advances a sequence's child counter, so a passed-in sequence
    is copied: spawning from the same seed then always gives the same children.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)


def synth_trips(spec: GridMapSpec, n_vehicles: int, duration: int, seed, T_t: float = 0.1) -> TraceSet:
    """Random-turn trips on a street grid for ``duration`` slots.

    Vehicles keep their lane centre line, accelerate up to a personal desired
    speed no higher than ``v_max``, brake ahead of turns to ``turn_speed`` and
    turn on quarter circles with constant turn rate.
    """
    if n_vehicles <= 0:
        raise ValueError("n_vehicles must be positive")
    drivers = [_Driver(spec, np.random.default_rng(s)) for s in as_seed_sequence(seed).spawn(n_vehicles)]
    states = np.empty((duration, n_vehicles, STATE_DIM))
    for t in range(duration):
        for k, drv in enumerate(drivers):
            states[t, k] = drv.state(T_t)
            drv.advance(T_t)
    present = np.ones((duration, n_vehicles), dtype=bool)
    return TraceSet(states, present, np.arange(n_vehicles, dtype=np.int64), float(T_t), spec.area_km2)


def rectilinear_trace(n_vehicles: int, duration: int, T_t: float = 0.1, speed: float = 10.0,
                      spacing: float = 50.0) -> TraceSet:
    """Vehicles on parallel straight lanes at constant speed (analytic case)."""
    t = np.arange(duration) * T_t
    states = np.zeros((duration, n_vehicles, STATE_DIM))
    for k in range(n_vehicles):
        states[:, k, 0] = speed * t
        states[:, k, 1] = k * spacing
        states[:, k, 3] = speed
    area = max(speed * duration * T_t * max(n_vehicles - 1, 1) * spacing / 1e6, 1e-9)
    return TraceSet(states, np.ones((duration, n_vehicles), dtype=bool), np.arange(n_vehicles), float(T_t), area)
