"""Slot-level simulator, calibration run and Monte Carlo campaigns.

Every slot runs the same nine sub-steps, in this order:

1. load truth states from the trace
2. rebuild the connectivity graph
3. deliver due packets into the receivers' tracks
4. drop tracks older than ``Delta_track``
5. self filter predict + update; advance every broadcast copy by one slot
6. congestion control (every ``N_cbr_update`` slots)
7. broadcast decisions; deciding vehicles join the access queue
8. channel arbitration
9. metric snapshot (after the warm-up)

A broadcast estimate is stored once as a *record* and shared by every receiver
holding it; records are propagated with the same predict-only filter that a
receiver would run, so the sender's latest record doubles as its ETB shadow
filter.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .channel import AccessQueue, ChannelState, assign_subcarriers, resolve_slot
from .config import ConfigError, SimConfig
from .congestion import (CongestionState, ErrorPeriodMap, LimericParams, apply_congestion, build_error_period_map,
                         limeric_step, nacc_rho, update_cbr)
from .metrics import RichardsParams, RunMetrics, aggregate, nearest_rank, richards_weight
from .mobility import GridMapSpec, as_seed_sequence, TraceSet, load_fcd_trace, synth_trips
from .model import STATE_DIM, adjacency_matrix, wrap_angle
from .motion import UKFParams
from .strategy import decide_batch

SUMMARY_SCHEMA = "dynmap-campaign-summary v1"
METRIC_KEYS = ("mean_error", "p95_error", "p_miss", "p_false", "detection_error", "collision_rate",
               "mean_tx_interval", "mean_rho", "mean_cbr")


# ---------------------------------------------------------------------------
# seeds and scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Streams:
    mobility: np.random.SeedSequence
    noise: np.random.SeedSequence
    channel: np.random.SeedSequence
    strategy: np.random.SeedSequence


def streams(seed) -> Streams:
    """Independent per-concern seed streams so that switching strategies leaves
    mobility and sensor noise untouched."""
    return Streams(*as_seed_sequence(seed).spawn(4))


def run_seed(base_seed: int, run: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed), int(run)])


def make_trace(cfg: SimConfig, seed) -> TraceSet:
    """The configured trace file, or a synthetic grid trace for this seed."""
    if cfg.trace:
        p = Path(cfg.trace)
        if not p.exists():
            raise ConfigError(f"trace file not found: {p}")
        if p.suffix.lower() == ".xml":
            tr = load_fcd_trace(p, cfg.T_t)
        else:
            tr = TraceSet.from_csv(p, cfg.T_t)
        return tr.head(cfg.n_slots)
    spec = GridMapSpec.for_area(cfg.area_km2, v_max=cfg.v_max)
    return synth_trips(spec, cfg.n_vehicles, cfg.n_slots, streams(seed).mobility, cfg.T_t)


def load_map(cfg: SimConfig, emap: Optional[ErrorPeriodMap] = None) -> Optional[ErrorPeriodMap]:
    if emap is not None:
        return emap
    if cfg.calibration_map:
        return ErrorPeriodMap.load_csv(cfg.calibration_map)
    return None


def check_config(cfg: SimConfig, emap: Optional[ErrorPeriodMap]) -> None:
    """Reject inconsistent settings before slot 0."""
    cfg.validate()
    if cfg.remote_fusion:
        raise ConfigError("remote_fusion is only available through motion.ingest_remote; the simulator "
                          "requires track replacement so that shadow filters match receivers")
    if cfg.strategy == "ETB" and cfg.congestion != "none" and emap is None:
        raise ConfigError("ETB with congestion control needs a calibration map: set calibration_map "
                          "(run 'dynmap calibrate' to build one)")


# ---------------------------------------------------------------------------
# shared broadcast records
# ---------------------------------------------------------------------------

class RecordStore:
    """Broadcast estimates, each propagated once per slot for all holders."""

    def __init__(self, capacity: int = 256):
        self.mean = np.zeros((capacity, STATE_DIM))
        self.cov = np.zeros((capacity, STATE_DIM, STATE_DIM))
        self.sender = np.full(capacity, -1, dtype=np.int64)
        self.alive = np.zeros(capacity, dtype=bool)

    def add(self, sender, mean, cov) -> np.ndarray:
        sender = np.atleast_1d(sender)
        free = np.flatnonzero(~self.alive)
        if len(free) < len(sender):
            self._grow(len(sender) - len(free))
            free = np.flatnonzero(~self.alive)
        idx = free[:len(sender)]
        self.mean[idx], self.cov[idx], self.sender[idx] = mean, cov, sender
        self.alive[idx] = True
        return idx

    def _grow(self, extra: int) -> None:
        cap = len(self.alive)
        new = max(2 * cap, cap + extra)
        for name in ("mean", "cov", "sender", "alive"):
            old = getattr(self, name)
            arr = np.zeros((new,) + old.shape[1:], dtype=old.dtype)
            if name == "sender":
                arr[:] = -1
            arr[:cap] = old
            setattr(self, name, arr)

    def predict(self, dt: float, q: float, weights) -> np.ndarray:
        """Advance all live records; returns indices that failed and were dropped."""
        idx = np.flatnonzero(self.alive)
        if len(idx) == 0:
            return idx
        m, P, ok = kernels.ukf_predict_batch(self.mean[idx], self.cov[idx], dt, q, weights)
        self.mean[idx], self.cov[idx] = m, P
        bad = idx[~ok]
        self.alive[bad] = False
        return bad

    def keep_only(self, referenced: np.ndarray) -> None:
        keep = np.zeros_like(self.alive)
        referenced = referenced[referenced >= 0]
        keep[referenced] = True
        self.alive &= keep

    def __len__(self) -> int:
        return int(self.alive.sum())


# ---------------------------------------------------------------------------
# world
# ---------------------------------------------------------------------------

@dataclass
class Accumulators:
    errors: list = field(default_factory=list)
    miss: list = field(default_factory=list)
    false: list = field(default_factory=list)
    series: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    cbr: list = field(default_factory=list)
    n_collisions: int = 0
    grants: dict = field(default_factory=dict)
    metric_slots: int = 0


class World:
    """Complete mutable simulation state of one run."""

    def __init__(self, cfg: SimConfig, trace: TraceSet, seed=0, emap: Optional[ErrorPeriodMap] = None,
                 event_log=None):
        check_config(cfg, emap)
        self.cfg = cfg
        self.trace = trace
        self.emap = emap
        self.slot = 0
        n = trace.n_vehicles
        self.n = n
        st = streams(seed)
        self.rng_noise = np.random.default_rng(st.noise)
        self.rng_channel = np.random.default_rng(st.channel)
        self.rng_strategy = np.random.default_rng(st.strategy)
        self.weights = UKFParams.from_config(cfg).weights()
        self.r_diag = cfg.R_diag
        self.r_sqrt = np.sqrt(self.r_diag)
        self.richards = RichardsParams.from_config(cfg)
        self.lam0 = richards_weight(0.0, self.richards)
        self.limeric = LimericParams.from_config(cfg)

        self.subcarrier = assign_subcarriers(trace.ids, cfg.n_sc)
        self.self_mean = np.zeros((n, STATE_DIM))
        self.self_cov = np.zeros((n, STATE_DIM, STATE_DIM))
        self.initialised = np.zeros(n, dtype=bool)
        self.active = np.zeros(n, dtype=bool)
        self.records = RecordStore(max(64, 4 * n))
        self.latest = np.full(n, -1, dtype=np.int64)
        self.track = np.full((n, n), -1, dtype=np.int64)
        self.track_slot = np.zeros((n, n), dtype=np.int64)
        self.T_last = np.zeros(n)
        self.new_neighbor = np.zeros(n, dtype=bool)
        self.T_period = np.full(n, cfg.T_period)
        self.E_thr = np.full(n, cfg.E_thr)
        self.cong = CongestionState.new(n, min(max(cfg.T_t / cfg.T_period, cfg.rho_min), cfg.rho_max), cfg.N_cbr_avg)
        self.queue = AccessQueue(n)
        self.channel = ChannelState(self.subcarrier, cfg.delay_slots, log=event_log)
        self.adj = np.zeros((n, n), dtype=bool)
        self.divergence = np.full(n, np.inf)
        self.transmitted = np.zeros(n, dtype=bool)
        self.last_outcome = None
        self.warmup_slots = int(round(cfg.warmup / cfg.T_t))
        self.acc = Accumulators(grants={int(v): [] for v in trace.ids})
        self._nacc_cache: dict = {}

    # ----- helpers -----
    def believed_neighbors(self) -> np.ndarray:
        """``[i, j]``: i tracks j and places it within range of its own estimate."""
        has = self.track >= 0
        pos = self.records.mean[np.where(has, self.track, 0), :2]
        d = np.hypot(pos[..., 0] - self.self_mean[:, None, 0], pos[..., 1] - self.self_mean[:, None, 1])
        return has & (d < self.cfg.r) & self.active[:, None]

    def _ingest(self, t: int) -> None:
        for pkt, receivers in self.channel.due_packets(t):
            rec = int(pkt.payload)
            if not self.records.alive[rec]:
                continue
            rcv = receivers[self.active[receivers]]
            self.new_neighbor[rcv] |= self.track[rcv, pkt.sender] < 0
            self.track[rcv, pkt.sender] = rec
            self.track_slot[rcv, pkt.sender] = t

    def _nacc(self, n_hat: int) -> float:
        if n_hat not in self._nacc_cache:
            c = self.cfg
            self._nacc_cache[n_hat] = nacc_rho(n_hat, c.n_sc, c.P_thr, c.rho_min, c.rho_max, c.rho_grid_points)
        return self._nacc_cache[n_hat]

    # ----- the slot -----
    def step(self) -> bool:
        """Run one slot; returns False once the trace is exhausted."""
        cfg, t = self.cfg, self.slot
        if t >= self.trace.n_slots:
            return False
        n = self.n

        # 1. truth
        present = self.trace.present[t]
        truth = self.trace.states[t]
        left = self.active & ~present
        if left.any():
            self.queue.remove(left)
            self.track[left] = -1
            self.initialised[left] = False
        entered = present & ~self.active
        self.active = present.copy()

        # 2. graph
        xy = np.where(present[:, None], truth[:, :2], np.nan)
        with np.errstate(invalid="ignore"):
            self.adj = adjacency_matrix(xy, cfg.r)

        # 3. deliveries
        self._ingest(t)

        # 4. track timeout
        stale = (self.track >= 0) & ((t - self.track_slot) > cfg.track_timeout_slots + 1e-9)
        self.track[stale] = -1

        # 5. filters
        noise = self.rng_noise.standard_normal((n, STATE_DIM)) * self.r_sqrt
        obs = truth + noise
        obs[:, 2] = wrap_angle(obs[:, 2])
        run = np.flatnonzero(present & self.initialised)
        if len(run):
            m, P, ok = kernels.ukf_predict_batch(self.self_mean[run], self.self_cov[run], cfg.T_t, cfg.q, self.weights)
            m2, P2, ok2 = kernels.ukf_update_batch(m, P, obs[run], self.r_diag, self.weights)
            good = ok & ok2
            self.self_mean[run[good]], self.self_cov[run[good]] = m2[good], P2[good]
            self.initialised[run[~good]] = False
        fresh = np.flatnonzero(present & ~self.initialised)
        if len(fresh):
            self.self_mean[fresh] = obs[fresh]
            self.self_cov[fresh] = np.diag(self.r_diag)
            self.initialised[fresh] = True
        dropped = self.records.predict(cfg.T_t, cfg.q, self.weights)
        if len(dropped):
            self.track[np.isin(self.track, dropped)] = -1
            self.latest[np.isin(self.latest, dropped)] = -1

        # 6. congestion control
        if cfg.congestion != "none" and t % cfg.N_cbr_update == 0:
            if cfg.congestion == "CSCC":
                self.cong.rho = limeric_step(self.cong.rho, self.cong.cbr_vehicle, self.limeric)
            else:
                counts = self.believed_neighbors().sum(axis=1)
                self.cong.rho = np.array([self._nacc(int(c)) for c in counts])
            if cfg.strategy == "PB":
                self.T_period = apply_congestion(self.cong.rho, "PB", cfg.T_t)
            else:
                self.E_thr = apply_congestion(self.cong.rho, "ETB", cfg.T_t, self.emap)

        # 7. decisions
        if entered.any():
            # random initial phase so periodic senders are not synchronised
            phase = self.rng_strategy.random(n)
            self.T_last[entered] = (phase * np.minimum(self.T_period, cfg.T_max))[entered]
            self.new_neighbor[entered] = False
        lat = self.latest
        has_shadow = lat >= 0
        sp = self.records.mean[np.where(has_shadow, lat, 0), :2]
        self.divergence = np.where(has_shadow, np.hypot(sp[:, 0] - self.self_mean[:, 0], sp[:, 1] - self.self_mean[:, 1]),
                                   np.inf)
        tx, T_new = decide_batch(cfg.strategy, self.T_last, self.new_neighbor, cfg.T_t, T_period=self.T_period,
                                 E_thr=self.E_thr, d_div=self.divergence, T_max=cfg.T_max)
        tx &= present
        self.T_last = np.where(present, T_new, self.T_last)
        self.new_neighbor[:] = False
        self.transmitted = tx
        senders = np.flatnonzero(tx)
        if len(senders):
            self.latest[senders] = self.records.add(senders, self.self_mean[senders], self.self_cov[senders])
            self.queue.add(senders)

        # 8. channel
        out = resolve_slot(self.adj, self.subcarrier, self.queue, self.rng_channel, cfg.n_sc, present)
        self.last_outcome = out
        self.channel.send(t, out, self.latest)
        if cfg.delay_slots == 0:
            self._ingest(t)
        update_cbr(self.cong, out.busy & present, cfg.N_cbr_update)

        # 9. metrics
        if t >= self.warmup_slots:
            self._snapshot(t, present, truth, out)

        if t % 10 == 0:
            refs = [self.track.ravel(), self.latest]
            refs += [np.array([int(p.payload)]) for p, _ in ((f.packet, f.receivers) for f in self.channel.in_flight)]
            self.records.keep_only(np.concatenate(refs))
        self.slot += 1
        return True

    def _snapshot(self, t, present, truth, out) -> None:
        acc = self.acc
        ids = self.trace.ids
        for a in np.flatnonzero(out.granted):
            acc.grants[int(ids[a])].append(t)
        acc.n_collisions += out.n_collisions
        P = np.flatnonzero(present)
        if len(P) == 0:
            return
        bel = self.believed_neighbors()
        valid = bel & present[None, :]
        trk = np.where(valid, self.track, 0)
        est = self.records.mean[trk, :2]
        e = np.hypot(est[..., 0] - truth[None, :, 0], est[..., 1] - truth[None, :, 1])
        dtrue = np.hypot(truth[:, None, 0] - truth[None, :, 0], truth[:, None, 1] - truth[None, :, 1])
        with np.errstate(invalid="ignore"):
            lam = richards_weight(np.where(valid, dtrue, 0.0), self.richards)
        e_self = np.hypot(self.self_mean[:, 0] - truth[:, 0], self.self_mean[:, 1] - truth[:, 1])
        num = self.lam0 * e_self + np.where(valid, lam * e, 0.0).sum(axis=1)
        F = num / (1.0 + valid.sum(axis=1))
        acc.errors.append(F[P])
        acc.series.append(float(F[P].mean()))
        true_nb = self.adj
        union = (true_nb | bel)[P]
        usz = union.sum(axis=1)
        keep = usz > 0
        acc.miss.append(((true_nb & ~bel)[P].sum(axis=1)[keep] / usz[keep]))
        acc.false.append(((bel & ~true_nb)[P].sum(axis=1)[keep] / usz[keep]))
        acc.rho.append(float(self.cong.rho[P].mean()))
        acc.cbr.append(float(self.cong.cbr_local[P].mean()))
        acc.metric_slots += 1

    def metrics(self) -> RunMetrics:
        acc = self.acc
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)
        duration = acc.metric_slots * self.cfg.T_t
        return aggregate(cat(acc.errors), cat(acc.miss), cat(acc.false), acc.n_collisions, self.n, duration,
                         acc.grants, self.cfg.T_t, series=np.asarray(acc.series),
                         mean_rho=float(np.mean(acc.rho)) if acc.rho else math.nan,
                         mean_cbr=float(np.mean(acc.cbr)) if acc.cbr else math.nan,
                         first_slot=self.warmup_slots)


def run_slot(w: World) -> World:
    w.step()
    return w


def run_sim(cfg: SimConfig, trace: Optional[TraceSet] = None, seed=None, emap: Optional[ErrorPeriodMap] = None,
            event_log=None) -> RunMetrics:
    """One complete run; deterministic in ``(cfg, trace, seed)``."""
    seed = cfg.seed if seed is None else seed
    emap = load_map(cfg, emap)
    check_config(cfg, emap)
    if trace is None:
        trace = make_trace(cfg, seed)
    w = World(cfg, trace, seed, emap, event_log)
    while w.step():
        pass
    return w.metrics()


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    E_grid: np.ndarray
    cdfs: np.ndarray
    mean_error: np.ndarray
    counts: np.ndarray

    def build_map(self, T_t: float) -> ErrorPeriodMap:
        return build_error_period_map(self.cdfs, self.E_grid, T_t)


def calibrate_error_distribution(cfg: SimConfig, trace: Optional[TraceSet] = None, seed=None,
                                 min_samples: int = 100) -> Calibration:
    """Empirical ``P(e_h <= E)`` of the predict-only filter, ``h = 1..H_max``.

    Each vehicle runs its self filter on the trace; every
    ``calib_reset_every`` slots a predict-only copy is started from the self
    estimate and its position divergence from the self estimate is recorded
    for the following ``H_max`` slots. This is the quantity compared with the
    threshold in ETB.
    """
    seed = cfg.seed if seed is None else seed
    if trace is None:
        trace = make_trace(cfg, seed)
    n, H = trace.n_vehicles, cfg.H_max
    rng = np.random.default_rng(streams(seed).noise)
    weights = UKFParams.from_config(cfg).weights()
    r_diag = cfg.R_diag
    r_sqrt = np.sqrt(r_diag)
    mean = np.zeros((n, STATE_DIM))
    cov = np.zeros((n, STATE_DIM, STATE_DIM))
    init = np.zeros(n, dtype=bool)
    age = np.zeros(n, dtype=np.int64)
    sh_mean = np.zeros((0, STATE_DIM))
    sh_cov = np.zeros((0, STATE_DIM, STATE_DIM))
    sh_owner = np.zeros(0, dtype=np.int64)
    sh_h = np.zeros(0, dtype=np.int64)
    samples = [[] for _ in range(H)]
    warm = int(round(cfg.warmup / cfg.T_t))
    for t in range(trace.n_slots):
        present = trace.present[t]
        init &= present
        obs = trace.states[t] + rng.standard_normal((n, STATE_DIM)) * r_sqrt
        obs[:, 2] = wrap_angle(obs[:, 2])
        run = np.flatnonzero(present & init)
        if len(run):
            m, P, ok = kernels.ukf_predict_batch(mean[run], cov[run], cfg.T_t, cfg.q, weights)
            m, P, ok2 = kernels.ukf_update_batch(m, P, obs[run], r_diag, weights)
            good = ok & ok2
            mean[run[good]], cov[run[good]] = m[good], P[good]
            init[run[~good]] = False
        fresh = np.flatnonzero(present & ~init)
        mean[fresh], cov[fresh] = obs[fresh], np.diag(r_diag)
        init[fresh] = True
        age[fresh] = 0
        if len(sh_h):
            sh_mean, sh_cov, ok = kernels.ukf_predict_batch(sh_mean, sh_cov, cfg.T_t, cfg.q, weights)
            sh_h = sh_h + 1
            alive = ok & present[sh_owner]
            d = np.hypot(sh_mean[:, 0] - mean[sh_owner, 0], sh_mean[:, 1] - mean[sh_owner, 1])
            for h in np.unique(sh_h[alive]):
                samples[h - 1].append(d[alive & (sh_h == h)])
            keep = alive & (sh_h < H)
            sh_mean, sh_cov, sh_owner, sh_h = sh_mean[keep], sh_cov[keep], sh_owner[keep], sh_h[keep]
        start = np.flatnonzero(present & (age % cfg.calib_reset_every == 0)) if t >= warm else np.zeros(0, int)
        if len(start):
            sh_mean = np.concatenate([sh_mean, mean[start]])
            sh_cov = np.concatenate([sh_cov, cov[start]])
            sh_owner = np.concatenate([sh_owner, start])
            sh_h = np.concatenate([sh_h, np.zeros(len(start), dtype=np.int64)])
        age[present] += 1
    per_h = [np.sort(np.concatenate(s)) if s else np.zeros(0) for s in samples]
    counts = np.array([len(s) for s in per_h])
    step = 1.0
    if len(counts) and counts.min() < min_samples:
        warnings.warn(f"only {counts.min()} samples for some horizon; using 2 m error bins", RuntimeWarning,
                      stacklevel=2)
        step = 2.0
    E_grid = np.arange(0.0, cfg.E_max + step / 2, step)
    cdfs = np.array([np.searchsorted(s, E_grid, side="right") / len(s) if len(s) else np.ones(len(E_grid))
                     for s in per_h])
    mean_err = np.array([s.mean() if len(s) else math.nan for s in per_h])
    return Calibration(E_grid, cdfs, mean_err, counts)


# ---------------------------------------------------------------------------
# Monte Carlo campaigns
# ---------------------------------------------------------------------------

def _point_stats(runs: Sequence[RunMetrics]) -> dict:
    out = {}
    for key in METRIC_KEYS:
        vals = np.array([getattr(r, key) for r in runs], dtype=float)
        fin = vals[np.isfinite(vals)]
        if len(fin) == 0:
            out[key] = {"mean": math.nan, "std": math.nan, "sem": math.nan, "p05": math.nan, "p50": math.nan,
                        "p95": math.nan, "n": 0}
            continue
        std = float(fin.std(ddof=1)) if len(fin) > 1 else 0.0
        out[key] = {"mean": float(fin.mean()), "std": std, "sem": std / math.sqrt(len(fin)),
                    "p05": nearest_rank(fin, 5), "p50": nearest_rank(fin, 50), "p95": nearest_rank(fin, 95),
                    "n": int(len(fin))}
    return out


@dataclass
class CampaignSummary:
    points: list
    runs: list
    base: SimConfig

    @property
    def stats(self) -> list:
        return [_point_stats(r) for r in self.runs]

    def mean(self, point: int, key: str) -> float:
        return self.stats[point][key]["mean"]

    def to_dict(self) -> dict:
        return {"schema": SUMMARY_SCHEMA, "n_runs": len(self.runs[0]) if self.runs else 0,
                "points": [{"coords": p, "stats": s} for p, s in zip(self.points, self.stats)]}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(self.to_json())
        for coords, runs in zip(self.points, self.runs):
            key = point_key(coords)
            with open(out / f"runs_{key}.csv", "w") as fh:
                fh.write("# dynmap campaign-runs v1\n")
                fh.write("run," + ",".join(METRIC_KEYS) + "\n")
                for k, r in enumerate(runs):
                    fh.write(f"{k}," + ",".join(repr(float(getattr(r, m))) for m in METRIC_KEYS) + "\n")
        with open(out / "points.csv", "w") as fh:
            fh.write("# dynmap campaign-points v1\n")
            keys = sorted({k for p in self.points for k in p})
            cols = [f"{m}_{s}" for m in METRIC_KEYS for s in ("mean", "sem")]
            fh.write(",".join(keys + cols) + "\n")
            for coords, st in zip(self.points, self.stats):
                vals = [str(coords.get(k, "")) for k in keys]
                vals += [repr(st[m][s]) for m in METRIC_KEYS for s in ("mean", "sem")]
                fh.write(",".join(vals) + "\n")
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def point_key(coords: dict) -> str:
    return "_".join(f"{k}-{v}" for k, v in sorted(coords.items())) or "base"


def _run_all_points(args):
    base, points, run, emap = args
    seed = run_seed(base.seed, run)
    first = base.replace(**points[0]) if points else base
    trace = make_trace(first, seed)
    out = []
    for p in points:
        cfg = base.replace(**p).validate()
        tr = trace if not _scenario_changed(base, p) else make_trace(cfg, seed)
        out.append(run_sim(cfg, tr, seed, emap))
    return out


_SCENARIO_KEYS = {"n_vehicles", "area_km2", "v_max", "T_sim", "T_t", "trace"}


def _scenario_changed(base: SimConfig, p: dict) -> bool:
    return any(k in _SCENARIO_KEYS for k in p)


def monte_carlo(cfg: SimConfig, points: Sequence[dict], n_runs: Optional[int] = None, workers: int = 1,
                emap: Optional[ErrorPeriodMap] = None) -> CampaignSummary:
    """``n_runs`` paired runs per sweep point.

    Run ``k`` of every point shares the same seed, hence the same trace and
    sensor noise, so differences between points are paired comparisons.
    """
    points = [dict(p) for p in points]
    if not points:
        raise ConfigError("sweep needs at least one point")
    n_runs = cfg.N_sim if n_runs is None else n_runs
    emap = load_map(cfg, emap)
    for p in points:
        check_config(cfg.replace(**p), emap)
    tasks = [(cfg, points, k, emap) for k in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_run = list(ex.map(_run_all_points, tasks))
    else:
        per_run = [_run_all_points(t) for t in tasks]
    runs = [[per_run[k][i] for k in range(n_runs)] for i in range(len(points))]
    return CampaignSummary(points, runs, cfg)


def default_workers() -> int:
    return max(1, min(os.cpu_count() or 1, 8))
