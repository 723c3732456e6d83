"""Evaluation metrics: weighted positioning error, its 95th percentile,
detection error and hidden-terminal collision rate."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

METRICS_SCHEMA = "dynmap-run-metrics v1"
SERIES_SCHEMA = "# dynmap network-error series v1"


@dataclass(frozen=True)
class RichardsParams:
    A: float = 1.0
    B: float = 0.05
    C: float = 1.0
    D: float = 1.0
    E: float = 0.0
    nu: float = 0.2
    d0: float = 42.0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")

    @classmethod
    def from_config(cls, cfg) -> "RichardsParams":
        return cls(cfg.A_lambda, cfg.B_lambda, cfg.C_lambda, cfg.D_lambda, cfg.E_lambda, cfg.nu_lambda, cfg.d_0)


def richards_weight(d, p: RichardsParams = RichardsParams()):
    """Generalised logistic weight of a target at distance ``d``."""
    d = np.asarray(d, dtype=float)
    with np.errstate(over="ignore"):
        out = p.A + (p.E - p.A) / (p.C + p.D * np.exp(-p.B * (d - p.d0))) ** (1.0 / p.nu)
    return float(out) if out.ndim == 0 else out


def _planar(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def ego_error(ego: int, estimates: Mapping[int, np.ndarray], truth: Mapping[int, np.ndarray],
              p: RichardsParams = RichardsParams()) -> float:
    """Weighted mean position error of ``ego``'s map.

    ``estimates`` holds the ego's own estimate under its id plus one entry per
    tracked target. Targets without ground truth (exited vehicles) are skipped.
    """
    own = truth[ego]
    num = richards_weight(0.0, p) * _planar(estimates[ego], own)
    count = 1
    for j, est in estimates.items():
        if j == ego or j not in truth:
            continue
        num += richards_weight(_planar(own, truth[j]), p) * _planar(est, truth[j])
        count += 1
    return num / count


def network_error(per_ego: Iterable[float]) -> float:
    vals = np.asarray(list(per_ego), dtype=float)
    if len(vals) == 0:
        raise ValueError("need at least one vehicle")
    return float(vals.mean())


def detection_error(true_set, believed_set) -> tuple[int, int]:
    """``(misdetections, false detections)`` for one vehicle and slot."""
    true_set, believed_set = set(true_set), set(believed_set)
    return len(true_set - believed_set), len(believed_set - true_set)


def nearest_rank(samples, q: float) -> float:
    """Nearest-rank percentile: the smallest sample with at least ``q``% at or below it."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if len(x) == 0:
        return math.nan
    k = max(1, math.ceil(q / 100.0 * len(x)))
    return float(x[k - 1])


@dataclass
class RunMetrics:
    mean_error: float
    p95_error: float
    p_miss: float
    p_false: float
    collision_rate: float
    mean_tx_interval: float
    n_transmissions: int = 0
    n_collisions: int = 0
    mean_rho: float = math.nan
    mean_cbr: float = math.nan
    series: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    extra: dict = field(default_factory=dict)

    @property
    def detection_error(self) -> float:
        return self.p_miss + self.p_false

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("series")
        d["detection_error"] = self.detection_error
        return d

    def to_json(self) -> str:
        """JSON aggregates; non-finite values (no transmissions yet) become null."""
        clean = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in self.summary().items()}
        return json.dumps({"schema": METRICS_SCHEMA, **clean}, indent=2, sort_keys=True)

    def write_series_csv(self, path, T_t: float, first_slot: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(SERIES_SCHEMA + "\n")
            w = csv.writer(fh)
            w.writerow(["slot", "time_s", "network_error_m"])
            for k, v in enumerate(self.series):
                s = first_slot + k
                w.writerow([s, repr(s * T_t), repr(float(v))])


def aggregate(errors: np.ndarray, miss_fracs: np.ndarray, false_fracs: np.ndarray, n_collisions: int,
              n_vehicles: int, duration_s: float, grant_slots: Mapping[int, list], T_t: float,
              series: np.ndarray | None = None, **extra) -> RunMetrics:
    """Collapse per-(vehicle, slot) samples into run-level metrics.

    ``errors`` are ego errors pooled over vehicles and slots; ``miss_fracs`` and
    ``false_fracs`` are the per-sample detection fractions (normalised by the
    size of the union of true and believed neighbour sets); ``grant_slots``
    maps each vehicle to the slots in which it was granted the channel.
    """
    errors = np.asarray(errors, dtype=float)
    gaps = [np.diff(np.asarray(s)).mean() * T_t for s in grant_slots.values() if len(s) >= 2]
    n_tx = sum(len(s) for s in grant_slots.values())
    return RunMetrics(
        mean_error=float(errors.mean()) if len(errors) else math.nan,
        p95_error=nearest_rank(errors, 95.0),
        p_miss=float(np.mean(miss_fracs)) if len(miss_fracs) else 0.0,
        p_false=float(np.mean(false_fracs)) if len(false_fracs) else 0.0,
        collision_rate=n_collisions / (n_vehicles * duration_s) if n_vehicles and duration_s > 0 else 0.0,
        mean_tx_interval=float(np.mean(gaps)) if gaps else math.inf,
        n_transmissions=int(n_tx),
        n_collisions=int(n_collisions),
        series=np.zeros(0) if series is None else np.asarray(series, dtype=float),
        **{k: v for k, v in extra.items() if k in ("mean_rho", "mean_cbr")},
        extra={k: v for k, v in extra.items() if k not in ("mean_rho", "mean_cbr")},
    )
