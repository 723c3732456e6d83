"""Congestion control: channel-sensing LIMERIC (CSCC), the neighbour-aware
analytic collision model (NACC) and the error-threshold to period map.

Rates are per-slot access probabilities ``rho``; conversion to seconds always
goes through the slot length ``T_t``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import binom

from .config import ConfigError

HIDDEN_FRACTION = 3.0 * math.sqrt(3.0) / (4.0 * math.pi)
MAP_SCHEMA = "# dynmap error-period-map v1"


class ConvergenceError(ArithmeticError):
    """Power iteration for the steady state did not converge."""


# ---------------------------------------------------------------------------
# channel busy ratio and LIMERIC
# ---------------------------------------------------------------------------

@dataclass
class CongestionState:
    """Per-vehicle congestion bookkeeping, stored as arrays over vehicles.

    ``history`` is a ring buffer of busy flags, one column per slot.
    Updates mutate the arrays in place.
    """

    rho: np.ndarray
    cbr_local: np.ndarray
    cbr_vehicle: np.ndarray
    history: np.ndarray
    filled: int = 0
    cursor: int = 0
    slots: int = 0

    @classmethod
    def new(cls, n: int, rho0: float, n_avg: int = 100) -> "CongestionState":
        return cls(np.full(n, float(rho0)), np.zeros(n), np.zeros(n), np.zeros((n, n_avg), dtype=bool))


def smooth_cbr(cbr_vehicle, cbr_local):
    """Exponential smoothing with weight one half."""
    return 0.5 * np.asarray(cbr_vehicle) + 0.5 * np.asarray(cbr_local)


def update_cbr(cs: CongestionState, busy, n_update: int = 10) -> CongestionState:
    """Record one slot of busy flags; smooth ``cbr_vehicle`` every ``n_update`` slots."""
    n_avg = cs.history.shape[1]
    cs.history[:, cs.cursor] = busy
    cs.cursor = (cs.cursor + 1) % n_avg
    cs.filled = min(cs.filled + 1, n_avg)
    cs.slots += 1
    cs.cbr_local = cs.history.sum(axis=1) / cs.filled
    if cs.slots % n_update == 0:
        cs.cbr_vehicle = smooth_cbr(cs.cbr_vehicle, cs.cbr_local)
    return cs


@dataclass(frozen=True)
class LimericParams:
    alpha: float = 0.1
    beta: float = 0.245
    cbr_target: float = 0.68
    delta_min: float = -1.0
    delta_max: float = 1.0
    rho_min: float = 0.0006
    rho_max: float = 1.0

    @classmethod
    def from_config(cls, cfg) -> "LimericParams":
        return cls(cfg.alpha, cfg.beta_eff, cfg.CBR_target, cfg.delta_min, cfg.delta_max, cfg.rho_min, cfg.rho_max)


def limeric_step(rho, cbr_vehicle, p: LimericParams):
    """One linear rate update towards the target busy ratio."""
    err = p.cbr_target - np.asarray(cbr_vehicle, dtype=float)
    raw = p.beta * err
    delta = np.where(err > 0, np.minimum(raw, p.delta_max), np.maximum(raw, p.delta_min))
    out = np.clip((1.0 - p.alpha) * np.asarray(rho, dtype=float) + delta, p.rho_min, p.rho_max)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# access-list Markov chain
# ---------------------------------------------------------------------------

def arrival_pmf(a: int, i: int, rho: float, N: int) -> float:
    """Probability of ``a`` new arrivals when ``i`` of ``N`` vehicles are queued."""
    if not 0 <= i <= N:
        raise ValueError("need 0 <= i <= N")
    if a < 0 or a > N - i:
        return 0.0
    return float(binom.pmf(a, N - i, rho))


@dataclass(frozen=True)
class MarkovModel:
    N: int
    rho: float
    T: np.ndarray


def transition_matrix(rho: float, N: int) -> MarkovModel:
    """Transition matrix of the access-list size over states ``0..N-1``.

    From ``i > 0`` one member leaves and ``a`` arrive, so ``j = i + a - 1``;
    from the empty list ``j = max(a - 1, 0)``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    T = np.zeros((N, N))
    for i in range(N):
        pmf = binom.pmf(np.arange(N - i + 1), N - i, rho)
        if i == 0:
            T[0, 0] = pmf[0] + pmf[1]
            T[0, 1:] = pmf[2:N + 1]
        else:
            T[i, i - 1:] = pmf[:N - i + 1]
    return MarkovModel(N, float(rho), T)


def steady_state(m: MarkovModel, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary distribution; direct solve for ``N <= 64``, power iteration above."""
    T, N = m.T, m.N
    if N == 1:
        return np.ones(1)
    if N <= 64:
        A = T.T - np.eye(N)
        A[-1] = 1.0
        b = np.zeros(N)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()
    pi = np.full(N, 1.0 / N)
    for it in range(max_iter):
        nxt = pi @ T
        if np.abs(nxt - pi).sum() < tol:
            return nxt / nxt.sum()
        pi = nxt
    raise ConvergenceError(f"power iteration did not converge for N={N}, rho={m.rho} "
                           f"(last L1 change {np.abs(nxt - pi).sum():.3g})")


@lru_cache(maxsize=4096)
def _pi0(rho: float, N: int) -> float:
    return float(steady_state(transition_matrix(rho, N))[0])


def _chain_size(n_ht: float) -> int:
    # tolerance guards ceil() against float noise such as 3.0000000000000004
    return max(1, math.ceil(n_ht - 1e-9))


def p_coll(rho, n_ht: float):
    """Hidden-terminal collision probability for ``n_ht`` hidden contenders.

    The chain needs an integer population, so the empty-list probability is
    taken at ``ceil(n_ht)`` while the idle factor keeps the real exponent.
    """
    if n_ht < 0:
        raise ValueError("n_ht must be non-negative")
    rhos = np.atleast_1d(np.asarray(rho, dtype=float))
    if n_ht == 0:
        out = np.zeros_like(rhos)
    else:
        N = _chain_size(n_ht)
        pi0 = np.array([_pi0(float(r), N) for r in rhos])
        out = 1.0 - pi0 * (1.0 - rhos) ** n_ht
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if np.ndim(rho) == 0 else out


def estimate_hidden(n_hat: float, n_sc: int) -> float:
    """Expected same-subcarrier vehicles in a receiver's hidden region."""
    if n_hat < 0 or n_sc < 1:
        raise ValueError("need n_hat >= 0 and n_sc >= 1")
    return (n_hat + 1.0) / n_sc * HIDDEN_FRACTION


def phi(d, r: float):
    """Overlap area of two radius-``r`` discs whose centres are ``d`` apart.

    Distances beyond ``2r`` have no overlap and return 0.
    """
    d = np.asarray(d, dtype=float)
    x = np.clip(d / (2.0 * r), 0.0, 1.0)
    out = 2.0 * r * (r * np.arccos(x) - 0.5 * d * np.sqrt(1.0 - x * x))
    out = np.where(d >= 2.0 * r, 0.0, out)
    return float(out) if out.ndim == 0 else out


def mean_phi(r: float) -> float:
    """Closed-form mean overlap for a neighbour uniform in the disc."""
    return r * r * (math.pi - 3.0 * math.sqrt(3.0) / 4.0)


def rho_grid(rho_min: float, rho_max: float, n: int = 512) -> np.ndarray:
    return np.geomspace(rho_min, rho_max, n)


@lru_cache(maxsize=256)
def _pcoll_table(n_ht: float, rho_min: float, rho_max: float, n: int) -> np.ndarray:
    return p_coll(rho_grid(rho_min, rho_max, n), n_ht)


def nacc_rho(n_hat: float, n_sc: int, P_thr: float, rho_min: float = 0.0006, rho_max: float = 1.0,
             n_grid: int = 512) -> float:
    """Access probability whose predicted collision rate is closest to ``P_thr``.

    Ties resolve to the smaller rate.
    """
    if not 0.0 < P_thr < 1.0:
        raise ValueError("P_thr must lie in (0, 1)")
    n_ht = estimate_hidden(n_hat, n_sc)
    table = _pcoll_table(round(n_ht, 12), rho_min, rho_max, n_grid)
    k = int(np.argmin(np.abs(table - P_thr)))
    return float(rho_grid(rho_min, rho_max, n_grid)[k])


# ---------------------------------------------------------------------------
# error threshold <-> period map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorPeriodMap:
    """Monotone table from error threshold (m) to expected period (s).

    ``T_raw`` is the truncated series itself; ``T_period`` is floored at one
    slot, the shortest period a vehicle can realise.
    """

    E_grid: np.ndarray
    T_period: np.ndarray
    T_raw: np.ndarray
    T_t: float
    H_max: int
    cdfs: Optional[np.ndarray] = field(default=None, compare=False)

    def __call__(self, E_thr):
        return self.lookup(E_thr)

    def lookup(self, E_thr):
        out = np.interp(E_thr, self.E_grid, self.T_period)
        return float(out) if np.ndim(out) == 0 else out

    def inverse(self, T):
        """Smallest threshold whose period reaches ``T`` (linear within a grid cell)."""
        Ts = np.atleast_1d(np.asarray(T, dtype=float))
        tp, eg = self.T_period, self.E_grid
        k = np.searchsorted(tp, Ts, side="left")
        out = np.empty_like(Ts)
        lo = k == 0
        hi = k >= len(tp)
        out[lo] = eg[0]
        out[hi] = eg[int(np.searchsorted(tp, tp[-1], side="left"))]
        mid = ~(lo | hi)
        km = k[mid]
        frac = (Ts[mid] - tp[km - 1]) / (tp[km] - tp[km - 1])
        out[mid] = eg[km - 1] + frac * (eg[km] - eg[km - 1])
        return float(out[0]) if np.ndim(T) == 0 else out

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"{MAP_SCHEMA} T_t={self.T_t!r} H_max={self.H_max}\n")
            w = csv.writer(fh)
            w.writerow(["E_thr_m", "T_period_s", "T_raw_s"])
            for e, t, tr in zip(self.E_grid, self.T_period, self.T_raw):
                w.writerow([repr(float(e)), repr(float(t)), repr(float(tr))])

    @classmethod
    def load_csv(cls, path) -> "ErrorPeriodMap":
        p = Path(path)
        try:
            lines = p.read_text().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read calibration map {p}: {exc}") from None
        if not lines or not lines[0].startswith(MAP_SCHEMA):
            raise ConfigError(f"{p}: not an error-period map (missing '{MAP_SCHEMA}' header)")
        meta = dict(tok.split("=", 1) for tok in lines[0][len(MAP_SCHEMA):].split())
        rows = list(csv.reader(lines[2:]))
        arr = np.array([[float(v) for v in row] for row in rows if row])
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], float(meta["T_t"]), int(meta["H_max"]))


def build_error_period_map(cdfs, E_grid, T_t: float) -> ErrorPeriodMap:
    """Expected slots until the error first exceeds each threshold.

    ``cdfs[h-1, k]`` is ``P(e_h <= E_grid[k])`` for horizons ``h = 1..H_max``.
    Rows that are not monotone in ``E`` are corrected by a running maximum.
    """
    cdfs = np.clip(np.asarray(cdfs, dtype=float), 0.0, 1.0)
    E_grid = np.asarray(E_grid, dtype=float)
    if cdfs.ndim != 2 or cdfs.shape[1] != len(E_grid):
        raise ValueError("cdfs must have shape (H_max, len(E_grid))")
    fixed = np.maximum.accumulate(cdfs, axis=1)
    if np.any(fixed - cdfs > 1e-12):
        warnings.warn("non-monotone empirical CDF corrected", RuntimeWarning, stacklevel=2)
    survival = np.cumprod(fixed, axis=0)
    T_raw = T_t * survival.sum(axis=0)
    return ErrorPeriodMap(E_grid, np.maximum(T_raw, T_t), T_raw, float(T_t), int(cdfs.shape[0]), fixed)


def truncation_bound(p: float, H_max: int, T_t: float) -> float:
    """Tail of the geometric series dropped by stopping at ``H_max``."""
    return T_t * p ** (H_max + 1) / (1.0 - p)


def apply_congestion(rho, strategy: str, T_t: float, emap: Optional[ErrorPeriodMap] = None):
    """Translate an access probability into the strategy's own parameter.

    PB gets a period ``T_t / rho`` in seconds; ETB gets the threshold whose
    calibrated period equals that value.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("rho must be positive")
    period = T_t / rho
    if strategy == "PB":
        return float(period) if period.ndim == 0 else period
    if strategy == "ETB":
        if emap is None:
            raise ConfigError("ETB with congestion control needs a calibration map (calibration_map)")
        return emap.inverse(period)
    raise ConfigError(f"unknown strategy {strategy!r}")
