"""CTRA motion model, unscented Kalman filter and per-target track bookkeeping.

The functions here are the reference (one estimate at a time) implementation.
The simulator runs the same maths in batch through :mod:`dynmap.kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import H, STATE_DIM, VehicleState, wrap_angle

EPS_OMEGA = 1e-4


class FilterDivergenceError(RuntimeError):
    """Covariance lost positive semi-definiteness; the track must be reset."""


# ---------------------------------------------------------------------------
# CTRA transition
# ---------------------------------------------------------------------------

def ctra_arrays(states: np.ndarray, dt: float, eps: float = EPS_OMEGA) -> np.ndarray:
    """Vectorised CTRA transition for an ``(..., 6)`` array of states.

    Speed follows ``u + a*t`` clamped at zero; a stopped vehicle neither moves
    nor turns, so position and heading only integrate over the interval in
    which the speed is positive.
    """
    s = np.asarray(states, dtype=float)
    x, y, h, u, a, w = (s[..., k] for k in range(6))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stop = np.where(a != 0.0, -u / np.where(a != 0.0, a, 1.0), np.inf)
    t0 = np.where((a > 0) & (u < 0), np.minimum(t_stop, dt), 0.0)
    t1 = np.where(a < 0, np.where(u > 0, np.minimum(t_stop, dt), 0.0), np.where((a == 0) & (u <= 0), 0.0, dt))
    T = np.maximum(t1 - t0, 0.0)
    v0 = np.where(t0 > 0, 0.0, u)

    turning = np.abs(w) >= eps
    ws = np.where(turning, w, 1.0)
    h1 = h + w * T
    sh, ch = np.sin(h), np.cos(h)
    sh1, ch1 = np.sin(h1), np.cos(h1)
    vT = v0 + a * T
    dx_turn = (vT * ws * sh1 + a * ch1 - v0 * ws * sh - a * ch) / (ws * ws)
    dy_turn = (-vT * ws * ch1 + a * sh1 + v0 * ws * ch - a * sh) / (ws * ws)

    i0 = v0 * T + 0.5 * a * T**2
    i1 = 0.5 * v0 * T**2 + a * T**3 / 3.0
    i2 = v0 * T**3 / 3.0 + 0.25 * a * T**4
    dx_lin = ch * i0 - w * sh * i1 - 0.5 * w * w * ch * i2
    dy_lin = sh * i0 + w * ch * i1 - 0.5 * w * w * sh * i2

    moving = T > 0
    out = np.array(s, copy=True)
    out[..., 0] = x + np.where(moving, np.where(turning, dx_turn, dx_lin), 0.0)
    out[..., 1] = y + np.where(moving, np.where(turning, dy_turn, dy_lin), 0.0)
    out[..., 2] = wrap_angle(h1)
    out[..., 3] = np.maximum(u + a * dt, 0.0)
    return out


def ctra_predict(s, dt: float, eps: float = EPS_OMEGA) -> VehicleState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return VehicleState.from_array(ctra_arrays(np.asarray(s, dtype=float), dt, eps))


def measure(s) -> np.ndarray:
    """Measurement function: the sensors observe the full state."""
    return np.asarray(s, dtype=float).copy()


def noisy_observation(s, R: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    o = measure(s) + rng.multivariate_normal(np.zeros(STATE_DIM), R)
    o[H] = wrap_angle(o[H])
    return o


# ---------------------------------------------------------------------------
# filter types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateEstimate:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def state(self) -> VehicleState:
        return VehicleState.from_array(self.mean)

    def copy(self) -> "StateEstimate":
        return StateEstimate(self.mean.copy(), self.cov.copy())


@dataclass(frozen=True)
class NoiseModel:
    q: float
    R: np.ndarray

    @property
    def Q(self) -> np.ndarray:
        return self.q * np.eye(STATE_DIM)

    @classmethod
    def from_config(cls, cfg) -> "NoiseModel":
        return cls(cfg.q, np.diag(cfg.R_diag))


@dataclass(frozen=True)
class UKFParams:
    """Scaled unscented transform parameters.

    With ``alpha=1, kappa=0`` every weight is non-negative, so propagated
    covariances stay PSD even when heading uncertainty grows large.
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0

    def weights(self, n: int = STATE_DIM):
        lam = self.alpha**2 * (n + self.kappa) - n
        c = n + lam
        wm = np.full(2 * n + 1, 0.5 / c)
        wc = wm.copy()
        wm[0] = lam / c
        wc[0] = lam / c + 1.0 - self.alpha**2 + self.beta
        return wm, wc, c

    @classmethod
    def from_config(cls, cfg) -> "UKFParams":
        return cls(cfg.ukf_alpha, cfg.ukf_beta, cfg.ukf_kappa)


# ---------------------------------------------------------------------------
# unscented transform
# ---------------------------------------------------------------------------

def matrix_sqrt(P: np.ndarray) -> np.ndarray:
    """A factor ``L`` with ``L @ L.T == P``.

    Cholesky first; PSD matrices with zero eigenvalues use a clipped eigen
    factorisation; anything else gets one jitter retry before giving up.
    """
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(P)
    scale = max(1.0, float(np.max(np.abs(evals))))
    if evals.min() >= -1e-9 * scale:
        return evecs * np.sqrt(np.clip(evals, 0.0, None))
    jitter = 1e-9 * max(1.0, float(np.trace(P)) / len(P))
    try:
        return np.linalg.cholesky(P + jitter * np.eye(len(P)))
    except np.linalg.LinAlgError:
        raise FilterDivergenceError(f"covariance not PSD (min eigenvalue {evals.min():.3g})") from None


def sigma_points(mean, cov, params: UKFParams = UKFParams()):
    """2n+1 scaled sigma points with their mean and covariance weights."""
    mean = np.asarray(mean, dtype=float)
    n = len(mean)
    wm, wc, c = params.weights(n)
    L = matrix_sqrt(np.asarray(cov, dtype=float)) * math.sqrt(c)
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    pts[1:n + 1] = mean + L.T
    pts[n + 1:] = mean - L.T
    return pts, wm, wc


def unscented_moments(points, wm, wc, angle_index: Optional[int] = H):
    """Weighted mean and covariance; ``angle_index`` is averaged on the circle."""
    pts = np.asarray(points, dtype=float)
    d = pts - pts[0]
    if angle_index is not None:
        d[:, angle_index] = wrap_angle(d[:, angle_index])
    mean = pts[0] + wm @ d
    if angle_index is not None:
        da = d[:, angle_index]
        mean[angle_index] = wrap_angle(pts[0, angle_index] + math.atan2(wm @ np.sin(da), wm @ np.cos(da)))
    res = pts - mean
    if angle_index is not None:
        res[:, angle_index] = wrap_angle(res[:, angle_index])
    cov = (wc[:, None] * res).T @ res
    return mean, cov


def _symmetrize(P):
    return 0.5 * (P + P.T)


def unscented_predict(mean, cov, fx: Callable, Q, params: UKFParams = UKFParams(), angle_index: Optional[int] = H):
    pts, wm, wc = sigma_points(mean, cov, params)
    prop = np.array([fx(p) for p in pts])
    m, P = unscented_moments(prop, wm, wc, angle_index)
    return m, _symmetrize(P + Q)


def unscented_update(mean, cov, z, R, params: UKFParams = UKFParams(), hx: Callable = measure,
                     angle_index: Optional[int] = H):
    mean = np.asarray(mean, dtype=float)
    pts, wm, wc = sigma_points(mean, cov, params)
    zs = np.array([hx(p) for p in pts])
    zbar, Pzz = unscented_moments(zs, wm, wc, angle_index)
    Pzz = Pzz + R
    dx = pts - mean
    dz = zs - zbar
    if angle_index is not None:
        dx[:, angle_index] = wrap_angle(dx[:, angle_index])
        dz[:, angle_index] = wrap_angle(dz[:, angle_index])
    Pxz = (wc[:, None] * dx).T @ dz
    innov = np.asarray(z, dtype=float) - zbar
    if angle_index is not None:
        innov[angle_index] = wrap_angle(innov[angle_index])
    for attempt in range(2):
        try:
            L = np.linalg.cholesky(Pzz)
            break
        except np.linalg.LinAlgError:
            if attempt:
                raise FilterDivergenceError("singular innovation covariance") from None
            Pzz = Pzz + 1e-9 * max(1.0, float(np.trace(Pzz)) / len(Pzz)) * np.eye(len(Pzz))
    # K = Pxz Pzz^-1 through the Cholesky factor
    K = np.linalg.solve(L.T, np.linalg.solve(L, Pxz.T)).T
    m = mean + K @ innov
    if angle_index is not None:
        m[angle_index] = wrap_angle(m[angle_index])
    P = _symmetrize(cov - K @ Pzz @ K.T)
    return m, P


# ---------------------------------------------------------------------------
# CTRA-specific filter operations
# ---------------------------------------------------------------------------

def ukf_predict(est: StateEstimate, dt: float, noise: NoiseModel, params: UKFParams = UKFParams()) -> StateEstimate:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    m, P = unscented_predict(est.mean, est.cov, lambda s: ctra_arrays(s, dt), noise.Q, params)
    return StateEstimate(m, P)


def ukf_update(est: StateEstimate, obs, noise: NoiseModel, params: UKFParams = UKFParams()) -> StateEstimate:
    m, P = unscented_update(est.mean, est.cov, obs, noise.R, params)
    return StateEstimate(m, P)


def shadow_reset(current: StateEstimate) -> StateEstimate:
    """Replica of what receivers hold right after a broadcast of ``current``."""
    return current.copy()


def shadow_predict(shadow: StateEstimate, dt: float, noise: NoiseModel, params: UKFParams = UKFParams()) -> StateEstimate:
    return ukf_predict(shadow, dt, noise, params)


# ---------------------------------------------------------------------------
# remote tracks
# ---------------------------------------------------------------------------

@dataclass
class TrackEntry:
    target: int
    estimate: StateEstimate
    last_update_slot: int

    def expired(self, now: int, T_t: float, delta_track: float) -> bool:
        return (now - self.last_update_slot) * T_t > delta_track


def ingest_remote(track: Optional[TrackEntry], estimate: StateEstimate, sender: int, slot: int,
                  fusion: bool = False, params: UKFParams = UKFParams()) -> TrackEntry:
    """Fold a received self-estimate into the receiver's track of ``sender``.

    By default the track is replaced by the received estimate. With
    ``fusion=True`` an existing track is instead updated with the received
    mean as a measurement whose covariance is the received covariance.
    """
    if track is None or not fusion:
        return TrackEntry(sender, estimate.copy(), slot)
    m, P = unscented_update(track.estimate.mean, track.estimate.cov, estimate.mean, estimate.cov, params)
    return TrackEntry(sender, StateEstimate(m, P), slot)


def expire_tracks(tracks: dict, now: int, T_t: float, delta_track: float) -> dict:
    return {k: t for k, t in tracks.items() if not t.expired(now, T_t, delta_track)}
