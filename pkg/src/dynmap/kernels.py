"""Batched hot loops: CTRA propagation, UKF predict/update, channel grants,
and a per-vehicle queue simulator.

Each kernel has a compiled loop version (``*_nb``) and a vectorised numpy
version (``*_np``). The public names dispatch on :data:`dynmap._accel.USE_NUMBA`;
both versions stay importable so tests and the benchmark can compare them.
The state layout is fixed to ``(x, y, h, u, a, omega)`` with heading at index 2.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit
from .motion import EPS_OMEGA, FilterDivergenceError, matrix_sqrt
from .model import wrap_angle

N_STATE = 6
N_SIGMA = 2 * N_STATE + 1
_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# compiled scalar helpers
# ---------------------------------------------------------------------------

@njit
def _wrap(h):
    return math.pi - ((math.pi - h) % _TWO_PI)


@njit
def _ctra_into(s, dt, eps, out):
    x, y, h, u, a, w = s[0], s[1], s[2], s[3], s[4], s[5]
    t0 = 0.0
    t1 = dt
    if a > 0.0:
        if u < 0.0:
            t0 = min(-u / a, dt)
    elif a < 0.0:
        t1 = min(-u / a, dt) if u > 0.0 else 0.0
    elif u <= 0.0:
        t1 = 0.0
    T = max(t1 - t0, 0.0)
    v0 = 0.0 if t0 > 0.0 else u
    h1 = h + w * T
    dx = 0.0
    dy = 0.0
    if T > 0.0:
        sh, ch = math.sin(h), math.cos(h)
        if abs(w) >= eps:
            sh1, ch1 = math.sin(h1), math.cos(h1)
            vT = v0 + a * T
            dx = (vT * w * sh1 + a * ch1 - v0 * w * sh - a * ch) / (w * w)
            dy = (-vT * w * ch1 + a * sh1 + v0 * w * ch - a * sh) / (w * w)
        else:
            i0 = v0 * T + 0.5 * a * T * T
            i1 = 0.5 * v0 * T * T + a * T * T * T / 3.0
            i2 = v0 * T * T * T / 3.0 + 0.25 * a * T * T * T * T
            dx = ch * i0 - w * sh * i1 - 0.5 * w * w * ch * i2
            dy = sh * i0 + w * ch * i1 - 0.5 * w * w * sh * i2
    out[0] = x + dx
    out[1] = y + dy
    out[2] = _wrap(h1)
    out[3] = max(u + a * dt, 0.0)
    out[4] = a
    out[5] = w


@njit
def _cholesky(P, L):
    n = P.shape[0]
    for i in range(n):
        for j in range(n):
            L[i, j] = 0.0
    for j in range(n):
        s = P[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            t = P[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / d
    return True


@njit
def _factor(P, L, work):
    """Same policy as ``motion.matrix_sqrt``; returns False on divergence."""
    if _cholesky(P, L):
        return True
    n = P.shape[0]
    evals, evecs = np.linalg.eigh(P)
    scale = 1.0
    emin = evals[0]
    for k in range(n):
        scale = max(scale, abs(evals[k]))
        emin = min(emin, evals[k])
    if emin >= -1e-9 * scale:
        for i in range(n):
            for k in range(n):
                L[i, k] = evecs[i, k] * math.sqrt(max(evals[k], 0.0))
        return True
    tr = 0.0
    for k in range(n):
        tr += P[k, k]
    jitter = 1e-9 * max(1.0, tr / n)
    for i in range(n):
        for k in range(n):
            work[i, k] = P[i, k]
        work[i, i] += jitter
    return _cholesky(work, L)


@njit
def _sigma_into(mean, L, sc, pts):
    n = mean.shape[0]
    for j in range(n):
        pts[0, j] = mean[j]
    for i in range(n):
        for j in range(n):
            pts[1 + i, j] = mean[j] + sc * L[j, i]
            pts[1 + n + i, j] = mean[j] - sc * L[j, i]


@njit
def _moments_into(pts, wm, wc, mean, cov, res):
    n = pts.shape[1]
    k_pts = pts.shape[0]
    for j in range(n):
        acc = 0.0
        for k in range(k_pts):
            d = pts[k, j] - pts[0, j]
            if j == 2:
                d = _wrap(d)
            acc += wm[k] * d
        mean[j] = pts[0, j] + acc
    sa = 0.0
    ca = 0.0
    for k in range(k_pts):
        d = _wrap(pts[k, 2] - pts[0, 2])
        sa += wm[k] * math.sin(d)
        ca += wm[k] * math.cos(d)
    mean[2] = _wrap(pts[0, 2] + math.atan2(sa, ca))
    for k in range(k_pts):
        for j in range(n):
            d = pts[k, j] - mean[j]
            res[k, j] = _wrap(d) if j == 2 else d
    for i in range(n):
        for j in range(i, n):
            acc = 0.0
            for k in range(k_pts):
                acc += wc[k] * res[k, i] * res[k, j]
            cov[i, j] = acc
            cov[j, i] = acc


# ---------------------------------------------------------------------------
# CTRA batch
# ---------------------------------------------------------------------------

@njit
def ctra_batch_nb(states, dt, eps):
    out = np.empty_like(states)
    for k in range(states.shape[0]):
        _ctra_into(states[k], dt, eps, out[k])
    return out


def ctra_batch_np(states, dt, eps=EPS_OMEGA):
    from .motion import ctra_arrays
    return ctra_arrays(states, dt, eps)


# ---------------------------------------------------------------------------
# UKF predict / update batch
# ---------------------------------------------------------------------------

@njit
def ukf_predict_nb(means, covs, dt, q, wm, wc, c, eps):
    m = means.shape[0]
    n = N_STATE
    out_m = means.copy()
    out_P = covs.copy()
    ok = np.ones(m, dtype=np.bool_)
    L = np.empty((n, n))
    work = np.empty((n, n))
    pts = np.empty((2 * n + 1, n))
    prop = np.empty((2 * n + 1, n))
    res = np.empty((2 * n + 1, n))
    sc = math.sqrt(c)
    for k in range(m):
        if not _factor(covs[k], L, work):
            ok[k] = False
            continue
        _sigma_into(means[k], L, sc, pts)
        for i in range(2 * n + 1):
            _ctra_into(pts[i], dt, eps, prop[i])
        _moments_into(prop, wm, wc, out_m[k], out_P[k], res)
        for j in range(n):
            out_P[k, j, j] += q
    return out_m, out_P, ok


@njit
def ukf_update_nb(means, covs, obs, r_diag, wm, wc, c):
    m = means.shape[0]
    n = N_STATE
    out_m = means.copy()
    out_P = covs.copy()
    ok = np.ones(m, dtype=np.bool_)
    L = np.empty((n, n))
    work = np.empty((n, n))
    pts = np.empty((2 * n + 1, n))
    res = np.empty((2 * n + 1, n))
    zbar = np.empty(n)
    Pzz = np.empty((n, n))
    Pxz = np.empty((n, n))
    innov = np.empty(n)
    Y = np.empty((n, n))
    K = np.empty((n, n))
    sc = math.sqrt(c)
    for k in range(m):
        if not _factor(covs[k], L, work):
            ok[k] = False
            continue
        _sigma_into(means[k], L, sc, pts)
        _moments_into(pts, wm, wc, zbar, Pzz, res)
        for j in range(n):
            Pzz[j, j] += r_diag[j]
        # cross covariance; res now holds the measurement residuals
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for s in range(2 * n + 1):
                    dx = pts[s, i] - means[k, i]
                    if i == 2:
                        dx = _wrap(dx)
                    acc += wc[s] * dx * res[s, j]
                Pxz[i, j] = acc
        for j in range(n):
            d = obs[k, j] - zbar[j]
            innov[j] = _wrap(d) if j == 2 else d
        if not _cholesky(Pzz, L):
            tr = 0.0
            for j in range(n):
                tr += Pzz[j, j]
            jitter = 1e-9 * max(1.0, tr / n)
            for j in range(n):
                Pzz[j, j] += jitter
            if not _cholesky(Pzz, L):
                ok[k] = False
                continue
        # K^T = Pzz^-1 Pxz^T via L Y = Pxz^T, L^T K^T = Y
        for col in range(n):
            for i in range(n):
                t = Pxz[col, i]
                for s in range(i):
                    t -= L[i, s] * Y[s, col]
                Y[i, col] = t / L[i, i]
            for i in range(n - 1, -1, -1):
                t = Y[i, col]
                for s in range(i + 1, n):
                    t -= L[s, i] * K[col, s]
                K[col, i] = t / L[i, i]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += K[i, j] * innov[j]
            out_m[k, i] = means[k, i] + acc
        out_m[k, 2] = _wrap(out_m[k, 2])
        # P - K Pzz K^T, symmetrised
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for s in range(n):
                    for t in range(n):
                        acc += K[i, s] * Pzz[s, t] * K[j, t]
                work[i, j] = covs[k, i, j] - acc
        for i in range(n):
            for j in range(n):
                out_P[k, i, j] = 0.5 * (work[i, j] + work[j, i])
    return out_m, out_P, ok


def _factor_batch(covs):
    """Batched square-root factors plus a success mask."""
    try:
        return np.linalg.cholesky(covs), np.ones(len(covs), dtype=bool)
    except np.linalg.LinAlgError:
        pass
    L = np.zeros_like(covs)
    ok = np.ones(len(covs), dtype=bool)
    for k, P in enumerate(covs):
        try:
            L[k] = matrix_sqrt(P)
        except FilterDivergenceError:
            ok[k] = False
    return L, ok


def _sigma_batch(means, L, c):
    S = math.sqrt(c) * np.swapaxes(L, 1, 2)
    return np.concatenate([means[:, None, :], means[:, None, :] + S, means[:, None, :] - S], axis=1)


def _moments_batch(pts, wm, wc):
    d = pts - pts[:, :1]
    d[..., 2] = wrap_angle(d[..., 2])
    mean = pts[:, 0] + np.einsum("k,mkj->mj", wm, d)
    mean[:, 2] = wrap_angle(pts[:, 0, 2] + np.arctan2(np.sin(d[..., 2]) @ wm, np.cos(d[..., 2]) @ wm))
    res = pts - mean[:, None, :]
    res[..., 2] = wrap_angle(res[..., 2])
    cov = np.einsum("k,mki,mkj->mij", wc, res, res)
    return mean, cov, res


def ukf_predict_np(means, covs, dt, q, wm, wc, c, eps=EPS_OMEGA):
    from .motion import ctra_arrays
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    out_m, out_P = means.copy(), covs.copy()
    if len(means) == 0:
        return out_m, out_P, np.ones(0, dtype=bool)
    L, ok = _factor_batch(covs)
    pts = ctra_arrays(_sigma_batch(means[ok], L[ok], c), dt, eps)
    m, P, _ = _moments_batch(pts, wm, wc)
    P = P + q * np.eye(N_STATE)
    out_m[ok], out_P[ok] = m, P
    return out_m, out_P, ok


def ukf_update_np(means, covs, obs, r_diag, wm, wc, c):
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    out_m, out_P = means.copy(), covs.copy()
    if len(means) == 0:
        return out_m, out_P, np.ones(0, dtype=bool)
    L, ok = _factor_batch(covs)
    idx = np.nonzero(ok)[0]
    mu = means[idx]
    pts = _sigma_batch(mu, L[idx], c)
    zbar, Pzz, dz = _moments_batch(pts, wm, wc)
    Pzz = Pzz + np.diag(r_diag)
    dx = pts - mu[:, None, :]
    dx[..., 2] = wrap_angle(dx[..., 2])
    Pxz = np.einsum("k,mki,mkj->mij", wc, dx, dz)
    innov = np.asarray(obs, dtype=float)[idx] - zbar
    innov[:, 2] = wrap_angle(innov[:, 2])
    good = np.ones(len(idx), dtype=bool)
    try:
        Lz = np.linalg.cholesky(Pzz)
    except np.linalg.LinAlgError:
        Lz = np.zeros_like(Pzz)
        for k in range(len(idx)):
            for attempt in range(2):
                try:
                    Lz[k] = np.linalg.cholesky(Pzz[k])
                    break
                except np.linalg.LinAlgError:
                    if attempt:
                        good[k] = False
                    else:
                        Pzz[k] = Pzz[k] + 1e-9 * max(1.0, np.trace(Pzz[k]) / N_STATE) * np.eye(N_STATE)
    Lz[~good] = np.eye(N_STATE)
    Y = np.linalg.solve(Lz, np.swapaxes(Pxz, 1, 2))
    K = np.swapaxes(np.linalg.solve(np.swapaxes(Lz, 1, 2), Y), 1, 2)
    m = mu + np.einsum("mij,mj->mi", K, innov)
    m[:, 2] = wrap_angle(m[:, 2])
    P = covs[idx] - K @ Pzz @ np.swapaxes(K, 1, 2)
    P = 0.5 * (P + np.swapaxes(P, 1, 2))
    ok[idx[~good]] = False
    keep = idx[good]
    out_m[keep], out_P[keep] = m[good], P[good]
    return out_m, out_P, ok


# ---------------------------------------------------------------------------
# channel grants
# ---------------------------------------------------------------------------

@njit
def grant_nb(order, subcarrier, adj):
    n = adj.shape[0]
    granted = np.zeros(n, dtype=np.bool_)
    glist = np.empty(order.shape[0], dtype=np.int64)
    ng = 0
    for t in range(order.shape[0]):
        v = order[t]
        free = True
        for k in range(ng):
            g = glist[k]
            if subcarrier[g] == subcarrier[v] and adj[v, g]:
                free = False
                break
        if free:
            granted[v] = True
            glist[ng] = v
            ng += 1
    return granted


def grant_np(order, subcarrier, adj):
    granted = np.zeros(adj.shape[0], dtype=bool)
    glist = []
    for v in order:
        if glist:
            g = np.asarray(glist)
            if np.any(adj[v, g] & (subcarrier[g] == subcarrier[v])):
                continue
        granted[v] = True
        glist.append(v)
    return granted


# ---------------------------------------------------------------------------
# queue simulation (all vehicles mutually in range, one subcarrier)
# ---------------------------------------------------------------------------

@njit
def simulate_queue_nb(n_vehicles, rho, n_slots, seed):
    np.random.seed(seed)
    backlog = np.zeros(n_vehicles, dtype=np.bool_)
    contenders = np.empty(n_vehicles, dtype=np.int64)
    counts = np.zeros(max(n_vehicles, 1), dtype=np.int64)
    for _ in range(n_slots):
        nc = 0
        for v in range(n_vehicles):
            if backlog[v] or np.random.random() < rho:
                contenders[nc] = v
                nc += 1
                backlog[v] = True
        if nc > 0:
            backlog[contenders[np.random.randint(0, nc)]] = False
        counts[nc - 1 if nc > 0 else 0] += 1
    return counts


def simulate_queue_np(n_vehicles, rho, n_slots, seed, chunk=65536):
    rng = np.random.default_rng(seed)
    backlog = np.zeros(n_vehicles, dtype=bool)
    counts = np.zeros(max(n_vehicles, 1), dtype=np.int64)
    done = 0
    while done < n_slots:
        m = min(chunk, n_slots - done)
        attempts = rng.random((m, n_vehicles)) < rho
        picks = rng.random(m)
        for t in range(m):
            backlog |= attempts[t]
            cont = np.flatnonzero(backlog)
            nc = len(cont)
            if nc:
                backlog[cont[int(picks[t] * nc)]] = False
            counts[max(nc - 1, 0)] += 1
        done += m
    return counts


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _contig(a, dtype=float):
    return np.ascontiguousarray(a, dtype=dtype)


def ctra_batch(states, dt, eps=EPS_OMEGA):
    if USE_NUMBA:
        return ctra_batch_nb(_contig(states).reshape(-1, N_STATE), float(dt), float(eps)).reshape(np.shape(states))
    return ctra_batch_np(states, dt, eps)


def ukf_predict_batch(means, covs, dt, q, weights, eps=EPS_OMEGA):
    """Predict ``m`` estimates by ``dt``; returns ``(means, covs, ok)``.

    ``weights`` is the ``(wm, wc, c)`` triple of :meth:`UKFParams.weights`.
    Entries whose covariance cannot be factorised are returned unchanged
    with ``ok=False``.
    """
    wm, wc, c = weights
    if USE_NUMBA:
        return ukf_predict_nb(_contig(means), _contig(covs), float(dt), float(q), wm, wc, float(c), float(eps))
    return ukf_predict_np(means, covs, dt, q, wm, wc, c, eps)


def ukf_update_batch(means, covs, obs, r_diag, weights):
    wm, wc, c = weights
    if USE_NUMBA:
        return ukf_update_nb(_contig(means), _contig(covs), _contig(obs), _contig(r_diag), wm, wc, float(c))
    return ukf_update_np(means, covs, obs, r_diag, wm, wc, c)


def grant(order, subcarrier, adj):
    """Carrier-sense grants in the given contender order."""
    if USE_NUMBA:
        return grant_nb(_contig(order, np.int64), _contig(subcarrier, np.int64), _contig(adj, np.bool_))
    return grant_np(np.asarray(order), np.asarray(subcarrier), np.asarray(adj))


def simulate_queue(n_vehicles: int, rho: float, n_slots: int, seed: int = 0) -> np.ndarray:
    """Occupancy counts of the access-list size after each slot.

    Every vehicle outside the list joins with probability ``rho``; one list
    member chosen uniformly transmits and leaves. Independent of the
    analytic chain, so it serves as its brute-force check.
    """
    if USE_NUMBA:
        return simulate_queue_nb(int(n_vehicles), float(rho), int(n_slots), int(seed))
    return simulate_queue_np(int(n_vehicles), float(rho), int(n_slots), int(seed))


__all__ = [
    "ctra_batch", "ukf_predict_batch", "ukf_update_batch", "grant", "simulate_queue",
    "ctra_batch_nb", "ctra_batch_np", "ukf_predict_nb", "ukf_predict_np",
    "ukf_update_nb", "ukf_update_np", "grant_nb", "grant_np",
    "simulate_queue_nb", "simulate_queue_np",
]
