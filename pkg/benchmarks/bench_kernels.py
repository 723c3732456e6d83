"""Compare the numba kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--vehicles 62] [--repeat 20]

Each kernel is warmed up once (so numba compile time is excluded), then timed
as the best of ``--repeat`` calls. Outputs of both paths are checked for
agreement before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dynmap import kernels
from dynmap._accel import HAVE_NUMBA
from dynmap.config import SimConfig
from dynmap.motion import UKFParams


def best_of(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n, rng):
    cfg = SimConfig()
    wm, wc, c = UKFParams.from_config(cfg).weights()
    means = np.column_stack([rng.uniform(0, 700, (n, 2)), rng.uniform(-np.pi, np.pi, n),
                             rng.uniform(0, 14, n), rng.normal(0, 1, n), rng.normal(0, 0.2, n)])
    A = rng.normal(size=(n, 6, 6))
    covs = A @ A.transpose(0, 2, 1) * 0.1 + np.eye(6)
    obs = means + rng.normal(size=means.shape)
    r = cfg.R_diag
    xy = rng.uniform(0, 700, (n, 2))
    adj = np.hypot(*(xy[:, None] - xy[None]).transpose(2, 0, 1)) < cfg.r
    np.fill_diagonal(adj, False)
    sc = rng.integers(0, cfg.n_sc, n).astype(np.int64)
    order = rng.permutation(n).astype(np.int64)
    return {
        "ctra": (lambda: kernels.ctra_batch_nb(means, 0.1, 1e-4), lambda: kernels.ctra_batch_np(means, 0.1)),
        "ukf_predict": (lambda: kernels.ukf_predict_nb(means, covs, 0.1, 1.0, wm, wc, c, 1e-4),
                        lambda: kernels.ukf_predict_np(means, covs, 0.1, 1.0, wm, wc, c)),
        "ukf_update": (lambda: kernels.ukf_update_nb(means, covs, obs, r, wm, wc, c),
                       lambda: kernels.ukf_update_np(means, covs, obs, r, wm, wc, c)),
        "grant": (lambda: kernels.grant_nb(order, sc, adj), lambda: kernels.grant_np(order, sc, adj)),
        "queue_sim_1e5": (lambda: kernels.simulate_queue_nb(5, 0.2, 100_000, 1),
                          lambda: kernels.simulate_queue_np(5, 0.2, 100_000, 1)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vehicles", type=int, default=62)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, (nb, npf) in cases(args.vehicles, rng).items():
        a, b = nb(), npf()
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            if name != "queue_sim_1e5":  # different random streams, compared statistically in tests
                np.testing.assert_allclose(x, y, rtol=1e-8, atol=1e-8)
        t_nb, t_np = best_of(nb, args.repeat), best_of(npf, args.repeat)
        print(f"{name:<16}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}{t_np / t_nb:>10.1f}x")


if __name__ == "__main__":
    main()
