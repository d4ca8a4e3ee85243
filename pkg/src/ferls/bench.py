"""Timing helpers behind ``ferls bench-rls`` and the kernel benchmark."""
import time

import numpy as np

from . import kernels, rls


def time_updates(k, n, updates, seed=0, gamma=0.99, warmup=20):
    """Mean seconds per recursive update on a random stream."""
    rng = np.random.default_rng(seed)
    phis = rng.standard_normal((updates + warmup, n, k))
    ys = rng.standard_normal((updates + warmup, n))
    cfg = rls.RlsConfig(gamma=gamma)
    Q = cfg.noise(n)
    st = rls.init(cfg, k)
    for i in range(warmup):
        st = rls.update(st, phis[i], ys[i], cfg, Q)
    t0 = time.perf_counter()
    for i in range(warmup, warmup + updates):
        st = rls.update(st, phis[i], ys[i], cfg, Q)
    return (time.perf_counter() - t0) / updates


def time_at_length(k, n, length, window=100, seed=0, gamma=0.99):
    """Per-update time measured over the last ``window`` updates of a stream of ``length``."""
    rng = np.random.default_rng(seed)
    cfg = rls.RlsConfig(gamma=gamma)
    Q = cfg.noise(n)
    st = rls.init(cfg, k)
    window = min(window, length)
    for i in range(length - window):
        st = rls.update(st, rng.standard_normal((n, k)), rng.standard_normal(n), cfg, Q)
    phis = rng.standard_normal((window, n, k))
    ys = rng.standard_normal((window, n))
    t0 = time.perf_counter()
    for i in range(window):
        st = rls.update(st, phis[i], ys[i], cfg, Q)
    return (time.perf_counter() - t0) / window


def time_batch_resolve(k, n, length, seed=0, lam=1e-3):
    """One naive ridge re-solve over a history of ``length`` transitions."""
    rng = np.random.default_rng(seed)
    phis = rng.standard_normal((length, n, k))
    ys = rng.standard_normal((length, n))
    t0 = time.perf_counter()
    rls.batch_ridge(phis, ys, lam)
    return time.perf_counter() - t0


def bench_rls(ks=(4, 8, 16, 32), n=5, updates=2000, lengths=(100, 1000, 10000), seed=0):
    """Rows ``(kind, k, stream_length, seconds_per_update)``."""
    rows = [("rls", int(k), 0, time_updates(k, n, updates, seed)) for k in ks]
    for T in lengths:
        rows.append(("rls", 8, int(T), time_at_length(8, n, T, seed=seed)))
        rows.append(("batch", 8, int(T), time_batch_resolve(8, n, T, seed)))
    return rows


def kernel_cases(seed=0):
    """Representative arguments for every kernel, sized like the experiments."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((8, 8))
    spd = A @ A.T + 8 * np.eye(8)
    L = np.linalg.cholesky(spd)
    k, n = 8, 5
    P = np.eye(k) * 10.0
    return {
        "cholesky": (spd,),
        "cho_solve": (L, rng.standard_normal((8, 3))),
        "rls_update": (np.zeros(k), P, rng.standard_normal((n, k)), rng.standard_normal(n),
                       1e-4 * np.eye(n), 0.99),
        "vdp_flow": (rng.uniform(-2, 2, (100, 2)), rng.uniform(-1, 1, (100, 1)),
                     np.full(100, 1.0), 0.1, 10),
        "vehicle_flow": (rng.standard_normal((100, 5)), rng.uniform(-1.5, 1.5, (100, 2)),
                         np.full(100, 0.5), 0.1, 2),
        "softmin": (rng.uniform(0, 50, 3000), 1.0),
        "moving_average": (rng.standard_normal((100, 2)), 5),
        "nav_stage_cost": (rng.uniform(-1, 9, (3000, 2)), np.array([8.0, 0.0]),
                           np.array([[3.0, 0.0, 0.5], [6.0, 0.4, 0.5]]), 1.0, 50.0, 0.3),
    }


def bench_kernels(repeat=200, seed=0):
    """Rows ``(kernel, numba_seconds, numpy_seconds)`` per call, after one warm-up call."""
    rows = []
    for name, args in kernel_cases(seed).items():
        nb, npf = kernels.implementations(name)
        out = []
        for f in (nb, npf):
            f(*args)
            t0 = time.perf_counter()
            for _ in range(repeat):
                f(*args)
            out.append((time.perf_counter() - t0) / repeat)
        rows.append((name, *out))
    return rows
