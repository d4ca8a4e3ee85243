"""Hot inner loops, each in two flavours.

Every kernel ``foo`` has a numba implementation ``_foo_nb`` (explicit loops,
compiled with ``@njit``) and a vectorized numpy implementation ``_foo_np``.
The public name is bound at import time according to ``FERLS_NUMBA``; both
flavours stay importable so tests and benchmarks can compare them.

Kernels report failures through integer status codes instead of raising,
which keeps the numba signatures simple. Callers translate codes into
exceptions.
"""
import math

import numpy as np
import scipy.linalg

from ._jit import USE_NUMBA, njit

# status codes
OK = 0
NOT_PD = 1
NON_FINITE = 2


# ---------------------------------------------------------------- cholesky

@njit
def _cholesky_nb(a):
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for p in range(j):
            s -= L[j, p] * L[j, p]
        if not s > 0.0:
            return L, j
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s = a[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            L[i, j] = s / d
    return L, -1


def _cholesky_np(a):
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        d = np.diag(a)
        bad = np.flatnonzero(~(d > 0))
        return np.zeros_like(a), int(bad[0]) if bad.size else 0
    if not np.all(np.diag(L) > 0):
        return L, int(np.flatnonzero(~(np.diag(L) > 0))[0])
    return L, -1


@njit
def _cho_solve_nb(L, b):
    n = L.shape[0]
    ncol = b.shape[1]
    x = np.empty((n, ncol))
    for c in range(ncol):
        # L z = b
        for i in range(n):
            s = b[i, c]
            for p in range(i):
                s -= L[i, p] * x[p, c]
            x[i, c] = s / L[i, i]
        # L^T x = z
        for i in range(n - 1, -1, -1):
            s = x[i, c]
            for p in range(i + 1, n):
                s -= L[p, i] * x[p, c]
            x[i, c] = s / L[i, i]
    return x


def _cho_solve_np(L, b):
    return scipy.linalg.cho_solve((L, True), b, check_finite=False)


# ---------------------------------------------------------------- rls

@njit
def _rls_update_nb(alpha, P, phi, y, Q, gamma):
    k = alpha.shape[0]
    n = y.shape[0]
    inv_g = 1.0 / gamma
    # PhT = (P / gamma) phi^T, shape (k, n)
    PhT = np.zeros((k, n))
    for i in range(k):
        for r in range(n):
            s = 0.0
            for j in range(k):
                s += P[i, j] * phi[r, j]
            PhT[i, r] = s * inv_g
    S = np.empty((n, n))
    for r in range(n):
        for c in range(n):
            s = Q[r, c]
            for j in range(k):
                s += phi[r, j] * PhT[j, c]
            S[r, c] = s
    for r in range(n):
        for c in range(r + 1, n):
            m = 0.5 * (S[r, c] + S[c, r])
            S[r, c] = m
            S[c, r] = m
    L, bad = _cholesky_nb(S)
    if bad >= 0:
        return alpha.copy(), P.copy(), NOT_PD
    # K^T = S^{-1} PhT^T, shape (n, k)
    Kt = _cho_solve_nb(L, np.ascontiguousarray(PhT.T))
    innov = np.empty(n)
    for r in range(n):
        s = y[r]
        for j in range(k):
            s -= phi[r, j] * alpha[j]
        innov[r] = s
    a_new = np.empty(k)
    for i in range(k):
        s = alpha[i]
        for r in range(n):
            s += Kt[r, i] * innov[r]
        a_new[i] = s
    P_new = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            s = 0.0
            for r in range(n):
                s += Kt[r, i] * PhT[j, r]
            s2 = 0.0
            for r in range(n):
                s2 += Kt[r, j] * PhT[i, r]
            v = 0.5 * ((P[i, j] + P[j, i]) * inv_g - s - s2)
            P_new[i, j] = v
            P_new[j, i] = v
    for i in range(k):
        if not math.isfinite(a_new[i]):
            return alpha.copy(), P.copy(), NON_FINITE
        for j in range(k):
            if not math.isfinite(P_new[i, j]):
                return alpha.copy(), P.copy(), NON_FINITE
    return a_new, P_new, OK


def _rls_update_np(alpha, P, phi, y, Q, gamma):
    P_prior = P / gamma
    PhT = P_prior @ phi.T
    S = phi @ PhT + Q
    S = 0.5 * (S + S.T)
    try:
        cf = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return alpha.copy(), P.copy(), NOT_PD
    if not np.all(np.diag(cf[0]) > 0):
        return alpha.copy(), P.copy(), NOT_PD
    K = scipy.linalg.cho_solve(cf, PhT.T, check_finite=False).T
    a_new = alpha + K @ (y - phi @ alpha)
    P_new = P_prior - K @ PhT.T
    P_new = 0.5 * (P_new + P_new.T)
    if not (np.all(np.isfinite(a_new)) and np.all(np.isfinite(P_new))):
        return alpha.copy(), P.copy(), NON_FINITE
    return a_new, P_new, OK


# ---------------------------------------------------------------- environments

@njit
def _vdp_deriv(x1, x2, v, mu):
    return x2, mu * (1.0 - x1 * x1) * x2 - x1 + v


@njit
def _vdp_flow_nb(X, V, mu, dt, substeps):
    N = X.shape[0]
    out = np.empty_like(X)
    h = dt / substeps
    for i in range(N):
        x1 = X[i, 0]
        x2 = X[i, 1]
        v = V[i, 0]
        m = mu[i]
        for _ in range(substeps):
            a1, a2 = _vdp_deriv(x1, x2, v, m)
            b1, b2 = _vdp_deriv(x1 + 0.5 * h * a1, x2 + 0.5 * h * a2, v, m)
            c1, c2 = _vdp_deriv(x1 + 0.5 * h * b1, x2 + 0.5 * h * b2, v, m)
            d1, d2 = _vdp_deriv(x1 + h * c1, x2 + h * c2, v, m)
            x1 = x1 + h / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
            x2 = x2 + h / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
        out[i, 0] = x1
        out[i, 1] = x2
    return out


def _vdp_deriv_np(X, V, mu):
    x1, x2 = X[:, 0], X[:, 1]
    return np.stack([x2, mu * (1.0 - x1 * x1) * x2 - x1 + V[:, 0]], axis=1)


def _vdp_flow_np(X, V, mu, dt, substeps):
    h = dt / substeps
    x = X.copy()
    for _ in range(substeps):
        a = _vdp_deriv_np(x, V, mu)
        b = _vdp_deriv_np(x + 0.5 * h * a, V, mu)
        c = _vdp_deriv_np(x + 0.5 * h * b, V, mu)
        d = _vdp_deriv_np(x + h * c, V, mu)
        x = x + h / 6.0 * (a + 2.0 * b + 2.0 * c + d)
    return x


@njit
def _vehicle_deriv(th, v, w, vc, wc, mu):
    scale = 0.2 + 0.8 * mu
    tau_v = 0.3 / scale
    tau_w = 0.2 / scale
    beta = 0.4 * (1.0 - mu)
    v_lat = -beta * v * w
    c = math.cos(th)
    s = math.sin(th)
    return (v * c - v_lat * s, v * s + v_lat * c, w, (vc - v) / tau_v, (wc - w) / tau_w)


@njit
def _vehicle_flow_nb(X, U, mu, dt, substeps):
    N = X.shape[0]
    out = np.empty_like(X)
    h = dt / substeps
    for i in range(N):
        px, py, th, v, w = X[i, 0], X[i, 1], X[i, 2], X[i, 3], X[i, 4]
        vc, wc, m = U[i, 0], U[i, 1], mu[i]
        for _ in range(substeps):
            a = _vehicle_deriv(th, v, w, vc, wc, m)
            b = _vehicle_deriv(th + 0.5 * h * a[2], v + 0.5 * h * a[3], w + 0.5 * h * a[4], vc, wc, m)
            c = _vehicle_deriv(th + 0.5 * h * b[2], v + 0.5 * h * b[3], w + 0.5 * h * b[4], vc, wc, m)
            d = _vehicle_deriv(th + h * c[2], v + h * c[3], w + h * c[4], vc, wc, m)
            px = px + h / 6.0 * (a[0] + 2.0 * b[0] + 2.0 * c[0] + d[0])
            py = py + h / 6.0 * (a[1] + 2.0 * b[1] + 2.0 * c[1] + d[1])
            th = th + h / 6.0 * (a[2] + 2.0 * b[2] + 2.0 * c[2] + d[2])
            v = v + h / 6.0 * (a[3] + 2.0 * b[3] + 2.0 * c[3] + d[3])
            w = w + h / 6.0 * (a[4] + 2.0 * b[4] + 2.0 * c[4] + d[4])
        out[i, 0] = px
        out[i, 1] = py
        out[i, 2] = th
        out[i, 3] = v
        out[i, 4] = w
    return out


def _vehicle_deriv_np(X, U, mu):
    th, v, w = X[:, 2], X[:, 3], X[:, 4]
    scale = 0.2 + 0.8 * mu
    v_lat = -0.4 * (1.0 - mu) * v * w
    c, s = np.cos(th), np.sin(th)
    return np.stack([v * c - v_lat * s, v * s + v_lat * c, w,
                     (U[:, 0] - v) * scale / 0.3, (U[:, 1] - w) * scale / 0.2], axis=1)


def _vehicle_flow_np(X, U, mu, dt, substeps):
    h = dt / substeps
    x = X.copy()
    for _ in range(substeps):
        a = _vehicle_deriv_np(x, U, mu)
        b = _vehicle_deriv_np(x + 0.5 * h * a, U, mu)
        c = _vehicle_deriv_np(x + 0.5 * h * b, U, mu)
        d = _vehicle_deriv_np(x + h * c, U, mu)
        x = x + h / 6.0 * (a + 2.0 * b + 2.0 * c + d)
    return x


# ---------------------------------------------------------------- mppi

@njit
def _softmin_nb(costs, temperature):
    r = costs.shape[0]
    w = np.zeros(r)
    lo = np.inf
    for i in range(r):
        if costs[i] < lo:
            lo = costs[i]
    if not math.isfinite(lo):
        return w, NON_FINITE
    total = 0.0
    for i in range(r):
        if math.isfinite(costs[i]):
            w[i] = math.exp(-(costs[i] - lo) / temperature)
            total += w[i]
    for i in range(r):
        w[i] /= total
    return w, OK


def _softmin_np(costs, temperature):
    finite = np.isfinite(costs)
    if not finite.any():
        return np.zeros_like(costs), NON_FINITE
    lo = costs[finite].min()
    w = np.zeros_like(costs)
    w[finite] = np.exp(-(costs[finite] - lo) / temperature)
    return w / w.sum(), OK


@njit
def _moving_average_nb(U, window):
    T, m = U.shape
    half = window // 2
    out = np.empty_like(U)
    for t in range(T):
        lo = max(0, t - half)
        hi = min(T, t + half + 1)
        for j in range(m):
            s = 0.0
            for q in range(lo, hi):
                s += U[q, j]
            out[t, j] = s / (hi - lo)
    return out


def _moving_average_np(U, window):
    T = U.shape[0]
    half = window // 2
    c = np.vstack([np.zeros((1, U.shape[1])), np.cumsum(U, axis=0)])
    t = np.arange(T)
    lo = np.maximum(0, t - half)
    hi = np.minimum(T, t + half + 1)
    return (c[hi] - c[lo]) / (hi - lo)[:, None]


@njit
def _nav_stage_cost_nb(P, goal, obstacles, w_goal, w_obs, margin):
    r = P.shape[0]
    out = np.empty(r)
    for i in range(r):
        dx = P[i, 0] - goal[0]
        dy = P[i, 1] - goal[1]
        c = w_goal * math.sqrt(dx * dx + dy * dy)
        for o in range(obstacles.shape[0]):
            ex = P[i, 0] - obstacles[o, 0]
            ey = P[i, 1] - obstacles[o, 1]
            d = math.sqrt(ex * ex + ey * ey) - obstacles[o, 2]
            if d < margin:
                c += w_obs * (1.0 + (margin - d) / margin)
        out[i] = c
    return out


def _nav_stage_cost_np(P, goal, obstacles, w_goal, w_obs, margin):
    c = w_goal * np.sqrt(((P - goal) ** 2).sum(axis=1))
    if obstacles.shape[0]:
        d = np.sqrt(((P[:, None, :] - obstacles[None, :, :2]) ** 2).sum(axis=2)) - obstacles[None, :, 2]
        pen = np.where(d < margin, w_obs * (1.0 + (margin - d) / margin), 0.0)
        c = c + pen.sum(axis=1)
    return c


KERNELS = ("cholesky", "cho_solve", "rls_update", "vdp_flow", "vehicle_flow",
           "softmin", "moving_average", "nav_stage_cost")

_impl = "nb" if USE_NUMBA else "np"
cholesky = globals()[f"_cholesky_{_impl}"]
cho_solve = globals()[f"_cho_solve_{_impl}"]
rls_update = globals()[f"_rls_update_{_impl}"]
vdp_flow = globals()[f"_vdp_flow_{_impl}"]
vehicle_flow = globals()[f"_vehicle_flow_{_impl}"]
softmin = globals()[f"_softmin_{_impl}"]
moving_average = globals()[f"_moving_average_{_impl}"]
nav_stage_cost = globals()[f"_nav_stage_cost_{_impl}"]


def implementations(name):
    """Return ``(numba_impl, numpy_impl)`` for a kernel name."""
    return globals()[f"_{name}_nb"], globals()[f"_{name}_np"]
