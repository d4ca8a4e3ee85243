"""Recursive least-squares estimation of function-encoder coefficients.

The coefficients are treated as a latent state with covariance ``P``. Each
measurement ``y_t = Phi_t alpha + eps``, ``eps ~ N(0, Q)`` is folded in with a
Kalman-style gain; the forgetting factor ``gamma`` inflates ``P`` before each
update so old data is discounted::

    P_prior = P / gamma
    S       = Phi P_prior Phi^T + Q
    K       = P_prior Phi^T S^{-1}
    alpha  <- alpha + K (y - Phi alpha)
    P      <- P_prior - K Phi P_prior

Only the ``n x n`` innovation is factorized, so an update costs
``O(k^2 n + n^3)`` regardless of how much data has been seen. With
``gamma = 1`` and ``Q = I`` the estimate equals the batch ridge solution
``(sum Phi^T Phi + lam I)^{-1} sum Phi^T y``.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidConfig, NonFiniteState, ShapeMismatch, SingularInnovation

DEFAULT_NOISE = 1e-4


@dataclass
class RlsConfig:
    lam: float = 1e-3
    gamma: float = 1.0
    q: object = DEFAULT_NOISE  # scalar variance or (n, n) SPD matrix

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidConfig("lam must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidConfig("gamma must lie in (0, 1]")
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim == 0:
            if not q > 0:
                raise InvalidConfig("measurement noise variance must be positive")
        else:
            if q.ndim != 2 or q.shape[0] != q.shape[1] or not np.allclose(q, q.T, atol=1e-12):
                raise InvalidConfig("q must be a symmetric matrix")
            if np.linalg.eigvalsh(q).min() <= 0:
                raise InvalidConfig("q must be positive-definite")

    def noise(self, n):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim == 0:
            return float(q) * np.eye(n)
        if q.shape != (n, n):
            raise ShapeMismatch(f"q is {q.shape}, measurements have dimension {n}")
        return q

    def to_dict(self):
        q = np.asarray(self.q, dtype=np.float64)
        return {"lam": self.lam, "gamma": self.gamma, "q": float(q) if q.ndim == 0 else q.tolist()}


@dataclass
class CoefficientState:
    alpha: np.ndarray
    p: np.ndarray
    t: int = 0

    @property
    def k(self):
        return self.alpha.shape[0]

    def copy(self):
        return CoefficientState(self.alpha.copy(), self.p.copy(), self.t)

    def to_dict(self, cfg=None):
        d = {"alpha": self.alpha.tolist(), "p": self.p.tolist(), "t": self.t}
        if cfg is not None:
            d["cfg"] = cfg.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        alpha = np.asarray(d["alpha"], dtype=np.float64)
        p = np.asarray(d["p"], dtype=np.float64).reshape(len(alpha), len(alpha))
        return cls(alpha, p, int(d["t"]))


def init(cfg, k):
    """Zero coefficients (no prior knowledge), ``P = I / lam``."""
    if k < 1:
        raise InvalidConfig("k must be at least 1")
    if not isinstance(cfg, RlsConfig):
        raise InvalidConfig("expected an RlsConfig")
    return CoefficientState(np.zeros(k), np.eye(k) / cfg.lam, 0)


def update(state, phi, y, cfg, q=None):
    """One recursive least-squares step; returns a new state."""
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    k = state.k
    if phi.ndim != 2 or phi.shape != (y.shape[0], k):
        raise ShapeMismatch(f"phi {phi.shape} does not match y ({y.shape[0]},) and k={k}")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(y))):
        raise NonFiniteState("non-finite measurement")
    Q = cfg.noise(y.shape[0]) if q is None else q
    alpha, P, status = kernels.rls_update(state.alpha, state.p, np.ascontiguousarray(phi), y, Q,
                                          float(cfg.gamma))
    if status == kernels.NOT_PD:
        raise SingularInnovation("innovation covariance is not positive-definite")
    if status == kernels.NON_FINITE:
        raise NonFiniteState("RLS update produced non-finite values")
    return CoefficientState(alpha, P, state.t + 1)


def reset_covariance(state, cfg):
    """Re-inflate ``P`` to its prior, keeping the current coefficients."""
    return CoefficientState(state.alpha.copy(), np.eye(state.k) / cfg.lam, state.t)


def batch_ridge(phis, ys, lam, q=None):
    """Stacked ridge solution the recursion reproduces when ``gamma = 1``."""
    phis = np.asarray(phis, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    k = phis.shape[2]
    Qi = np.eye(phis.shape[1]) if q is None else np.linalg.inv(q)
    A = np.einsum("tni,nm,tmj->ij", phis, Qi, phis) + lam * np.eye(k)
    b = np.einsum("tni,nm,tm->i", phis, Qi, ys)
    return np.linalg.solve(A, b)


class RlsEstimator:
    """Mutable wrapper pairing a config with its evolving state."""

    def __init__(self, cfg, k):
        self.cfg = cfg
        self.state = init(cfg, k)
        self._q = None

    @property
    def alpha(self):
        return self.state.alpha

    def update(self, phi, y):
        if self._q is None or self._q.shape[0] != len(y):
            self._q = self.cfg.noise(len(y))
        self.state = update(self.state, phi, y, self.cfg, self._q)
        return self.state

    def reset_covariance(self):
        self.state = reset_covariance(self.state, self.cfg)

    def snapshot(self):
        return self.state.copy()
