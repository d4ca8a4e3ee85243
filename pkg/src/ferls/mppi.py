"""Model predictive path integral control.

The planner only needs a batched forward model ``model(X, V, dt) -> X_next``
with ``X`` of shape ``(r, n)`` and ``V`` of shape ``(r, m)``. Rollout ``i``
draws its perturbations from ``default_rng((seed, i))`` so results do not
depend on how rollouts are scheduled.

Rollout cost is ``psi(x_T) + sum_{t<T} c(x_t) + sum_t 0.5 v_t^T R v_t``. A
rollout whose state turns non-finite gets infinite cost (weight zero) rather
than aborting the plan.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import AllInfiniteCosts, InvalidConfig, ShapeMismatch


@dataclass
class MppiConfig:
    horizon: int = 25
    dt: float = 0.1
    num_rollouts: int = 100
    sigma: object = 0.25  # scalar variance, per-dim variances, or (m, m) covariance
    temperature: float = 1.0
    control_cost: object = 0.0  # R, same conventions as sigma
    smoothing_window: int = 5
    u_min: object = None
    u_max: object = None

    def __post_init__(self):
        if self.horizon < 1 or self.num_rollouts < 1:
            raise InvalidConfig("horizon and num_rollouts must be at least 1")
        if not self.temperature > 0:
            raise InvalidConfig("temperature must be positive")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise InvalidConfig("smoothing_window must be a positive odd integer")
        if self.dt <= 0:
            raise InvalidConfig("dt must be positive")

    def sigma_matrix(self, m):
        return _as_cov(self.sigma, m, "sigma")

    def r_matrix(self, m):
        return _as_cov(self.control_cost, m, "control_cost")

    def bounds(self, m):
        lo = np.full(m, -np.inf) if self.u_min is None else np.broadcast_to(np.asarray(self.u_min, float), (m,))
        hi = np.full(m, np.inf) if self.u_max is None else np.broadcast_to(np.asarray(self.u_max, float), (m,))
        return lo, hi


def _as_cov(s, m, name):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 0:
        s = np.full(m, float(s))
    if s.ndim == 1:
        s = np.diag(s)
    if s.shape != (m, m):
        raise ShapeMismatch(f"{name} must be ({m}, {m})")
    if not np.allclose(s, s.T) or np.linalg.eigvalsh(s).min() < -1e-12:
        raise InvalidConfig(f"{name} must be symmetric positive-semidefinite")
    return s


def _sqrt_cov(S):
    w, V = np.linalg.eigh(S)
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass
class CostSpec:
    """Batched state costs: ``state_cost(X) -> (r,)`` and ``terminal_cost(X) -> (r,)``."""
    state_cost: object
    terminal_cost: object


class NavigationCost(CostSpec):
    """Distance-to-goal plus a penalty inside inflated circular obstacles.

    ``obstacles`` rows are ``(cx, cy, radius)``; positions are state entries 0, 1.
    """

    def __init__(self, goal, obstacles=(), w_goal=1.0, w_obs=50.0, margin=0.3, w_terminal=5.0):
        self.goal = np.asarray(goal, dtype=np.float64)
        self.obstacles = np.asarray(obstacles, dtype=np.float64).reshape(-1, 3)
        self.w_goal, self.w_obs, self.margin, self.w_terminal = w_goal, w_obs, margin, w_terminal
        super().__init__(self._stage, self._terminal)

    def _stage(self, X):
        return kernels.nav_stage_cost(np.ascontiguousarray(X[:, :2]), self.goal, self.obstacles,
                                      self.w_goal, self.w_obs, self.margin)

    def _terminal(self, X):
        return self.w_terminal * np.sqrt(((X[:, :2] - self.goal) ** 2).sum(axis=1))


@dataclass
class Plan:
    nominal: np.ndarray
    last_rollout_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def zeros(cls, cfg, m):
        return cls(np.zeros((cfg.horizon, m)))

    def copy(self):
        return Plan(self.nominal.copy(), self.last_rollout_costs.copy(), self.weights.copy())


def sample_noise(cfg, m, seed):
    """Perturbations ``(r, T, m)``; rollout ``i`` uses ``default_rng((*seed, i))``.

    ``seed`` is an int or a tuple of ints (e.g. ``(episode, tick)``).
    """
    L = _sqrt_cov(cfg.sigma_matrix(m))
    base = tuple(int(s) for s in np.ravel(seed))
    z = np.stack([np.random.default_rng((*base, i)).standard_normal((cfg.horizon, m))
                  for i in range(cfg.num_rollouts)])
    return z @ L.T


def sample_rollouts(model, x0, plan, cfg, cost, seed, return_states=False):
    """Score ``num_rollouts`` perturbed copies of the nominal plan.

    Returns ``(costs, noises)`` where ``noises`` are the effective (post-clamp)
    perturbations, plus the state trajectories ``(r, T+1, n)`` when requested.
    """
    U = np.asarray(plan.nominal, dtype=np.float64)
    T, m = U.shape
    if T != cfg.horizon:
        raise ShapeMismatch(f"plan has {T} steps, config horizon is {cfg.horizon}")
    lo, hi = cfg.bounds(m)
    V = np.clip(U[None] + sample_noise(cfg, m, seed), lo, hi)
    R = cfg.r_matrix(m)
    r = cfg.num_rollouts
    X = np.repeat(np.asarray(x0, dtype=np.float64)[None], r, axis=0)
    alive = np.ones(r, dtype=bool)
    costs = np.zeros(r)
    states = [X] if return_states else None
    with np.errstate(all="ignore"):
        for t in range(T):
            costs += cost.state_cost(X)
            costs += 0.5 * np.einsum("ri,ij,rj->r", V[:, t], R, V[:, t])
            X = np.asarray(model(X, V[:, t], cfg.dt), dtype=np.float64)
            bad = ~np.all(np.isfinite(X), axis=1)
            if bad.any():
                alive &= ~bad
                X = np.where(bad[:, None], x0, X)
            if return_states:
                states.append(X)
        costs += cost.terminal_cost(X)
    costs = np.where(alive & np.isfinite(costs), costs, np.inf)
    out = (costs, V - U[None])
    if return_states:
        out += (np.stack(states, axis=1),)
    return out


def softmin_weights(costs, temperature):
    """``exp(-(S - min S) / temperature)``, normalized; infinite costs get zero."""
    if not temperature > 0:
        raise InvalidConfig("temperature must be positive")
    w, status = kernels.softmin(np.asarray(costs, dtype=np.float64), float(temperature))
    if status != kernels.OK:
        raise AllInfiniteCosts("every rollout has infinite cost")
    return w


def shift(U):
    return np.vstack([U[1:], U[-1:]])


def update_plan(plan, noises, weights, cfg, shift_plan=True):
    """Weighted-average update, moving-average smoothing, receding-horizon shift."""
    U = plan.nominal + np.einsum("r,rtm->tm", np.asarray(weights, dtype=np.float64), noises)
    if cfg.smoothing_window > 1:
        U = kernels.moving_average(np.ascontiguousarray(U), int(cfg.smoothing_window))
    lo, hi = cfg.bounds(U.shape[1])
    U = np.clip(U, lo, hi)
    return replace(plan, nominal=shift(U) if shift_plan else U)


def plan_step(model, x0, plan, cfg, cost, seed):
    """One MPPI iteration. Returns ``(shifted plan, control to apply now)``."""
    costs, noises = sample_rollouts(model, x0, plan, cfg, cost, seed)
    weights = softmin_weights(costs, cfg.temperature)
    new = update_plan(plan, noises, weights, cfg, shift_plan=False)
    u0 = new.nominal[0].copy()
    return Plan(shift(new.nominal), costs, weights), u0
