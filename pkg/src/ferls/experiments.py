"""Experiment drivers shared by the CLI and the acceptance tests.

Every model is wrapped in an adapter with the same small surface:

* ``predict(X, V, dt)``: state change in the model frame, batched;
* ``observe(tr)``: fold in one model-frame transition (no-op for static models);
* ``alpha`` / ``trace_p``: coefficient snapshot, ``None`` when not applicable.

Streams are evaluated prequentially: transition ``t`` is predicted with the
parameters learned from transitions ``< t`` and only then observed.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fe, mppi, rls
from .baselines import MamlModel, NodeModel, maml_adapt_online
from .errors import FerlsError

MODEL_KINDS = ("fe-rls", "fe-batch", "node", "maml")


# ---------------------------------------------------------------- adapters

class FeRlsAdapter:
    kind = "fe-rls"

    def __init__(self, bs, cfg=None):
        self.bs = bs
        self.cfg = cfg or rls.RlsConfig(gamma=0.99)
        self.reset()

    def reset(self):
        self.est = rls.RlsEstimator(self.cfg, self.bs.k)

    @property
    def alpha(self):
        return self.est.alpha

    @property
    def trace_p(self):
        return float(np.trace(self.est.state.p))

    def predict(self, X, V, dt):
        return fe.predict_delta(self.bs, self.est.alpha, X, V, dt, check=False)

    def observe(self, tr):
        phi = fe.basis_matrix(self.bs, tr.x, tr.v, tr.dt)
        self.est.update(phi, tr.y)


class FeBatchAdapter:
    """Fixed coefficients, typically a batch fit on the evaluation data itself."""

    kind = "fe-batch"
    trace_p = None

    def __init__(self, bs, alpha):
        self.bs = bs
        self.alpha = np.asarray(alpha, dtype=np.float64)

    def reset(self):
        pass

    def predict(self, X, V, dt):
        return fe.predict_delta(self.bs, self.alpha, X, V, dt, check=False)

    def observe(self, tr):
        pass


class NodeAdapter:
    kind = "node"
    alpha = None
    trace_p = None

    def __init__(self, model):
        self.model = model

    def reset(self):
        pass

    def predict(self, X, V, dt):
        with np.errstate(all="ignore"):
            return self.model.predict_delta(X, V, dt, check=False)

    def observe(self, tr):
        pass


class MamlAdapter:
    kind = "maml"
    alpha = None
    trace_p = None

    def __init__(self, model, buffer_size=1, inner_steps=None):
        self.model = model
        self.buffer_size = buffer_size
        self.inner_steps = inner_steps
        self.reset()

    def reset(self):
        self.model.reset(self.buffer_size, self.inner_steps)
        self.params = self.model.net

    def predict(self, X, V, dt):
        with np.errstate(all="ignore"):
            return self.model.predict_delta(X, V, dt, net=self.params, check=False)

    def observe(self, tr):
        self.params = maml_adapt_online(self.model, tr)


def make_adapter(kind, model, rls_cfg=None, alpha=None, buffer_size=1, inner_steps=None):
    if kind == "fe-rls":
        _need(model, fe.BasisSet, kind)
        return FeRlsAdapter(model, rls_cfg)
    if kind == "fe-batch":
        _need(model, fe.BasisSet, kind)
        return FeBatchAdapter(model, np.zeros(model.k) if alpha is None else alpha)
    if kind == "maml":
        _need(model, MamlModel, kind)
        return MamlAdapter(model, buffer_size, inner_steps)
    if kind == "node":
        _need(model, NodeModel, kind)
        return NodeAdapter(model)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def _need(model, cls, kind):
    if not isinstance(model, cls):
        raise TypeError(f"{kind} needs a {cls.__name__} checkpoint, got {type(model).__name__}")


# ---------------------------------------------------------------- streams

@dataclass
class Stream:
    """A logged trajectory of the true system in inertial coordinates."""
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    next_states: np.ndarray
    dt: float

    def __len__(self):
        return len(self.times)

    def transitions(self, env):
        return [env.model_transition(x, u, xn, t)
                for t, x, u, xn in zip(self.times, self.states, self.controls, self.next_states)]


def record_stream(env, duration, seed, x0=None):
    from .envs import simulate
    t, X, U, XN = simulate(env, duration, seed, x0=x0)
    return Stream(t, X, U, XN, env.dt)


def model_step(env, adapter, X, V, dt):
    """Inertial-frame forward model built from a model-frame adapter."""
    return env.from_model(X, adapter.predict(env.to_model(X), V, dt))


def kstep_error(env, adapter, stream, start, horizon):
    """Sum over ``horizon`` open-loop steps of the Euclidean state error."""
    x = stream.states[start]
    total = 0.0
    with np.errstate(all="ignore"):
        for i in range(start, start + horizon):
            x = model_step(env, adapter, x[None], stream.controls[i][None], stream.dt)[0]
            e = float(np.linalg.norm(x - stream.next_states[i]))
            if not math.isfinite(e):
                return math.inf
            total += e
    return total


def eval_stream(env, adapter, stream, horizon=15, kstep=True, reset=True):
    """Prequential pass over ``stream``.

    Returns a dict of arrays: ``t``, ``one_step`` (Euclidean norm of the
    model-frame increment error), ``kstep`` (NaN where the rollout would run
    past the end), ``alpha`` (``(N, k)`` or ``None``) and ``trace_p``.
    """
    if reset:
        adapter.reset()
    trs = stream.transitions(env)
    N = len(trs)
    one = np.empty(N)
    ks = np.full(N, np.nan)
    alphas = [] if adapter.alpha is not None else None
    tp = np.full(N, np.nan)
    for t, tr in enumerate(trs):
        if alphas is not None:
            alphas.append(np.array(adapter.alpha))
            tp[t] = adapter.trace_p
        with np.errstate(all="ignore"):
            d = adapter.predict(tr.x[None], tr.v[None], tr.dt)[0]
        e = float(np.linalg.norm(d - tr.y))
        one[t] = e if math.isfinite(e) else math.inf
        if kstep and t + horizon <= N:
            ks[t] = kstep_error(env, adapter, stream, t, horizon)
        adapter.observe(tr)
    return {"t": np.asarray(stream.times, dtype=np.float64), "one_step": one, "kstep": ks,
            "alpha": None if alphas is None else np.array(alphas), "trace_p": tp}


def window_mse(result, n, start=0, stop=None):
    """Mean squared per-component one-step error over steps ``[start, stop)``."""
    e = result["one_step"][start:stop]
    return float(np.mean(e ** 2) / n)


def quantile_bands(times, values, qs=(0.1, 0.5, 0.9)):
    """Per-time quantiles over the batch axis; ``values`` is ``(batch, N)``."""
    v = np.asarray(values, dtype=np.float64)
    with warnings.catch_warnings():
        # the k-step tail is NaN for every member of the batch
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.asarray(times), np.nanquantile(v, qs, axis=0)


# ---------------------------------------------------------------- closed loop

@dataclass
class Course:
    start: np.ndarray
    goal: np.ndarray
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    goal_tol: float = 0.3


def make_course(name="wall"):
    """Built-in courses, all starting at rest at the origin facing +x.

    ``wall``: goal 1 m in front of a row of posts, so braking distance matters.
    ``posts``: a staggered field of posts between start and goal.
    ``open``: no obstacles.
    """
    start = np.zeros(5)
    if name == "wall":
        obs = [[7.0, y, 0.4] for y in (-1.2, -0.6, 0.0, 0.6, 1.2)]
        return Course(start, np.array([6.0, 0.0]), np.array(obs))
    if name == "posts":
        obs = [[2.0, 0.3, 0.4], [3.5, -0.6, 0.4], [5.0, 0.5, 0.4],
               [6.5, -0.3, 0.4], [4.2, 1.6, 0.5], [4.2, -1.8, 0.5]]
        return Course(start, np.array([8.0, 0.0]), np.array(obs))
    if name == "open":
        return Course(start, np.array([6.0, 0.0]))
    raise ValueError(f"unknown course {name!r}")


def collided(course, p):
    if not len(course.obstacles):
        return False
    d = np.hypot(course.obstacles[:, 0] - p[0], course.obstacles[:, 1] - p[1])
    return bool(np.any(d < course.obstacles[:, 2]))


@dataclass
class EpisodeSummary:
    seed: int
    model: str
    collisions: int
    reached: bool
    cost: float
    steps: int
    failed: bool = False
    reason: str = ""


def run_autonomy(env, adapter, course, mcfg, seed, duration=20.0, cost=None, reset=True,
                 stop_at_goal=True):
    """Closed loop: observe, update the model, plan, act.

    With ``stop_at_goal=False`` the episode runs its full duration, so holding
    position at the goal is part of the task.

    Returns ``(rows, summary)``. Rows hold ``t, x..., u..., cost, alpha...``.
    Planner or model failures end the episode, mark it failed and are reported
    in the summary rather than raised.
    """
    if reset:
        adapter.reset()
    cost = cost or mppi.NavigationCost(course.goal, course.obstacles)
    R = mcfg.r_matrix(env.m)
    plan = mppi.Plan.zeros(mcfg, env.m)
    x = np.asarray(course.start, dtype=np.float64).copy()
    steps = int(round(duration / env.dt))
    rows, total, hits, inside = [], 0.0, 0, False
    reached, failed, reason = False, False, ""
    prev = None
    model = lambda X, V, dt: model_step(env, adapter, X, V, dt)  # noqa: E731
    i = 0
    for i in range(steps):
        t = i * env.dt
        try:
            if prev is not None:
                adapter.observe(env.model_transition(*prev))
            plan, u = mppi.plan_step(model, x, plan, mcfg, cost, seed=(seed, i))
        except (FerlsError, np.linalg.LinAlgError, FloatingPointError) as exc:
            failed, reason = True, f"{type(exc).__name__} at t={t:.1f}"
            break
        c = float(cost.state_cost(x[None])[0] + 0.5 * u @ R @ u)
        total += c
        alpha = adapter.alpha
        rows.append([t, *x, *u, c, *([] if alpha is None else alpha)])
        xn = env.step(x, u, t)
        if not np.all(np.isfinite(xn)):
            failed, reason = True, f"NonFiniteState at t={t:.1f}"
            break
        prev = (x, u, xn, t)
        x = xn
        now = collided(course, x)
        hits += now and not inside
        inside = now
        if np.hypot(*(x[:2] - course.goal)) < course.goal_tol:
            reached = True
            if stop_at_goal:
                break
    total += float(cost.terminal_cost(x[None])[0])
    return rows, EpisodeSummary(int(np.ravel(seed)[0]), adapter.kind, int(hits), reached, total,
                                len(rows), failed, reason)


# ---------------------------------------------------------------- sanity plant

class DoubleIntegrator:
    """``x = (p, v)``, ``u`` is acceleration; exact discrete flow."""
    n, m = 2, 1

    def __init__(self, dt=0.1):
        self.dt = dt

    def __call__(self, X, V, dt):
        X = np.atleast_2d(X)
        a = np.asarray(V, dtype=np.float64).reshape(len(X), 1)[:, 0]
        p, v = X[:, 0], X[:, 1]
        return np.stack([p + v * dt + 0.5 * a * dt * dt, v + a * dt], axis=1)


__all__ = ["MODEL_KINDS", "FeRlsAdapter", "FeBatchAdapter", "NodeAdapter", "MamlAdapter",
           "make_adapter", "Stream", "record_stream", "model_step", "kstep_error", "eval_stream",
           "window_mse", "quantile_bands", "Course", "make_course", "collided",
           "EpisodeSummary", "run_autonomy", "DoubleIntegrator"]
