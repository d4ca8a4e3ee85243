"""Ground-truth environments and the data pipeline.

Two families:

* Van der Pol oscillator with unobserved ``mu``; control adds to ``x2_dot``.
* A friction-parameterized ground vehicle, state ``(px, py, yaw, v, omega)``
  and commands ``(v_cmd, omega_cmd)``. Friction ``mu_f`` in [0, 1] (0 = ice,
  1 = pavement) scales first-order actuator lags and injects lateral slip::

      tau_v = 0.3 / (0.2 + 0.8 mu_f)    tau_w = 0.2 / (0.2 + 0.8 mu_f)
      v_lat = -0.4 (1 - mu_f) v omega   (outward slip in turns)

Learned models see vehicle transitions in the body frame of the current
pose (translation removed, rotated by -yaw), so they never depend on where
the robot is. Environment objects expose ``to_model`` / ``from_model`` for
that conversion; for Van der Pol both are identities.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import TerrainDataset, Transition

TERRAIN_PRESETS = tuple(i / 7 for i in range(8))


# ---------------------------------------------------------------- schedules

class TerrainSchedule:
    """Piecewise-constant world parameter over time, e.g. ``"0:1.0,20:0.0"``."""

    def __init__(self, segments):
        segs = [(float(t), float(v)) for t, v in segments]
        if not segs or segs[0][0] != 0.0:
            raise ValueError("schedule must start at time 0")
        if any(b[0] <= a[0] for a, b in zip(segs, segs[1:])):
            raise ValueError("schedule start times must be strictly increasing")
        self.segments = segs
        self._starts = np.array([s for s, _ in segs])

    @classmethod
    def parse(cls, text):
        try:
            pairs = [p.split(":") for p in str(text).replace(" ", "").split(",") if p]
            return cls([(float(t), float(v)) for t, v in pairs])
        except ValueError as exc:
            raise ValueError(f"bad schedule {text!r}: {exc}") from None

    @classmethod
    def constant(cls, value):
        return cls([(0.0, value)])

    def __call__(self, t):
        i = int(np.searchsorted(self._starts, t + 1e-9, side="right")) - 1
        return self.segments[max(i, 0)][1]

    def switch_times(self):
        return [t for t, _ in self.segments[1:]]

    def __str__(self):
        return ",".join(f"{t:g}:{v:g}" for t, v in self.segments)


def _as_schedule(s):
    if isinstance(s, TerrainSchedule):
        return s
    if isinstance(s, str):
        return TerrainSchedule.parse(s)
    return TerrainSchedule.constant(s)


# ---------------------------------------------------------------- Van der Pol

@dataclass
class VdpSpec:
    mu: float = 1.0
    dt: float = 0.1
    substeps: int = 10


def vdp_field(spec, x, v):
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, spec.mu * (1.0 - x1 ** 2) * x2 - x1 + v[..., 0]], axis=-1)


def vdp_step(spec, x, v, dt=None):
    """Exact-ish flow over ``dt`` (RK4 with ``spec.substeps`` substeps)."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    V = np.atleast_2d(np.asarray(v, dtype=np.float64)).reshape(len(X), 1)
    mu = np.full(len(X), float(spec.mu))
    out = kernels.vdp_flow(np.ascontiguousarray(X), np.ascontiguousarray(V), mu,
                           float(dt or spec.dt), int(spec.substeps))
    return out[0] if np.ndim(x) == 1 else out


# ---------------------------------------------------------------- vehicle

@dataclass
class TerrainVehicleSpec:
    mu_f: float = 1.0
    dt: float = 0.1
    substeps: int = 2

    def __post_init__(self):
        if not 0.0 <= self.mu_f <= 1.0:
            raise ValueError("mu_f must lie in [0, 1]")

    @property
    def tau_v(self):
        return 0.3 / (0.2 + 0.8 * self.mu_f)

    @property
    def tau_w(self):
        return 0.2 / (0.2 + 0.8 * self.mu_f)

    @property
    def beta(self):
        return 0.4 * (1.0 - self.mu_f)


def vehicle_field(spec, x, u):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    return kernels._vehicle_deriv_np(x, u, np.full(len(x), float(spec.mu_f)))


def vehicle_step(spec, x, u, dt=None):
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    U = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if len(U) != len(X):
        U = np.broadcast_to(U, (len(X), 2))
    mu = np.full(len(X), float(spec.mu_f))
    out = kernels.vehicle_flow(np.ascontiguousarray(X), np.ascontiguousarray(U), mu,
                               float(dt or spec.dt), int(spec.substeps))
    return out[0] if np.ndim(x) == 1 else out


def _rot(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]])


def to_body_frame(tr, yaw):
    """Rotate a vehicle transition by ``-yaw`` (positions and headings).

    Positions of both endpoints are rotated about the origin and ``yaw`` is
    subtracted from both headings; speeds are already body-axis quantities.
    Inverse: :func:`to_inertial_frame`.
    """
    R = _rot(-yaw)
    x, xn = np.array(tr.x, dtype=np.float64), np.array(tr.x_next, dtype=np.float64)
    x[:2], xn[:2] = R @ x[:2], R @ xn[:2]
    x[2] -= yaw
    xn[2] -= yaw
    return Transition(x, np.array(tr.v, dtype=np.float64), tr.dt, xn, tr.world_id)


def to_inertial_frame(tr, yaw):
    R = _rot(yaw)
    x, xn = np.array(tr.x, dtype=np.float64), np.array(tr.x_next, dtype=np.float64)
    x[:2], xn[:2] = R @ x[:2], R @ xn[:2]
    x[2] += yaw
    xn[2] += yaw
    return Transition(x, np.array(tr.v, dtype=np.float64), tr.dt, xn, tr.world_id)


def body_velocity_to_inertial(v_body, yaw):
    return _rot(yaw) @ np.asarray(v_body, dtype=np.float64)


# ---------------------------------------------------------------- environments

class VdpEnv:
    name = "vdp"
    n, m = 2, 1

    def __init__(self, mu=1.0, dt=0.1, substeps=10, u_max=1.0):
        self.schedule = _as_schedule(mu)
        self.dt = dt
        self.substeps = substeps
        self.u_low = np.array([-u_max])
        self.u_high = np.array([u_max])

    def world(self, t):
        return self.schedule(t)

    def world_id(self, t):
        return f"vdp_mu={self.world(t):g}"

    def step(self, x, u, t=0.0):
        return vdp_step(VdpSpec(self.world(t), self.dt, self.substeps), x, u)

    def sample_initial(self, rng):
        return rng.uniform(-2.5, 2.5, size=2)

    def to_model(self, X):
        return np.asarray(X, dtype=np.float64)

    def from_model(self, X, dX):
        return np.asarray(X, dtype=np.float64) + dX

    def model_transition(self, x, u, x_next, t=0.0):
        return Transition(np.asarray(x, float), np.asarray(u, float), self.dt,
                          np.asarray(x_next, float), self.world_id(t))


class VehicleEnv:
    name = "terrain"
    n, m = 5, 2

    def __init__(self, schedule=1.0, dt=0.1, substeps=2, v_max=1.5, w_max=1.5):
        self.schedule = _as_schedule(schedule)
        self.dt = dt
        self.substeps = substeps
        self.u_low = np.array([-v_max, -w_max])
        self.u_high = np.array([v_max, w_max])

    def world(self, t):
        return self.schedule(t)

    def world_id(self, t):
        return f"terrain_mu_f={self.world(t):.4g}"

    def step(self, x, u, t=0.0):
        return vehicle_step(TerrainVehicleSpec(self.world(t), self.dt, self.substeps), x, u)

    def sample_initial(self, rng):
        return np.array([0.0, 0.0, rng.uniform(-np.pi, np.pi), 0.0, 0.0])

    def to_model(self, X):
        X = np.array(X, dtype=np.float64)
        X[..., :3] = 0.0
        return X

    def from_model(self, X, dX):
        """Map a body-frame increment back onto inertial states (batched)."""
        X = np.asarray(X, dtype=np.float64)
        dX = np.asarray(dX, dtype=np.float64)
        c, s = np.cos(X[..., 2]), np.sin(X[..., 2])
        out = X + dX
        out[..., 0] = X[..., 0] + c * dX[..., 0] - s * dX[..., 1]
        out[..., 1] = X[..., 1] + s * dX[..., 0] + c * dX[..., 1]
        return out

    def model_transition(self, x, u, x_next, t=0.0):
        x = np.asarray(x, dtype=np.float64)
        shifted = Transition(x - [x[0], x[1], 0, 0, 0], np.asarray(u, float), self.dt,
                             np.asarray(x_next, float) - [x[0], x[1], 0, 0, 0], self.world_id(t))
        return to_body_frame(shifted, x[2])


def make_env(name, schedule=1.0, dt=0.1):
    if name == "vdp":
        return VdpEnv(schedule, dt)
    if name in ("terrain", "vehicle"):
        return VehicleEnv(schedule, dt)
    raise ValueError(f"unknown environment {name!r}")


# ---------------------------------------------------------------- data generation

class ExplorationPolicy:
    """Uniform random command held for ``hold`` seconds."""

    def __init__(self, low, high, rng, hold=0.5):
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.rng = rng
        self.hold = hold
        self._until = -np.inf
        self._u = None

    def __call__(self, t):
        if t >= self._until - 1e-9:
            self._u = self.rng.uniform(self.low, self.high)
            self._until = t + self.hold
        return self._u


def simulate(env, duration, seed, controller=None, x0=None, episode_length=None):
    """Roll the true dynamics; returns ``(times, states, controls, next_states)`` arrays."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    steps = int(round(duration / env.dt))
    controller = controller or ExplorationPolicy(env.u_low, env.u_high, rng)
    x = np.asarray(x0, dtype=np.float64) if x0 is not None else env.sample_initial(rng)
    per_ep = None if not episode_length else max(1, int(round(episode_length / env.dt)))
    T, X, U, XN = [], [], [], []
    for i in range(steps):
        t = i * env.dt
        if per_ep and i and i % per_ep == 0:
            x = env.sample_initial(rng)
        u = np.asarray(controller(t), dtype=np.float64)
        xn = env.step(x, u, t)
        T.append(t)
        X.append(x)
        U.append(u)
        XN.append(xn)
        x = xn
    return np.array(T), np.array(X), np.array(U), np.array(XN)


def generate_dataset(env, duration, seed, controller=None, x0=None, episode_length=None, world_id=None):
    """Transitions (in the model frame) from seeded exploration of the true dynamics."""
    times, X, U, XN = simulate(env, duration, seed, controller, x0, episode_length)
    trs = [env.model_transition(x, u, xn, t) for t, x, u, xn in zip(times, X, U, XN)]
    return TerrainDataset.from_transitions(trs, world_id)
