"""Small tanh MLPs with hand-written reverse mode and Adam.

Weights may carry a leading "stack" axis so that ``k`` independent networks
(the bases of a function encoder) are evaluated with one batched matmul:
``W[l]`` has shape ``(in, out)`` for a single network or ``(k, in, out)`` for
a stack. Inputs broadcast against that axis, so a shared batch ``(N, in)``
fed to a stack yields ``(k, N, out)``.

Gradients through ODE solvers are taken by differentiating the unrolled RK4
steps (discretize-then-differentiate), see :func:`rk4_step_cached` and
:func:`rk4_step_vjp`.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch

ACTIVATIONS = ("tanh",)


@dataclass
class Mlp:
    layer_sizes: tuple
    weights: list
    biases: list
    activation: str = "tanh"
    seed: int | None = None

    @classmethod
    def init(cls, layer_sizes, seed=0, stack=None):
        """Xavier-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        lead = () if stack is None else (stack,)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=lead + (fan_in, fan_out)))
            biases.append(np.zeros(lead + (fan_out,)))
        return cls(tuple(int(s) for s in layer_sizes), weights, biases, "tanh", seed)

    @property
    def stack(self):
        return self.weights[0].shape[0] if self.weights[0].ndim == 3 else None

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    def num_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        return Mlp(self.layer_sizes, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activation, self.seed)

    def __call__(self, x):
        return forward(self, x)

    # -- forward / reverse

    def forward_cached(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.stack is not None and x.ndim == 1:
            raise ShapeMismatch("stacked networks need a batched input (N, in)")
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"input width {x.shape[-1]} != {self.n_in}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = np.matmul(h, W)
            z = z + (b.reshape(b.shape[0], *([1] * (z.ndim - 2)), b.shape[1]) if b.ndim == 2 else b)
            h = np.tanh(z) if i < last else z
            acts.append(h)
        return h, acts

    def vjp(self, acts, cot):
        """Pull back an output cotangent.

        Returns ``(GradTape, input_cotangent)``; the input cotangent has the
        shape of the broadcast input (callers sum over any stack axis).
        """
        cot = np.asarray(cot, dtype=np.float64)
        if cot.shape != acts[-1].shape:
            raise ShapeMismatch(f"cotangent {cot.shape} != output {acts[-1].shape}")
        stacked = self.stack is not None
        dW = [None] * len(self.weights)
        db = [None] * len(self.weights)
        delta = cot
        for i in range(len(self.weights) - 1, -1, -1):
            W = self.weights[i]
            a = acts[i]
            if stacked:
                a = np.broadcast_to(a, delta.shape[:-1] + a.shape[-1:])
                a2 = a.reshape(a.shape[0], -1, a.shape[-1])
                d2 = delta.reshape(delta.shape[0], -1, delta.shape[-1])
                dW[i] = np.matmul(a2.transpose(0, 2, 1), d2)
                db[i] = d2.sum(axis=1)
            else:
                a2 = a.reshape(-1, a.shape[-1])
                d2 = delta.reshape(-1, delta.shape[-1])
                dW[i] = a2.T @ d2
                db[i] = d2.sum(axis=0)
            delta = np.matmul(delta, np.swapaxes(W, -1, -2))
            if i > 0:
                delta = delta * (1.0 - acts[i] ** 2)
        return GradTape(dW, db), delta

    # -- stacking / checkpoints

    def unstack(self):
        if self.stack is None:
            return [self]
        return [Mlp(self.layer_sizes, [w[j].copy() for w in self.weights],
                    [b[j].copy() for b in self.biases], self.activation, self.seed)
                for j in range(self.stack)]

    @classmethod
    def stack_nets(cls, nets):
        first = nets[0]
        if any(n.layer_sizes != first.layer_sizes for n in nets):
            raise ShapeMismatch("cannot stack networks with different layer sizes")
        return cls(first.layer_sizes,
                   [np.stack([n.weights[l] for n in nets]) for l in range(len(first.weights))],
                   [np.stack([n.biases[l] for n in nets]) for l in range(len(first.biases))],
                   first.activation, first.seed)

    def to_dict(self):
        if self.stack is not None:
            raise ValueError("checkpoint individual networks; unstack() first")
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation,
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases], "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        if d.get("activation", "tanh") not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {d['activation']!r}")
        sizes = tuple(int(s) for s in d["layer_sizes"])
        weights = [np.asarray(w, dtype=np.float64).reshape(a, b)
                   for w, a, b in zip(d["weights"], sizes[:-1], sizes[1:])]
        biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in d["biases"]]
        if len(weights) != len(sizes) - 1 or any(b.shape[0] != s for b, s in zip(biases, sizes[1:])):
            raise ShapeMismatch("checkpoint parameter shapes do not match layer_sizes")
        return cls(sizes, weights, biases, d.get("activation", "tanh"), d.get("seed"))


def forward(net, x):
    x = np.asarray(x, dtype=np.float64)
    if net.stack is not None and x.ndim == 1:
        return net.forward_cached(x[None, :])[0][:, 0, :]
    return net.forward_cached(x)[0]


def backward(net, x, output_cotangent):
    """Gradient of ``<cotangent, forward(net, x)>`` w.r.t. every parameter."""
    _, acts = net.forward_cached(x)
    return net.vjp(acts, output_cotangent)[0]


@dataclass
class GradTape:
    dW: list
    db: list

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def add_(self, other):
        for i in range(len(self.dW)):
            self.dW[i] += other.dW[i]
            self.db[i] += other.db[i]
        return self

    def scale(self, c):
        return GradTape([c * w for w in self.dW], [c * b for b in self.db])

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.dW, self.db) for a in pair])

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.dW + self.db)


def sgd_step(net, grads, lr):
    return Mlp(net.layer_sizes, [w - lr * g for w, g in zip(net.weights, grads.dW)],
               [b - lr * g for b, g in zip(net.biases, grads.db)], net.activation, net.seed)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net, lr=1e-3):
        params = net.weights + net.biases
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(state, net, grads):
    """Standard bias-corrected Adam. Advances ``state`` in place, returns a new Mlp."""
    if state.lr <= 0:
        raise ValueError("learning rate must be positive")
    if not grads.is_finite():
        raise NonFiniteGradient("non-finite gradient passed to adam_step")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    params = net.weights + net.biases
    new = []
    for i, (p, g) in enumerate(zip(params, grads.dW + grads.db)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        new.append(p - state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps))
    nl = len(net.weights)
    return Mlp(net.layer_sizes, new[:nl], new[nl:], net.activation, net.seed)


# ---------------------------------------------------------------- neural ODE fields

class MlpField:
    """Vector field ``z -> net(concat(z, v))`` with the control held fixed."""

    def __init__(self, net):
        self.net = net

    def __call__(self, z, v):
        return self.net(_concat(z, v))

    def cached(self, z, v):
        return self.net.forward_cached(_concat(z, v))

    def vjp(self, cache, out_bar):
        tape, in_bar = self.net.vjp(cache, out_bar)
        n = out_bar.shape[-1]
        return tape, in_bar[..., :n]

    def zero_tape(self):
        return GradTape.zeros_like(self.net)


def _concat(z, v):
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape[:-1] != z.shape[:-1]:
        v = np.broadcast_to(v, z.shape[:-1] + v.shape[-1:])
    return np.concatenate([z, v], axis=-1)


def rk4_step_cached(fld, x, v, dt):
    """RK4 step keeping every stage's forward cache for :func:`rk4_step_vjp`."""
    k1, c1 = fld.cached(x, v)
    k2, c2 = fld.cached(x + 0.5 * dt * k1, v)
    k3, c3 = fld.cached(x + 0.5 * dt * k2, v)
    k4, c4 = fld.cached(x + dt * k3, v)
    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x_next, (c1, c2, c3, c4)


def rk4_step_vjp(fld, caches, x_next_bar, dt):
    """Reverse pass of one RK4 step. Returns ``(GradTape, x_bar)``."""
    c1, c2, c3, c4 = caches
    x_bar = x_next_bar.copy()
    k4_bar = dt / 6.0 * x_next_bar
    k3_bar = dt / 3.0 * x_next_bar
    k2_bar = dt / 3.0 * x_next_bar
    k1_bar = dt / 6.0 * x_next_bar
    tape, z_bar = fld.vjp(c4, k4_bar)
    x_bar += z_bar
    k3_bar = k3_bar + dt * z_bar
    t, z_bar = fld.vjp(c3, k3_bar)
    tape.add_(t)
    x_bar += z_bar
    k2_bar = k2_bar + 0.5 * dt * z_bar
    t, z_bar = fld.vjp(c2, k2_bar)
    tape.add_(t)
    x_bar += z_bar
    k1_bar = k1_bar + 0.5 * dt * z_bar
    t, z_bar = fld.vjp(c1, k1_bar)
    tape.add_(t)
    x_bar += z_bar
    return tape, x_bar


def rk4_unroll(fld, x0, controls, dt):
    """Integrate ``len(controls)`` RK4 steps; returns states and caches."""
    states = [np.asarray(x0, dtype=np.float64)]
    caches = []
    for v in controls:
        x, c = rk4_step_cached(fld, states[-1], v, dt)
        states.append(x)
        caches.append(c)
    return states, caches


def rk4_unroll_vjp(fld, caches, state_bars, dt):
    """Reverse pass through :func:`rk4_unroll`.

    ``state_bars[i]`` is the cotangent of state ``i + 1``. Returns
    ``(GradTape, x0_bar)``.
    """
    tape = fld.zero_tape()
    carry = np.zeros_like(state_bars[-1])
    for i in range(len(caches) - 1, -1, -1):
        t, carry = rk4_step_vjp(fld, caches[i], carry + state_bars[i], dt)
        tape.add_(t)
    return tape, carry
