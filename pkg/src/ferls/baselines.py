"""Comparison models: a static neural ODE and first-order MAML.

Both train through the same loop (:func:`_meta_train`). With
``inner_steps = 0`` the MAML update is exactly pooled training, which is how
the static model is trained, so the two are parameter-identical for equal
seeds.
"""
import json
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import FerlsError, InsufficientData, NonFiniteGradient, ParseError, ShapeMismatch
from .net import (AdamState, GradTape, Mlp, MlpField, adam_step, rk4_step_cached, rk4_step_vjp,
                  sgd_step)
from .numerics import rk4_step


@dataclass
class NodeConfig:
    hidden: tuple = (64, 64)
    epochs: int = 1000
    lr: float = 1e-3
    lr_final_frac: float = 1.0
    batch_size: int = 256
    seed: int = 0


@dataclass
class MamlConfig(NodeConfig):
    inner_steps: int = 5
    inner_lr: float = 1e-2
    lr: float = 1e-3  # meta learning rate
    buffer_size: int = 100
    # inner steps used at deployment; 1 is the stable fallback setting
    eval_inner_steps: int = 5


class NodeModel:
    """Single neural vector field integrated with RK4."""

    kind = "node"

    def __init__(self, net, config=None, loss_trace=None):
        self.net = net
        self.config = config or {}
        self.loss_trace = list(loss_trace or [])

    @property
    def n(self):
        return self.net.n_out

    @property
    def m(self):
        return self.net.n_in - self.net.n_out

    def predict_delta(self, x, v, dt, net=None, check=True):
        return _predict(net or self.net, x, v, dt, check)

    def to_dict(self):
        d = self.net.to_dict()
        d.update(kind=self.kind, config=self.config, loss_trace=self.loss_trace)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(Mlp.from_dict(d), d.get("config"), d.get("loss_trace"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class MamlModel(NodeModel):
    """Meta-learned vector field plus a ring buffer for online adaptation."""

    kind = "maml"

    def __init__(self, net, config=None, loss_trace=None):
        super().__init__(net, config, loss_trace)
        cfg = self.config
        self.inner_lr = float(cfg.get("inner_lr", 1e-2))
        self.inner_steps = int(cfg.get("eval_inner_steps", cfg.get("inner_steps", 5)))
        self.buffer = deque(maxlen=max(1, int(cfg.get("buffer_size", 100))))
        self.fallbacks = 0

    def reset(self, buffer_size=None, inner_steps=None):
        if buffer_size is not None:
            self.buffer = deque(maxlen=max(1, int(buffer_size)))
        else:
            self.buffer.clear()
        if inner_steps is not None:
            self.inner_steps = int(inner_steps)
        self.fallbacks = 0


def _predict(net, x, v, dt, check=True):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    V = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if V.shape[0] != X.shape[0]:
        V = np.broadcast_to(V, (X.shape[0], V.shape[1]))
    dt = np.asarray(dt, dtype=np.float64)
    dtb = dt.reshape(-1, 1) if dt.ndim else dt
    fld = MlpField(net)
    d = rk4_step(lambda z: fld(z, V), X, dtb, check=check) - X
    return d[0] if single else d


def _loss_grad(net, X, V, dt, Y):
    fld = MlpField(net)
    dtc = dt[:, None]
    x_next, caches = rk4_step_cached(fld, X, V, dtc)
    r = x_next - X - Y
    tape, _ = rk4_step_vjp(fld, caches, 2.0 * r / r.size, dtc)
    return float(np.mean(r * r)), tape


def _check_data(datasets, need):
    datasets = list(datasets)
    if len(datasets) < need:
        raise InsufficientData(f"need at least {need} dataset(s)")
    n, m = datasets[0].n, datasets[0].m
    if any(d.n != n or d.m != m for d in datasets):
        raise ShapeMismatch("datasets have different dimensions")
    return datasets, n, m


def _adapt(net, X, V, dt, Y, steps, lr):
    for _ in range(steps):
        _, g = _loss_grad(net, X, V, dt, Y)
        net = sgd_step(net, g, lr)
    return net


def _meta_train(datasets, cfg, inner_steps, inner_lr, n, m):
    from .fe import data_scaled_init

    net = Mlp.init([n + m, *cfg.hidden, n], seed=cfg.seed)
    if cfg.epochs > 0:
        net = data_scaled_init(net, datasets)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamState.for_net(net, cfg.lr)
    decay = cfg.lr_final_frac ** (1.0 / max(cfg.epochs - 1, 1))
    trace = []
    for _ in range(cfg.epochs):
        total = GradTape.zeros_like(net)
        losses = []
        for d in datasets:
            size = min(2 * cfg.batch_size, len(d))
            idx = rng.permutation(len(d))[:size]
            sup, qry = idx[: size // 2], idx[size // 2:]
            fast = net
            if inner_steps:
                fast = _adapt(net, d.x[sup], d.v[sup], d.dt[sup], d.y[sup], inner_steps, inner_lr)
            loss, g = _loss_grad(fast, d.x[qry], d.v[qry], d.dt[qry], d.y[qry])
            losses.append(loss)
            total.add_(g)
        if not total.is_finite():
            raise NonFiniteGradient("meta-gradient is not finite")
        net = adam_step(opt, net, total.scale(1.0 / len(datasets)))
        opt.lr *= decay
        trace.append(float(np.mean(losses)))
    return net, trace


def _cfg_dict(cfg):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}


def train_node(datasets, cfg=None):
    """Pooled one-step training of a single neural ODE over all worlds."""
    cfg = cfg or NodeConfig()
    datasets, n, m = _check_data(datasets, 1)
    net, trace = _meta_train(datasets, cfg, 0, 0.0, n, m)
    return NodeModel(net, _cfg_dict(cfg), trace)


def train_maml(datasets, cfg=None):
    """First-order MAML: query gradients at inner-adapted parameters drive the meta step."""
    cfg = cfg or MamlConfig()
    datasets, n, m = _check_data(datasets, 2)
    net, trace = _meta_train(datasets, cfg, cfg.inner_steps, cfg.inner_lr, n, m)
    return MamlModel(net, _cfg_dict(cfg), trace)


def maml_adapt_online(model, transition=None):
    """Push a transition and re-adapt from the meta-parameters on the buffer.

    Falls back to the meta-parameters (and counts a fallback) if the inner
    loop produces non-finite values.
    """
    if transition is not None:
        model.buffer.append(transition)
    if not model.buffer or model.inner_steps == 0:
        return model.net
    X = np.array([t.x for t in model.buffer])
    V = np.array([t.v for t in model.buffer])
    dt = np.array([t.dt for t in model.buffer])
    Y = np.array([t.x_next - t.x for t in model.buffer])
    with np.errstate(all="ignore"):
        try:
            fast = _adapt(model.net, X, V, dt, Y, model.inner_steps, model.inner_lr)
        except FloatingPointError:
            fast = None
    if fast is None or not all(np.all(np.isfinite(w)) for w in fast.weights + fast.biases):
        model.fallbacks += 1
        return model.net
    return fast


def load_model(path):
    try:
        d = json.loads(Path(path).read_text())
        if "bases" in d:
            from .fe import BasisSet
            return BasisSet.from_dict(d)
        return (MamlModel if d.get("kind") == "maml" else NodeModel).from_dict(d)
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError, ValueError) as exc:
        if isinstance(exc, FerlsError):
            raise
        raise ParseError(f"{path}: not a valid checkpoint ({type(exc).__name__}: {exc})") from None
