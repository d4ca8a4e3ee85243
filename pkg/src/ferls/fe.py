"""Function encoder with neural-ODE basis functions.

A :class:`BasisSet` holds ``k`` vector fields ``g_j(x, v)`` (one stacked MLP).
A world is represented by coefficients ``alpha``. Column ``j`` of the
regression matrix ``Phi`` is the increment basis ``j`` produces over ``dt``
with ``v`` held fixed, and the predicted state change is ``Phi @ alpha``.
Two quadratures are supported:

* ``"rk4"`` (default): each basis is integrated on its own with RK4,
  ``Phi[:, j] = RK4_dt(g_j)(x) - x``. Fitting, recursive updates and
  prediction all use the same linear model.
* ``"euler"``: ``Phi[:, j] = dt * g_j(x, v)`` for fitting, while predictions
  integrate the combined field ``sum_j alpha_j g_j`` with RK4. ``Phi @ alpha``
  then only approximates the prediction, to ``O(dt^2)``.
"""
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientData, NonFiniteState, ShapeMismatch
from .net import AdamState, GradTape, Mlp, adam_step, rk4_step_cached, rk4_step_vjp
from .numerics import rk4_step, solve_spd

DEFAULT_RIDGE = 1e-3


@dataclass
class FeTrainConfig:
    k: int = 8
    hidden: tuple = (64, 64)
    epochs: int = 1000
    lr: float = 1e-3
    # learning rate decays exponentially to lr * lr_final_frac over the run
    lr_final_frac: float = 1.0
    lam: float = DEFAULT_RIDGE
    seed: int = 0
    batch_size: int = 256
    quadrature: str = "rk4"
    # regress raw state deltas; True divides both prediction and target by dt
    loss_per_dt: bool = False


QUADRATURES = ("rk4", "euler")


class BasisSet:
    def __init__(self, nets, n, m, config=None, loss_trace=None, quadrature="rk4"):
        if nets.stack is None:
            nets = Mlp.stack_nets([nets])
        if nets.n_in != n + m or nets.n_out != n:
            raise ShapeMismatch(f"basis nets map {nets.n_in}->{nets.n_out}, expected {n + m}->{n}")
        self.nets = nets
        self.n = n
        self.m = m
        self.config = config or {}
        self.loss_trace = list(loss_trace or [])
        if quadrature not in QUADRATURES:
            raise ValueError(f"quadrature must be one of {QUADRATURES}")
        self.quadrature = quadrature

    @classmethod
    def init(cls, n, m, k=8, hidden=(64, 64), seed=0, quadrature="rk4"):
        if k < 1:
            raise ValueError("need at least one basis function")
        return cls(Mlp.init([n + m, *hidden, n], seed=seed, stack=k), n, m, quadrature=quadrature)

    @property
    def k(self):
        return self.nets.stack

    def eval(self, x, v):
        """Basis fields at a batch of inputs: ``(k, N, n)``."""
        x, v = _batch(x, self.n), _batch(v, self.m)
        return self.nets.forward_cached(np.concatenate([x, v], axis=1))[0]

    def field(self, alpha):
        return CombinedField(self.nets, _alpha(alpha, self.k), self.n)

    def to_dict(self):
        return {"k": self.k, "n": self.n, "m": self.m, "quadrature": self.quadrature,
                "bases": [net.to_dict() for net in self.nets.unstack()],
                "config": self.config, "loss_trace": self.loss_trace}

    @classmethod
    def from_dict(cls, d):
        nets = Mlp.stack_nets([Mlp.from_dict(b) for b in d["bases"]])
        if nets.stack != int(d["k"]):
            raise ShapeMismatch("checkpoint k does not match number of bases")
        return cls(nets, int(d["n"]), int(d["m"]), d.get("config"), d.get("loss_trace"),
                   d.get("quadrature", "rk4"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class CombinedField:
    """``z -> sum_j alpha_j g_j(z, v)`` with reverse mode through all bases."""

    def __init__(self, nets, alpha, n):
        self.nets = nets
        self.alpha = alpha
        self.n = n

    def __call__(self, z, v):
        return self.cached(z, v)[0]

    def cached(self, z, v):
        g, acts = self.nets.forward_cached(np.concatenate([z, v], axis=-1))
        return np.einsum("k,k...->...", self.alpha, g), acts

    def vjp(self, acts, out_bar):
        g_bar = self.alpha[:, None, None] * out_bar[None]
        tape, in_bar = self.nets.vjp(acts, g_bar)
        return tape, in_bar[..., :self.n].sum(axis=0)

    def zero_tape(self):
        return GradTape.zeros_like(self.nets)


class StackedField:
    """Every basis integrated on its own state: ``z`` is ``(k, N, n)``."""

    def __init__(self, nets, n):
        self.nets = nets
        self.n = n

    def __call__(self, z, v):
        return self.cached(z, v)[0]

    def cached(self, z, v):
        v = np.broadcast_to(v, z.shape[:-1] + v.shape[-1:])
        return self.nets.forward_cached(np.concatenate([z, v], axis=-1))

    def vjp(self, acts, out_bar):
        tape, in_bar = self.nets.vjp(acts, out_bar)
        return tape, in_bar[..., :self.n]

    def zero_tape(self):
        return GradTape.zeros_like(self.nets)


def _batch(a, width):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != width:
        raise ShapeMismatch(f"expected (N, {width}), got {a.shape}")
    return a


def _alpha(alpha, k):
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if alpha.shape[0] != k:
        raise ShapeMismatch(f"coefficients have length {alpha.shape[0]}, expected {k}")
    if not np.all(np.isfinite(alpha)):
        raise NonFiniteState("non-finite coefficients")
    return alpha


def _per_basis_increments(nets, n, X, V, dtc, cached=False):
    Z = np.broadcast_to(X, (nets.stack,) + X.shape)
    fld = StackedField(nets, n)
    if cached:
        Zn, caches = rk4_step_cached(fld, Z, V, dtc)
        return Zn - Z, fld, caches
    return rk4_step(lambda z: fld(z, V), Z, dtc, check=False) - Z


def basis_matrices(bs, X, V, dt):
    """Regression matrices for a batch, shape ``(N, n, k)``."""
    X, V = _batch(X, bs.n), _batch(V, bs.m)
    dt = np.broadcast_to(np.asarray(dt, dtype=np.float64), (X.shape[0],))
    if bs.quadrature == "euler":
        return dt[:, None, None] * bs.eval(X, V).transpose(1, 2, 0)
    return _per_basis_increments(bs.nets, bs.n, X, V, dt[:, None]).transpose(1, 2, 0)


def basis_matrix(bs, x, v, dt):
    """``Phi_t`` for one transition, shape ``(n, k)``."""
    return basis_matrices(bs, _batch(x, bs.n), _batch(v, bs.m), dt)[0]


def predict_delta(bs, alpha, x, v, dt, check=True):
    """Predicted state change over ``dt``. Accepts one state or a batch."""
    single = np.ndim(x) == 1
    X, V = _batch(x, bs.n), _batch(v, bs.m)
    if V.shape[0] != X.shape[0]:
        V = np.broadcast_to(V, (X.shape[0], bs.m))
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt <= 0):
        raise ValueError("dt must be positive")
    alpha = _alpha(alpha, bs.k)
    dtb = dt.reshape(-1, 1) if dt.ndim else dt
    with np.errstate(all="ignore"):
        if bs.quadrature == "euler":
            fld = bs.field(alpha)
            d = rk4_step(lambda z: fld(z, V), X, dtb, check=False) - X
        else:
            d = np.einsum("k,kNn->Nn", alpha, _per_basis_increments(bs.nets, bs.n, X, V, dtb))
    if check and not np.all(np.isfinite(d)):
        raise NonFiniteState("prediction is not finite")
    return d[0] if single else d


def rollout(bs, alpha, x0, controls, dt):
    """Iterate :func:`predict_delta`; returns the ``len(controls)`` predicted states."""
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim == 1:
        controls = controls.reshape(-1, bs.m)
    if len(controls) == 0:
        raise ValueError("controls must be nonempty")
    x = np.asarray(x0, dtype=np.float64)
    out = []
    for i, v in enumerate(controls):
        try:
            x = x + predict_delta(bs, alpha, x, v, dt)
        except NonFiniteState:
            raise NonFiniteState("rollout diverged", step=i) from None
        out.append(x)
    return np.array(out)


def _normal_equations(Phi, Y):
    N = Phi.shape[0]
    G = np.einsum("tni,tnj->ij", Phi, Phi) / N
    F = np.einsum("tni,tn->i", Phi, Y) / N
    return G, F


def fit_coefficients(Phi, Y, lam=DEFAULT_RIDGE):
    """Solve ``(G + lam I) alpha = F`` from stacked regression matrices."""
    G, F = _normal_equations(Phi, Y)
    return solve_spd(G + lam * np.eye(G.shape[0]), F)


def batch_fit(bs, data, lam=DEFAULT_RIDGE):
    """Closed-form ridge fit of the coefficients to a dataset."""
    if len(data) == 0:
        raise InsufficientData("empty dataset")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    Phi = basis_matrices(bs, data.x, data.v, data.dt)
    return fit_coefficients(Phi, data.y, lam)


def _step_loss_grad(nets, n, alpha, X, V, dt, Y, per_dt, quadrature):
    dtc = dt[:, None]
    if quadrature == "euler":
        fld = CombinedField(nets, alpha, n)
        x_next, caches = rk4_step_cached(fld, X, V, dtc)
        r = x_next - X - Y
    else:
        D, fld, caches = _per_basis_increments(nets, n, X, V, dtc, cached=True)
        r = np.einsum("k,kNn->Nn", alpha, D) - Y
    if per_dt:
        r = r / dtc
    loss = float(np.mean(r * r))
    cot = 2.0 * r / r.size
    if per_dt:
        cot = cot / dtc
    if quadrature != "euler":
        cot = alpha[:, None, None] * cot[None]
    tape, _ = rk4_step_vjp(fld, caches, cot, dtc)
    return loss, tape


def train(datasets, cfg=None, init=None):
    """Train basis functions across worlds by alternating minimization.

    Each epoch, for every dataset: draw a support/query split, fit
    coefficients on the support set (held constant for the step), and
    accumulate the gradient of the query MSE of RK4 predictions. One Adam
    step is taken on the average over datasets.
    """
    cfg = cfg or FeTrainConfig()
    datasets = list(datasets)
    if len(datasets) < 2:
        raise InsufficientData("function encoder training needs at least two worlds")
    n, m = datasets[0].n, datasets[0].m
    for d in datasets:
        if d.n != n or d.m != m:
            raise ShapeMismatch("datasets have different dimensions")
        if len(d) < 4:
            raise InsufficientData(f"dataset {d.world_id!r} has fewer than 4 transitions")
    if init is None:
        bs = BasisSet.init(n, m, cfg.k, cfg.hidden, cfg.seed, cfg.quadrature)
        if cfg.epochs > 0:
            bs.nets = data_scaled_init(bs.nets, datasets)
    else:
        bs = init
    nets = bs.nets
    rng = np.random.default_rng(cfg.seed)
    opt = AdamState.for_net(nets, cfg.lr)
    trace = list(bs.loss_trace)
    decay = cfg.lr_final_frac ** (1.0 / max(cfg.epochs - 1, 1))
    for _ in range(cfg.epochs):
        total = GradTape.zeros_like(nets)
        losses = []
        tmp = BasisSet(nets, n, m, quadrature=bs.quadrature)
        for d in datasets:
            size = min(2 * cfg.batch_size, len(d))
            idx = rng.permutation(len(d))[:size]
            sup, qry = idx[: size // 2], idx[size // 2:]
            Phi = basis_matrices(tmp, d.x[sup], d.v[sup], d.dt[sup])
            alpha = fit_coefficients(Phi, d.y[sup], cfg.lam)
            loss, tape = _step_loss_grad(nets, n, alpha, d.x[qry], d.v[qry], d.dt[qry], d.y[qry],
                                         cfg.loss_per_dt, bs.quadrature)
            losses.append(loss)
            total.add_(tape)
        nets = adam_step(opt, nets, total.scale(1.0 / len(datasets)))
        opt.lr *= decay
        trace.append(float(np.mean(losses)))
    conf = dict(bs.config)
    conf.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()})
    return BasisSet(nets, n, m, conf, trace, bs.quadrature)


def data_scaled_init(net, datasets):
    """Fold input standardization and output scale into the first/last layers.

    Keeps the plain-MLP parameterization (and checkpoint format) while making
    the initial network see unit-scale inputs and emit derivative-scale
    outputs.
    """
    inp = np.concatenate([np.concatenate([d.x, d.v], axis=1) for d in datasets])
    rate = np.concatenate([d.y / d.dt[:, None] for d in datasets])
    mean, std = inp.mean(axis=0), inp.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    out_scale = np.where(rate.std(axis=0) > 1e-8, rate.std(axis=0), 1.0)
    net = net.copy()
    W0 = net.weights[0] / std[:, None]
    net.biases[0] = net.biases[0] - np.matmul(mean / std, net.weights[0])
    net.weights[0] = W0
    net.weights[-1] = net.weights[-1] * out_scale
    net.biases[-1] = net.biases[-1] * out_scale
    return net


def reconstruction_mse(bs, alpha, data):
    pred = predict_delta(bs, alpha, data.x, data.v, data.dt)
    return float(np.mean((pred - data.y) ** 2))
