import numpy as np
import pytest

from ferls import baselines as B
from ferls.dataset import Transition
from ferls.errors import InsufficientData
from ferls.net import Mlp

from test_fe import linear_family

MUS = (0.5, 1.5)
DT = 0.1


def small(cls=B.NodeConfig, **kw):
    base = dict(hidden=(16,), epochs=300, lr=1e-2, seed=0)
    base.update(kw)
    return cls(**base)


@pytest.fixture(scope="module")
def family():
    return linear_family(MUS, N=200)


def test_zero_epochs_is_init(family):
    m = B.train_node(family, small(epochs=0, seed=5))
    ref = Mlp.init([2, 16, 1], seed=5)
    assert all(np.array_equal(a, b) for a, b in zip(m.net.weights, ref.weights))
    assert m.loss_trace == []


def test_pooled_model_learns_mean_dynamics(family):
    m = B.train_node(family, small())
    x = np.linspace(-1, 1, 21)[:, None]
    slopes = [np.exp(mu * DT) - 1 for mu in MUS]
    spread = (slopes[1] - slopes[0]) / 2
    d = m.predict_delta(x, np.zeros_like(x), DT)[:, 0]
    assert np.max(np.abs(d - np.mean(slopes) * x[:, 0])) < 0.25 * spread
    # irreducible pooled residual: best single slope over the pooled samples
    xs = np.concatenate([ds.x[:, 0] for ds in family])
    ys = np.concatenate([ds.y[:, 0] for ds in family])
    s_star = (xs @ ys) / (xs @ xs)
    floor = np.mean((ys - s_star * xs) ** 2)
    mse = np.mean((m.predict_delta(xs[:, None], np.zeros((len(xs), 1)), DT)[:, 0] - ys) ** 2)
    assert 0.95 * floor <= mse <= 1.3 * floor


def test_zero_inner_steps_equals_pooled_training(family):
    node = B.train_node(family, small(epochs=20))
    maml = B.train_maml(family, small(B.MamlConfig, epochs=20, inner_steps=0))
    assert all(np.array_equal(a, b) for a, b in zip(node.net.weights + node.net.biases,
                                                    maml.net.weights + maml.net.biases))
    assert node.loss_trace == maml.loss_trace


def test_maml_adaptation_gain(family):
    m = B.train_maml(family, small(B.MamlConfig, inner_steps=5, inner_lr=0.5))
    for d in family:
        q = slice(0, 100)
        pre = np.mean((m.predict_delta(d.x[q], d.v[q], DT) - d.y[q]) ** 2)
        fast = B._adapt(m.net, d.x[100:], d.v[100:], d.dt[100:], d.y[100:], 5, 0.5)
        post = np.mean((m.predict_delta(d.x[q], d.v[q], DT, net=fast) - d.y[q]) ** 2)
        assert post < pre


def test_maml_reproducible(family):
    a = B.train_maml(family, small(B.MamlConfig, epochs=10))
    b = B.train_maml(family, small(B.MamlConfig, epochs=10))
    assert a.loss_trace == b.loss_trace
    assert all(np.array_equal(x, y) for x, y in zip(a.net.weights, b.net.weights))


def test_maml_needs_two_worlds(family):
    with pytest.raises(InsufficientData):
        B.train_maml(family[:1], small(B.MamlConfig, epochs=1))


def _tr(x=0.5, y=0.06):
    return Transition(np.array([x]), np.zeros(1), DT, np.array([x + y]))


def test_online_empty_buffer_returns_meta(family):
    m = B.train_maml(family, small(B.MamlConfig, epochs=5))
    m.reset()
    assert B.maml_adapt_online(m) is m.net


def test_online_buffer_loss_descends(family):
    m = B.train_maml(family, small(B.MamlConfig, epochs=5))
    m.reset(buffer_size=5, inner_steps=1)
    m.inner_lr = 1e-2
    tr = _tr()
    for _ in range(5):
        B.maml_adapt_online(m, tr)
    assert len(m.buffer) == 5
    net, losses = m.net, []
    X, V, dt, Y = tr.x[None], tr.v[None], np.array([DT]), tr.y[None]
    for _ in range(6):
        losses.append(B._loss_grad(net, X, V, dt, Y)[0])
        net = B._adapt(net, X, V, dt, Y, 1, m.inner_lr)
    assert all(b < a for a, b in zip(losses, losses[1:]))
    # re-adapts from the meta-parameters each call
    m.reset(buffer_size=5, inner_steps=5)
    first = B.maml_adapt_online(m, tr)
    m.buffer.clear()
    again = B.maml_adapt_online(m, tr)
    assert all(np.array_equal(a, b) for a, b in zip(first.weights, again.weights))


def test_online_fallback_on_divergence(family):
    m = B.train_maml(family, small(B.MamlConfig, epochs=5))
    m.reset(buffer_size=1, inner_steps=5)
    m.inner_lr = 1e300
    net = B.maml_adapt_online(m, _tr(y=50.0))
    assert net is m.net and m.fallbacks == 1
    assert np.all(np.isfinite(m.predict_delta(np.array([0.3]), np.zeros(1), DT, net=net)))


def test_checkpoints_round_trip(tmp_path, family):
    for model in (B.train_node(family, small(epochs=3)), B.train_maml(family, small(B.MamlConfig, epochs=3))):
        p = tmp_path / f"{model.kind}.json"
        model.save(p)
        back = B.load_model(p)
        assert type(back) is type(model)
        x = np.array([[0.2]])
        np.testing.assert_array_equal(back.predict_delta(x, [[0.0]], DT), model.predict_delta(x, [[0.0]], DT))
    assert back.inner_steps == 5 and back.buffer.maxlen == 100
