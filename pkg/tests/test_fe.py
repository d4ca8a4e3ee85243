import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ferls import fe
from ferls.dataset import TerrainDataset
from ferls.errors import InsufficientData, NonFiniteState, ShapeMismatch
from ferls.net import Mlp


def const_basis(c, m=1, k=1, quadrature="rk4"):
    """Bases whose output is the constant vector ``c[j]`` (zero weights, bias c)."""
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    n = c.shape[1]
    nets = [Mlp((n + m, n), [np.zeros((n + m, n))], [c[j].copy()]) for j in range(k)]
    return fe.BasisSet(Mlp.stack_nets(nets), n, m, quadrature=quadrature)


def control_basis(n=2):
    """g(x, v) = v with n == m."""
    W = np.vstack([np.zeros((n, n)), np.eye(n)])
    return fe.BasisSet(Mlp((2 * n, n), [W], [np.zeros(n)]), n, n)


def linear_basis(a, quadrature="rk4"):
    """k=1, n=m=1 basis g(x, v) = a * x."""
    return fe.BasisSet(Mlp((2, 1), [np.array([[a], [0.0]])], [np.zeros(1)]), 1, 1, quadrature=quadrature)


def linear_family(mus, N=200, seed=0, dt=0.1):
    rng = np.random.default_rng(seed)
    out = []
    for mu in mus:
        x = rng.uniform(-1, 1, (N, 1))
        out.append(TerrainDataset(f"mu={mu}", x, np.zeros((N, 1)), dt, x * np.exp(mu * dt)))
    return out


@pytest.mark.parametrize("quadrature", fe.QUADRATURES)
def test_zero_bases_zero_matrix(quadrature):
    bs = const_basis(np.zeros((3, 2)), k=3, quadrature=quadrature)
    assert not np.any(fe.basis_matrix(bs, [1.0, 2.0], [0.5], 0.1))


@pytest.mark.parametrize("quadrature", fe.QUADRATURES)
def test_constant_basis_column(quadrature):
    bs = const_basis([[2.0, -1.0]], quadrature=quadrature)
    Phi = fe.basis_matrix(bs, [0.3, 0.4], [0.0], 0.1)
    assert Phi.shape == (2, 1)
    np.testing.assert_allclose(Phi[:, 0], [0.2, -0.1], rtol=1e-14)


def test_euler_columns_are_scaled_fields():
    bs = fe.BasisSet.init(2, 1, k=2, hidden=(8,), seed=3, quadrature="euler")
    x, v = np.array([0.4, -0.2]), np.array([0.7])
    alpha = np.array([0.6, -1.3])
    direct = 0.1 * (alpha[0] * bs.eval(x[None], v[None])[0, 0] + alpha[1] * bs.eval(x[None], v[None])[1, 0])
    np.testing.assert_allclose(fe.basis_matrix(bs, x, v, 0.1) @ alpha, direct, rtol=1e-12)


def test_rk4_columns_are_per_basis_flows():
    # one basis g = a x: its RK4 increment has the closed form x * (R(a dt) - 1)
    a, dt, x = -0.7, 0.1, 1.5
    z = a * dt
    R = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
    Phi = fe.basis_matrix(linear_basis(a), [x], [0.0], dt)
    assert Phi[0, 0] == pytest.approx(x * (R - 1), rel=1e-13)


@given(st.integers(0, 10_000))
def test_rk4_prediction_is_phi_alpha(seed):
    rng = np.random.default_rng(seed)
    bs = fe.BasisSet.init(2, 1, k=3, hidden=(8,), seed=seed % 97)
    x, v, alpha = rng.standard_normal(2), rng.standard_normal(1), rng.standard_normal(3)
    np.testing.assert_allclose(fe.predict_delta(bs, alpha, x, v, 0.1), fe.basis_matrix(bs, x, v, 0.1) @ alpha,
                               rtol=1e-12, atol=1e-14)


@given(st.integers(0, 10_000))
def test_euler_quadrature_close_to_rk4_prediction(seed):
    # Phi alpha (Euler) vs RK4 of the combined field differ by O(dt^2) |f|
    rng = np.random.default_rng(seed)
    bs = fe.BasisSet.init(2, 1, k=2, hidden=(8,), seed=seed % 89, quadrature="euler")
    x, v, alpha = rng.standard_normal(2), rng.standard_normal(1), rng.standard_normal(2)
    dt = 0.01
    lin = fe.basis_matrix(bs, x, v, dt) @ alpha
    f = np.linalg.norm(lin / dt)
    assert np.linalg.norm(fe.predict_delta(bs, alpha, x, v, dt) - lin) <= 10 * dt**2 * max(f, 1.0)


def test_euler_rk4_mismatch_is_measured():
    # the combined-field design is not linear in alpha at finite dt
    bs = linear_basis(1.0, quadrature="euler")
    alpha, dt, x = np.array([2.0]), 0.1, 1.0
    lin = (fe.basis_matrix(bs, [x], [0.0], dt) @ alpha)[0]
    rk = fe.predict_delta(bs, alpha, [x], [0.0], dt)[0]
    assert lin == pytest.approx(0.2)
    assert rk - lin == pytest.approx(0.2 ** 2 / 2 + 0.2 ** 3 / 6 + 0.2 ** 4 / 24, rel=1e-12)


@pytest.mark.parametrize("quadrature", fe.QUADRATURES)
def test_zero_alpha_predicts_no_motion(quadrature):
    bs = fe.BasisSet.init(3, 2, k=4, hidden=(8,), seed=0, quadrature=quadrature)
    X = np.random.default_rng(0).standard_normal((5, 3))
    assert not np.any(fe.predict_delta(bs, np.zeros(4), X, np.ones((5, 2)), 0.1))


@pytest.mark.parametrize("quadrature", fe.QUADRATURES)
def test_control_field_exact(quadrature):
    bs = control_basis()
    bs.quadrature = quadrature
    v = np.array([0.3, -1.2])
    np.testing.assert_allclose(fe.predict_delta(bs, [1.0], [5.0, 5.0], v, 0.1), 0.1 * v, rtol=1e-14)


def test_predict_errors():
    bs = fe.BasisSet.init(2, 1, k=2, hidden=(4,))
    with pytest.raises(ShapeMismatch):
        fe.predict_delta(bs, np.zeros(3), np.zeros(2), np.zeros(1), 0.1)
    with pytest.raises(ValueError):
        fe.predict_delta(bs, np.zeros(2), np.zeros(2), np.zeros(1), 0.0)
    huge = linear_basis(1e200)
    with pytest.raises(NonFiniteState):
        fe.predict_delta(huge, [1e200], [1e200], [0.0], 0.1)


def test_rollout_consistency():
    bs = fe.BasisSet.init(2, 1, k=2, hidden=(8,), seed=1)
    alpha = np.array([0.5, -0.2])
    x0 = np.array([0.3, 0.1])
    np.testing.assert_array_equal(fe.rollout(bs, np.zeros(2), x0, [[0.0]] * 4, 0.1), np.tile(x0, (4, 1)))
    one = fe.rollout(bs, alpha, x0, [[0.4]], 0.1)
    np.testing.assert_array_equal(one[0], x0 + fe.predict_delta(bs, alpha, x0, [0.4], 0.1))
    with pytest.raises(ValueError):
        fe.rollout(bs, alpha, x0, np.zeros((0, 1)), 0.1)


def test_rollout_reports_divergent_step():
    bs = linear_basis(1.0)
    with pytest.raises(NonFiniteState) as err:
        fe.rollout(bs, [1e6], [1.0], [[0.0]] * 100, 0.1)
    assert err.value.step is not None and 60 < err.value.step < 100


def _data(bs, N, seed, fn):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, bs.n))
    V = rng.standard_normal((N, bs.m))
    return TerrainDataset("w", X, V, 0.1, X + fn(X, V))


def test_batch_fit_exact_representation():
    bs = fe.BasisSet.init(2, 1, k=1, hidden=(8,), seed=4)
    data = _data(bs, 40, 0, lambda X, V: fe.basis_matrices(bs, X, V, 0.1)[:, :, 0])
    assert fe.batch_fit(bs, data, 0.0)[0] == pytest.approx(1.0, abs=1e-10)


def test_batch_fit_orthogonal_targets():
    bs = const_basis([[1.0, 0.0]])
    data = _data(bs, 10, 0, lambda X, V: np.column_stack([np.zeros(len(X)), X[:, 0]]))
    assert fe.batch_fit(bs, data, 0.0)[0] == pytest.approx(0.0, abs=1e-14)


def test_batch_fit_matches_pseudo_inverse():
    bs = fe.BasisSet.init(2, 1, k=3, hidden=(8,), seed=5)
    rng = np.random.default_rng(9)
    data = _data(bs, 60, 1, lambda X, V: 0.05 * rng.standard_normal(X.shape))
    Phi = fe.basis_matrices(bs, data.x, data.v, data.dt)
    oracle = np.linalg.pinv(Phi.reshape(-1, 3)) @ data.y.reshape(-1)
    np.testing.assert_allclose(fe.batch_fit(bs, data, 0.0), oracle, rtol=1e-8, atol=1e-10)


def test_batch_fit_zero_residual_when_representable():
    bs = fe.BasisSet.init(2, 1, k=3, hidden=(8,), seed=6)
    true = np.array([0.7, -0.4, 1.1])
    data = _data(bs, 50, 2, lambda X, V: fe.basis_matrices(bs, X, V, 0.1) @ true)
    alpha = fe.batch_fit(bs, data, 0.0)
    assert fe.reconstruction_mse(bs, alpha, data) < 1e-16
    np.testing.assert_allclose(alpha, true, rtol=1e-8)


def test_batch_fit_shrinks_with_ridge():
    bs = fe.BasisSet.init(2, 1, k=3, hidden=(8,), seed=6)
    data = _data(bs, 50, 3, lambda X, V: 0.1 * np.sin(X))
    norms = [np.linalg.norm(fe.batch_fit(bs, data, lam)) for lam in np.logspace(-6, 6, 13)]
    assert all(b <= a + 1e-15 for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-5 * norms[0]


def test_batch_fit_errors():
    bs = fe.BasisSet.init(2, 1, k=1, hidden=(4,))
    data = _data(bs, 5, 0, lambda X, V: X)
    with pytest.raises(ValueError):
        fe.batch_fit(bs, data, -1.0)


def test_zero_epochs_returns_init():
    ds = linear_family([-1, 1], N=20)
    cfg = fe.FeTrainConfig(k=2, hidden=(8,), epochs=0, seed=3)
    bs = fe.train(ds, cfg)
    ref = fe.BasisSet.init(1, 1, 2, (8,), 3)
    assert all(np.array_equal(a, b) for a, b in zip(bs.nets.weights, ref.nets.weights))
    assert bs.loss_trace == []


def test_train_needs_two_worlds():
    with pytest.raises(InsufficientData):
        fe.train(linear_family([1.0]), fe.FeTrainConfig(epochs=1))
    with pytest.raises(InsufficientData):
        fe.train(linear_family([1.0, 2.0], N=2), fe.FeTrainConfig(epochs=1))


def test_linear_family_is_learned():
    cfg = fe.FeTrainConfig(k=2, hidden=(16,), epochs=200, lr=1e-2, seed=0)
    bs = fe.train(linear_family([-2, -1, 1, 2]), cfg)
    trace = np.array(bs.loss_trace)
    assert len(trace) == 200
    assert trace[-10:].mean() <= 0.5 * trace[:10].mean()
    held = linear_family([-2, -1, 1, 2], seed=5)
    assert max(fe.reconstruction_mse(bs, fe.batch_fit(bs, d), d) for d in held) < 1e-4


def test_training_is_reproducible():
    cfg = fe.FeTrainConfig(k=2, hidden=(8,), epochs=5, lr=1e-2, seed=1)
    a = fe.train(linear_family([-1, 1], N=30), cfg)
    b = fe.train(linear_family([-1, 1], N=30), cfg)
    assert a.loss_trace == b.loss_trace


def test_checkpoint_round_trip(tmp_path):
    cfg = fe.FeTrainConfig(k=2, hidden=(8,), epochs=3, seed=1)
    bs = fe.train(linear_family([-1, 1], N=30), cfg)
    path = tmp_path / "fe.json"
    bs.save(path)
    back = fe.BasisSet.load(path)
    assert back.k == 2 and back.loss_trace == bs.loss_trace and back.quadrature == bs.quadrature
    x = np.array([[0.3]])
    np.testing.assert_array_equal(fe.predict_delta(back, [1.0, 0.5], x, [[0.0]], 0.1),
                                  fe.predict_delta(bs, [1.0, 0.5], x, [[0.0]], 0.1))
