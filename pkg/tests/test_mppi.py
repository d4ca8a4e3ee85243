import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ferls import mppi
from ferls.errors import AllInfiniteCosts, InvalidConfig
from ferls.experiments import DoubleIntegrator

SOFTMIN_01 = (0.7310585786300049, 0.2689414213699951)  # 1 / (1 + e^{-1}), logistic closed form
GOAL = np.array([1.0, 0.0])


def quad_cost(goal=GOAL, wv=0.1, wt=10.0):
    return mppi.CostSpec(lambda X: ((X - goal) ** 2 * [1.0, wv]).sum(1),
                         lambda X: wt * ((X - goal) ** 2).sum(1))


def di_cfg(**kw):
    base = dict(horizon=20, num_rollouts=200, sigma=1.0, temperature=0.1, u_min=-2, u_max=2,
                smoothing_window=3)
    base.update(kw)
    return mppi.MppiConfig(**base)


@pytest.mark.parametrize("kw", [dict(horizon=0), dict(num_rollouts=0), dict(temperature=0.0),
                                dict(smoothing_window=4), dict(dt=0.0)])
def test_config_validation(kw):
    with pytest.raises(InvalidConfig):
        mppi.MppiConfig(**kw)


def test_zero_noise_rollouts_identical():
    cfg = di_cfg(sigma=0.0, num_rollouts=8)
    plan = mppi.Plan(np.linspace(-1, 1, 20)[:, None])
    costs, noises = mppi.sample_rollouts(DoubleIntegrator(), np.zeros(2), plan, cfg, quad_cost(), seed=0)
    assert not np.any(noises)
    assert np.all(costs == costs[0])


def test_single_step_cost():
    cfg = mppi.MppiConfig(horizon=1, num_rollouts=1, sigma=0.3, smoothing_window=1)
    di = DoubleIntegrator()
    cost = mppi.CostSpec(lambda X: np.zeros(len(X)), lambda X: ((X - GOAL) ** 2).sum(1))
    x0 = np.array([0.2, 0.5])
    plan = mppi.Plan(np.array([[0.4]]))
    costs, noises = mppi.sample_rollouts(di, x0, plan, cfg, cost, seed=3)
    v0 = plan.nominal[0] + noises[0, 0]
    assert costs[0] == pytest.approx(float(((di(x0, v0, 0.1)[0] - GOAL) ** 2).sum()), rel=1e-14)


def test_control_cost_charged_on_sampled_controls():
    cfg = mppi.MppiConfig(horizon=3, num_rollouts=4, sigma=0.5, control_cost=2.0, smoothing_window=1)
    zero = mppi.CostSpec(lambda X: np.zeros(len(X)), lambda X: np.zeros(len(X)))
    plan = mppi.Plan(np.full((3, 1), 0.2))
    costs, noises = mppi.sample_rollouts(DoubleIntegrator(), np.zeros(2), plan, cfg, zero, seed=1)
    np.testing.assert_allclose(costs, (0.5 * 2.0 * (0.2 + noises[..., 0]) ** 2).sum(1), rtol=1e-13)


def test_rollouts_deterministic_and_schedule_free():
    cfg = di_cfg(num_rollouts=16)
    plan = mppi.Plan.zeros(cfg, 1)
    a = mppi.sample_rollouts(DoubleIntegrator(), np.zeros(2), plan, cfg, quad_cost(), seed=(4, 2))
    b = mppi.sample_rollouts(DoubleIntegrator(), np.zeros(2), plan, cfg, quad_cost(), seed=(4, 2))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    # rollout i depends on (seed, i) only, not on how many rollouts there are
    few = mppi.sample_noise(di_cfg(num_rollouts=5), 1, (4, 2))
    np.testing.assert_array_equal(few, mppi.sample_noise(cfg, 1, (4, 2))[:5])


def test_divergent_rollouts_get_infinite_cost():
    def model(X, V, dt):
        out = X + V * dt
        out[V[:, 0] > 0] = np.nan
        return out
    cfg = mppi.MppiConfig(horizon=2, num_rollouts=30, sigma=1.0, smoothing_window=1)
    cost = mppi.CostSpec(lambda X: np.zeros(len(X)), lambda X: np.zeros(len(X)))
    costs, noises = mppi.sample_rollouts(model, np.zeros(1), mppi.Plan.zeros(cfg, 1), cfg, cost, seed=0)
    assert np.all(np.isinf(costs) == np.any(noises[..., 0] > 0, axis=1))
    w = mppi.softmin_weights(costs, 1.0)
    assert np.all(w[np.isinf(costs)] == 0)


def test_softmin_examples():
    np.testing.assert_allclose(mppi.softmin_weights(np.full(4, 3.0), 1.0), np.full(4, 0.25))
    np.testing.assert_array_equal(mppi.softmin_weights(np.array([0.0, np.inf]), 1.0), [1.0, 0.0])
    np.testing.assert_allclose(mppi.softmin_weights(np.array([0.0, 1.0]), 1.0), SOFTMIN_01, atol=1e-12)
    with pytest.raises(AllInfiniteCosts):
        mppi.softmin_weights(np.array([np.inf, np.inf]), 1.0)
    with pytest.raises(InvalidConfig):
        mppi.softmin_weights(np.zeros(2), 0.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.floats(1e-2, 1e2), st.floats(-1e3, 1e3))
def test_softmin_invariants(costs, temp, shift):
    c = np.array(costs)
    w = mppi.softmin_weights(c, temp)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(mppi.softmin_weights(c + shift, temp), w, rtol=1e-9, atol=1e-12)


def test_uniform_weights_small_drift():
    r = 10_000
    cfg = mppi.MppiConfig(horizon=1, num_rollouts=r, sigma=0.25, smoothing_window=1)
    noises = mppi.sample_noise(cfg, 1, 0)
    plan = mppi.Plan(np.zeros((1, 1)))
    new = mppi.update_plan(plan, noises, np.full(r, 1.0 / r), cfg, shift_plan=False)
    assert abs(new.nominal[0, 0]) < 3 * 0.5 / np.sqrt(r)


def test_single_rollout_update_and_identity_smoothing():
    cfg = mppi.MppiConfig(horizon=4, num_rollouts=1, sigma=1.0, smoothing_window=1)
    plan = mppi.Plan(np.arange(4.0)[:, None])
    eps = mppi.sample_noise(cfg, 1, 9)
    new = mppi.update_plan(plan, eps, np.ones(1), cfg, shift_plan=False)
    np.testing.assert_array_equal(new.nominal, plan.nominal + eps[0])


def test_smoothing_and_shift():
    cfg = mppi.MppiConfig(horizon=5, num_rollouts=1, sigma=0.0, smoothing_window=3)
    plan = mppi.Plan(np.array([[0.0], [3.0], [0.0], [3.0], [6.0]]))
    new = mppi.update_plan(plan, np.zeros((1, 5, 1)), np.ones(1), cfg)
    # centered window, truncated at the ends, then shifted with the last control repeated
    np.testing.assert_allclose(new.nominal[:, 0], [1.0, 2.0, 3.0, 4.5, 4.5])


def test_zero_temperature_follows_argmin():
    cfg = di_cfg(temperature=1e-6, smoothing_window=1, u_min=None, u_max=None)
    plan = mppi.Plan.zeros(cfg, 1)
    costs, noises = mppi.sample_rollouts(DoubleIntegrator(), np.zeros(2), plan, cfg, quad_cost(), seed=5)
    w = mppi.softmin_weights(costs, cfg.temperature)
    new = mppi.update_plan(plan, noises, w, cfg, shift_plan=False)
    np.testing.assert_allclose(new.nominal, noises[np.argmin(costs)], atol=1e-12)


@pytest.mark.parametrize("episode", range(3))
def test_double_integrator_reaches_goal(episode):
    cfg, di, cost = di_cfg(), DoubleIntegrator(), quad_cost()
    x, plan = np.zeros(2), mppi.Plan.zeros(cfg, 1)
    for i in range(100):
        plan, u = mppi.plan_step(di, x, plan, cfg, cost, seed=(episode, i))
        x = di(x[None], u[None], 0.1)[0]
        if np.linalg.norm(x - GOAL) < 0.1:
            break
    assert np.linalg.norm(x - GOAL) < 0.1


def test_plan_step_deterministic():
    cfg, di, cost = di_cfg(), DoubleIntegrator(), quad_cost()
    a = mppi.plan_step(di, np.zeros(2), mppi.Plan.zeros(cfg, 1), cfg, cost, seed=7)
    b = mppi.plan_step(di, np.zeros(2), mppi.Plan.zeros(cfg, 1), cfg, cost, seed=7)
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[0].nominal, b[0].nominal)
    assert np.array_equal(a[0].weights, b[0].weights)


def test_update_does_not_increase_expected_cost():
    cfg = di_cfg(num_rollouts=100, temperature=1.0, smoothing_window=1)
    di, cost = DoubleIntegrator(), quad_cost()
    rng = np.random.default_rng(0)
    diffs = []
    for trial in range(50):
        x0 = rng.uniform(-1, 1, 2)
        plan = mppi.Plan(rng.uniform(-1, 1, (cfg.horizon, 1)))
        before, noises = mppi.sample_rollouts(di, x0, plan, cfg, cost, seed=(trial, 0))
        w = mppi.softmin_weights(before, cfg.temperature)
        new = mppi.update_plan(plan, noises, w, cfg, shift_plan=False)
        # fresh noise for the evaluation of both nominals
        old_eval, _ = mppi.sample_rollouts(di, x0, plan, cfg, cost, seed=(trial, 1))
        new_eval, _ = mppi.sample_rollouts(di, x0, new, cfg, cost, seed=(trial, 1))
        diffs.append(new_eval.mean() - old_eval.mean())
    diffs = np.array(diffs)
    assert diffs.mean() <= 3 * diffs.std(ddof=1) / np.sqrt(len(diffs))
