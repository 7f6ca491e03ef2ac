import numpy as np
import pytest
from scipy.optimize import minimize

from pirl import baseline as B
from pirl import env as E
from pirl.rewards import RewardKind


def short(factory, kind, T=10):
    # integral terms must switch on inside a 10-step horizon
    cfg = factory(kind, episode_len=T)
    rw = cfg.reward
    from dataclasses import replace

    return replace(cfg, reward=replace(rw, t_threshold=3))


@pytest.mark.parametrize("kind", list(RewardKind))
@pytest.mark.parametrize("factory", [E.acc_config, E.lane_config])
def test_cost_equals_negated_env_return(kind, factory):
    cfg = factory(kind)
    lo, hi = cfg.action_bounds
    seq = np.random.default_rng(0).uniform(lo, hi, cfg.episode_len)
    log = E.rollout(cfg, seq)
    assert B.rollout_cost(seq, cfg) == pytest.approx(-E.undiscounted_return(log), rel=1e-12)


def test_equilibrium_start_costs_nothing():
    cfg = E.acc_config(initial_state=(0.0, 0.0, 0.0))
    zeros = np.zeros(cfg.episode_len)
    assert B.rollout_cost(zeros, cfg) == 0.0
    assert not B.cost_gradient(zeros, cfg).any()


@pytest.mark.parametrize("kind", list(RewardKind))
@pytest.mark.parametrize("factory", [E.acc_config, E.lane_config])
def test_analytic_gradient_matches_finite_differences(kind, factory):
    cfg = short(factory, kind)
    lo, hi = cfg.action_bounds
    rng = np.random.default_rng(1)
    for _ in range(3):
        seq = rng.uniform(0.9 * lo, 0.9 * hi, 10)
        g = B.cost_gradient(seq, cfg)
        fd = B.cost_gradient(seq, cfg, mode="fd", fd_step=1e-6 * (hi - lo))
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_last_control_only_touches_final_step_terms():
    cfg = short(E.acc_config, RewardKind.QUADRATIC)
    seq = np.random.default_rng(2).uniform(-2, 1.5, 10)
    g = B.cost_gradient(seq, cfg)
    S, rates, _ = B._simulate(seq, cfg)
    w, n = cfg.reward.weights, cfg.reward.normalizers
    # the spacing error after the last step does not yet depend on u_{T-1}
    expected = 2 * w.w2 * seq[-1] / n.act_max**2 + 2 * w.w3 * rates[-1] / (n.rate_nmax**2 * cfg.params.tau)
    assert g[-1] == pytest.approx(expected, rel=1e-12)


def test_projection_idempotent():
    cfg = E.acc_config()
    u = np.random.default_rng(0).normal(0, 5, 600)
    p = B.project(u, cfg)
    assert np.array_equal(B.project(p, cfg), p)
    assert p.min() >= -3 and p.max() <= 2


def test_optimum_start_converges_immediately():
    cfg = E.acc_config(initial_state=(0.0, 0.0, 0.0))
    res = B.optimize(np.zeros(600), cfg)
    assert res.converged and res.iterations == 1
    assert res.cost == 0.0


def test_lane_quadratic_optimization_improves_and_is_monotone():
    cfg = E.lane_config()
    res = B.optimize(np.zeros(150), cfg, B.BaselineConfig(iterations=300))
    assert res.cost < B.rollout_cost(np.zeros(150), cfg)
    assert all(b <= a for a, b in zip(res.cost_curve, res.cost_curve[1:]))


def test_pi_baseline_runs():
    cfg = E.acc_config(RewardKind.PI_METHOD2)
    res = B.optimize(np.zeros(600), cfg, B.BaselineConfig(iterations=100))
    assert res.cost < res.cost_curve[0]


def test_matches_independent_bounded_solver():
    # the quadratic ACC problem is a convex box-constrained QP
    cfg = E.acc_config()
    lo, hi = cfg.action_bounds
    ref = minimize(
        lambda u: B.rollout_cost(u, cfg),
        np.zeros(600),
        jac=lambda u: B.cost_gradient(u, cfg),
        method="L-BFGS-B",
        bounds=[(lo, hi)] * 600,
        options=dict(maxiter=2000, ftol=1e-15, gtol=1e-12),
    )
    res = B.optimize(np.zeros(600), cfg)
    assert res.cost == pytest.approx(ref.fun, rel=1e-3)
    assert res.cost <= ref.fun * (1 + 1e-3)


def test_fd_mode_optimizer():
    cfg = short(E.acc_config, RewardKind.QUADRATIC)
    res = B.optimize(np.zeros(10), cfg, B.BaselineConfig(iterations=50, gradient="fd"))
    assert res.cost <= res.cost_curve[0]


def test_config_validation():
    with pytest.raises(ValueError):
        B.BaselineConfig(iterations=0)
    with pytest.raises(ValueError):
        B.BaselineConfig(gradient="magic")
