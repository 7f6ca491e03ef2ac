import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from pirl import env as E
from pirl.errors import ConfigError, UsageError
from pirl.rewards import RewardKind, quadratic_reward


def test_acc_reset_is_scaled_initial_state():
    env = E.Env(E.acc_config())
    obs = env.reset()
    assert np.allclose(env.unscale(obs), [5, 5, 0])
    assert np.allclose(obs[:3], np.array([5, 5, 0]) / np.array(E.ACC_OBS_SCALE))
    assert list(obs[3:]) == [0.0, 0.0]
    assert env.state == (5.0, 5.0, 0.0)


def test_lane_reset_is_scaled_initial_state():
    env = E.Env(E.lane_config(observe_integral=False))
    obs = env.reset()
    assert len(obs) == 6
    assert np.allclose(env.unscale(obs), [4, 0, 30, 0, 0, 0])


def test_reset_deterministic_per_seed():
    cfg = E.acc_config(init_jitter=0.1, seed=5)
    a = E.Env(cfg).reset()
    b = E.Env(cfg).reset()
    assert np.array_equal(a, b)


def test_scaling_is_bijective():
    env = E.Env(E.lane_config())
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = rng.normal(size=6) * 10
        assert np.allclose(env.unscale(env.scale(s)), s, rtol=1e-12, atol=0)


def test_acc_first_step():
    env = E.Env(E.acc_config())
    env.reset()
    obs, r, done, info = env.step(0.0)
    assert info["state"] == pytest.approx((5.5, 5.0, 0.0))
    cfg = env.cfg.reward
    assert r == quadratic_reward(5.5, 0.0, 0.0, cfg.weights, cfg.normalizers)
    assert not done


def test_lane_no_actuation_keeps_offset():
    env = E.Env(E.lane_config())
    env.reset()
    rewards = []
    for _ in range(10):
        _, r, _, info = env.step(0.0)
        assert info["state"].e == 4.0
        rewards.append(r)
    assert len(set(rewards)) == 1


def test_action_is_clamped_and_rate_uses_pre_step_state():
    env = E.Env(E.acc_config())
    env.reset()
    _, _, _, info = env.step(10.0)
    assert info["action"] == 2.0
    assert info["rate"] == pytest.approx(2.0 / 0.4)


@pytest.mark.parametrize("kind", list(RewardKind))
@pytest.mark.parametrize("factory", [E.acc_config, E.lane_config])
def test_episode_length_rewards_and_integral(kind, factory):
    env = E.Env(factory(kind))
    env.reset()
    rng = np.random.default_rng(1)
    lo, hi = env.cfg.action_bounds
    done = False
    steps = 0
    c_prev = 0.0
    while not done:
        _, r, done, info = env.step(rng.uniform(lo, hi))
        steps += 1
        assert r <= 0 and math.isfinite(r)
        assert info["c_I"] >= c_prev
        c_prev = info["c_I"]
        assert done == (steps == env.cfg.episode_len)
    assert len(env.log) == env.cfg.episode_len
    with pytest.raises(UsageError):
        env.step(0.0)


def test_same_actions_give_identical_logs():
    cfg = E.lane_config(RewardKind.PI_METHOD2)
    acts = np.random.default_rng(3).uniform(-0.08, 0.08, 150)
    a, b = E.rollout(cfg, acts), E.rollout(cfg, acts)
    assert a == b


def test_truncation_charges_bounded_tail():
    cfg = E.acc_config(truncate_factor=1.0, episode_len=600)
    env = E.Env(cfg)
    env.reset()
    done = False
    while not done:
        _, r, done, info = env.step(-3.0)
    assert info["truncated"]
    assert env.t < 600 and info["remaining"] == 600 - env.t
    assert r == pytest.approx(info["step_reward"] + sum(info["tail"]), rel=1e-12)
    # each skipped step costs at least the error term at the cut
    e_term = (15.0 / 15.0) ** 2 / 3
    assert all(x <= -e_term for x in info["tail"])


@pytest.mark.parametrize("kind", [RewardKind.PI_METHOD1, RewardKind.PI_METHOD2])
def test_truncation_never_beats_staying_inside(kind):
    # a run that stays just inside the cut for the whole episode must score
    # better than one that leaves immediately
    cut = 1.0
    cfg = E.acc_config(kind, truncate_factor=cut, initial_state=(14.9, 0.0, 0.0))
    inside = E.rollout(cfg, np.zeros(600))
    assert max(abs(inside.errors)) <= 15.0
    leave = E.rollout(replace(cfg, initial_state=(14.9, 5.0, 0.0)), np.full(600, -3.0))
    assert len(leave) < 600
    assert E.undiscounted_return(leave) < E.undiscounted_return(inside)


def test_steady_state_error_examples():
    log = E.EpisodeLog(("e", "e_v", "a_r"))
    for e in [5.0] * 10 + [0.27] * 50:
        log.append((e, 0, 0), 0, 0, 0, 0)
    assert E.steady_state_error(log) == pytest.approx(0.27)
    log2 = E.EpisodeLog(("e", "e_v", "a_r"))
    for e in [3.0, 0.0, 0.0]:
        log2.append((e, 0, 0), 0, 0, 0, 0)
    assert E.steady_state_error(log2, 2) == 0.0
    log3 = E.EpisodeLog(("e", "e_v", "a_r"))
    for e in [9.0, 0.2, -0.4]:
        log3.append((e, 0, 0), 0, 0, 0, 0)
    assert E.steady_state_error(log3, 2) == pytest.approx(0.3)
    assert E.final_error(log3) == 0.4
    with pytest.raises(UsageError):
        E.steady_state_error(E.EpisodeLog(("e",)))
    with pytest.raises(UsageError):
        E.steady_state_error(log3, 4)


def test_undiscounted_return():
    log = E.EpisodeLog(("e",))
    assert E.undiscounted_return(log) == 0
    for r in (-1.0, -2.0):
        log.append((0,), 0, r, 0, 0)
    assert E.undiscounted_return(log) == -3.0
    log = E.rollout(E.acc_config(), np.random.default_rng(0).uniform(-3, 2, 600))
    assert E.undiscounted_return(log) == pytest.approx(sum(log.rewards), rel=1e-12)
    assert E.undiscounted_return(log) < 0


def test_peak_rate():
    log = E.rollout(E.acc_config(initial_state=(0, 0, 0)), np.zeros(600))
    assert E.peak_rate(log) == 0.0
    log = E.rollout(E.acc_config(), [2.0])
    assert E.peak_rate(log) == pytest.approx(5.0)
    log = E.EpisodeLog(("e",))
    for x in [0.1, 0.5, 0.9, 1.7]:
        log.append((0,), 0, 0, x, 0)
    assert E.peak_rate(log) == 1.7


def test_csv_export_schema_and_round_trip(tmp_path):
    log = E.rollout(E.lane_config(RewardKind.PI_METHOD1), np.full(150, 0.01))
    path = tmp_path / "episode_0.csv"
    log.to_csv(path)
    with path.open() as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "e", "phi", "u", "v", "omega", "delta_old", "action", "reward", "rate", "c_I"]
    back = E.EpisodeLog.from_csv(path)
    assert back == log


def test_config_validation():
    with pytest.raises(ConfigError):
        E.acc_config(initial_state=(1.0, 2.0))
    with pytest.raises(ConfigError):
        E.acc_config(episode_len=0)
    with pytest.raises(ConfigError):
        E.lane_config(initial_state=(4, 0, 0.0, 0, 0, 0))
    with pytest.raises(ConfigError):
        replace(E.acc_config(), plant="boat")
