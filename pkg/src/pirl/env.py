"""Episodic environment wrapping a plant and a reward.

One ``step`` clamps the action, integrates the plant over ``dt``, and scores the
transition with the post-step error, the applied action and the pre-step state
rate. Episodes have a fixed length; the only early exit is the optional
divergence truncation used during training.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import plants
from .errors import ConfigError, UsageError
from .plants import AccParams, AccState, LaneParams, LaneState
from .rewards import Normalizers, RewardKind, RewardSpec, RewardWeights

ACC = "acc"
LANE = "lane"

# Observation divisors, one per state component.
ACC_OBS_SCALE = (15.0, 5.0, 2.0)
LANE_OBS_SCALE = (4.0, 0.1, 30.0, 1.0, 0.2, math.radians(5.0))

# w4 per (plant, method), Tables I and II of the reference experiments.
DEFAULT_W4 = {
    (ACC, RewardKind.PI_METHOD1): 0.1,
    (ACC, RewardKind.PI_METHOD2): 0.05,
    (LANE, RewardKind.PI_METHOD1): 0.1,
    (LANE, RewardKind.PI_METHOD2): 0.5,
}


@dataclass(frozen=True)
class EnvConfig:
    plant: str
    params: Union[AccParams, LaneParams]
    reward: RewardSpec
    initial_state: tuple
    dt: float = 0.1
    episode_len: int = 600
    obs_scale: tuple = ACC_OBS_SCALE
    observe_integral: bool = True
    # training-only knobs
    truncate_factor: Optional[float] = None
    init_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.plant not in (ACC, LANE):
            raise ConfigError(f"unknown plant {self.plant!r}")
        if self.episode_len <= 0 or not self.dt > 0:
            raise ConfigError("episode_len and dt must be positive")
        state_type = AccState if self.plant == ACC else LaneState
        if len(self.initial_state) != len(state_type._fields):
            raise ConfigError(f"initial_state needs {len(state_type._fields)} entries")
        if len(self.obs_scale) != len(state_type._fields) or min(self.obs_scale) <= 0:
            raise ConfigError("obs_scale must hold one positive divisor per state field")
        if self.plant == LANE and not self.initial_state[2] > 0:
            raise ConfigError("lane initial state needs u > 0")

    @property
    def state_type(self):
        return AccState if self.plant == ACC else LaneState

    @property
    def action_bounds(self) -> tuple[float, float]:
        p = self.params
        if self.plant == ACC:
            return p.u_min, p.u_max
        return p.delta_min, p.delta_max

    @property
    def obs_dim(self) -> int:
        return len(self.obs_scale) + (2 if self.observe_integral else 0)


def acc_config(kind: RewardKind = RewardKind.QUADRATIC, **overrides) -> EnvConfig:
    """ACC environment with the reference parameter set; keyword overrides win."""
    p = overrides.pop("params", AccParams())
    weights = overrides.pop("weights", RewardWeights(w4=DEFAULT_W4.get((ACC, kind), 0.0)))
    reward = overrides.pop("reward", None) or RewardSpec(
        kind,
        Normalizers(err_nmax=15.0, act_max=p.u_max, act_min=p.u_min, c_nmax=60.0, tau=p.tau),
        weights,
        t_threshold=125,
        kappa_a=0.1,
    )
    kw = dict(initial_state=(5.0, 5.0, 0.0), episode_len=600, obs_scale=ACC_OBS_SCALE)
    kw.update(overrides)
    return EnvConfig(ACC, p, reward, **kw)


def lane_config(kind: RewardKind = RewardKind.QUADRATIC, **overrides) -> EnvConfig:
    p = overrides.pop("params", LaneParams())
    weights = overrides.pop("weights", RewardWeights(w4=DEFAULT_W4.get((LANE, kind), 0.0)))
    reward = overrides.pop("reward", None) or RewardSpec(
        kind,
        Normalizers(err_nmax=4.0, act_max=p.delta_max, act_min=p.delta_min, c_nmax=15.0, tau=p.tau),
        weights,
        t_threshold=30,
        kappa_a=0.1,
    )
    kw = dict(initial_state=(4.0, 0.0, 30.0, 0.0, 0.0, 0.0), episode_len=150, obs_scale=LANE_OBS_SCALE)
    kw.update(overrides)
    return EnvConfig(LANE, p, reward, **kw)


@dataclass
class EpisodeLog:
    """Per-step records. Row ``k`` holds the state reached after step ``k``."""

    state_fields: tuple
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    c_I: list = field(default_factory=list)

    def __len__(self):
        return len(self.rewards)

    def append(self, state, action, reward, rate, c_i):
        self.states.append(tuple(state))
        self.actions.append(action)
        self.rewards.append(reward)
        self.rates.append(rate)
        self.c_I.append(c_i)

    @property
    def errors(self) -> np.ndarray:
        return np.array([s[0] for s in self.states])

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *self.state_fields, "action", "reward", "rate", "c_I"])
            for k in range(len(self)):
                w.writerow([k + 1, *map(repr, self.states[k]), repr(self.actions[k]),
                            repr(self.rewards[k]), repr(self.rates[k]), repr(self.c_I[k])])

    @classmethod
    def from_csv(cls, path) -> "EpisodeLog":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        fields = tuple(header[1:-4])
        log = cls(fields)
        for r in rows[1:]:
            vals = [float(x) for x in r[1:]]
            n = len(fields)
            log.append(vals[:n], vals[n], vals[n + 1], vals[n + 2], vals[n + 3])
        return log


class Env:
    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self._rng = np.random.default_rng(cfg.seed)
        if cfg.plant == ACC:
            self._step_fn, self._lag_index = plants.acc_step, 2
        else:
            self._step_fn, self._lag_index = plants.lane_step, 5
        self._lag_tau = cfg.params.tau
        self._scale = np.asarray(cfg.obs_scale, dtype=float)
        self.state = None
        self.t = 0
        self.acc = None
        self.log = None
        self._done = True

    def reset(self) -> np.ndarray:
        cfg = self.cfg
        s0 = np.asarray(cfg.initial_state, dtype=float)
        if cfg.init_jitter > 0:
            s0 = s0 + cfg.init_jitter * self._scale * self._rng.uniform(-1, 1, len(s0))
            if cfg.plant == LANE:
                s0[2] = cfg.initial_state[2]
        self.state = cfg.state_type(*map(float, s0))
        self.t = 0
        self.acc = cfg.reward.new_accumulator(cfg.episode_len)
        self.log = EpisodeLog(cfg.state_type._fields)
        self._done = False
        return self.observe()

    @property
    def c_I(self) -> float:
        return self.acc.c_I if self.acc is not None else 0.0

    def observe(self) -> np.ndarray:
        obs = np.asarray(self.state) / self._scale
        if self.cfg.observe_integral:
            c_nmax = self.cfg.reward.normalizers.c_nmax
            obs = np.append(obs, (self.c_I / c_nmax, self.t / self.cfg.episode_len))
        return obs

    def scale(self, state) -> np.ndarray:
        return np.asarray(state, dtype=float) / self._scale

    def unscale(self, obs) -> np.ndarray:
        return np.asarray(obs, dtype=float)[: len(self._scale)] * self._scale

    def _tail_rewards(self, err: float, n: int) -> np.ndarray:
        """Per-step charges for ``n`` skipped steps after a divergence cut.

        The error is frozen at its current size, the action and rate terms sit
        at their bounds and the accumulator keeps growing, so the charge is
        never smaller than what any trajectory staying inside the cut would
        have collected. Otherwise leaving early would be a cheap escape from a
        growing integral penalty.
        """
        cfg = self.cfg
        lo, hi = cfg.action_bounds
        rate = (hi - lo) / self._lag_tau
        acc = self.acc
        out = np.empty(n)
        for j in range(n):
            r_lo, _ = cfg.reward(err, lo, rate, acc)
            r_hi, acc = cfg.reward(err, hi, rate, acc)
            out[j] = min(r_lo, r_hi)
        return out

    def step(self, action: float):
        if self._done:
            raise UsageError("episode finished; call reset() first")
        cfg = self.cfg
        lo, hi = cfg.action_bounds
        a = plants.clamp_action(float(action), lo, hi)
        rate = (a - self.state[self._lag_index]) / self._lag_tau
        self.state = self._step_fn(self.state, a, cfg.params, cfg.dt)
        err = self.state[0]
        r, self.acc = cfg.reward(err, a, rate, self.acc)
        self.t += 1
        done = self.t >= cfg.episode_len
        step_reward = r
        tail = np.zeros(0)
        if (not done and cfg.truncate_factor is not None
                and abs(err) > cfg.truncate_factor * cfg.reward.normalizers.err_nmax):
            tail = self._tail_rewards(err, cfg.episode_len - self.t)
            r += math.fsum(tail)
            done = True
        self._done = done
        self.log.append(self.state, a, r, rate, self.c_I)
        info = {"state": self.state, "c_I": self.c_I, "rate": rate, "action": a, "t": self.t,
                "truncated": len(tail) > 0, "remaining": len(tail), "tail": tail,
                "step_reward": step_reward}
        return self.observe(), r, done, info


def rollout(cfg: EnvConfig, actions) -> EpisodeLog:
    """Replay a fixed open-loop action sequence; stops early on truncation."""
    env = Env(cfg)
    env.reset()
    for a in actions:
        if env.step(a)[2]:
            break
    return env.log


def steady_state_error(log: EpisodeLog, window: int = 50) -> float:
    if len(log) == 0:
        raise UsageError("empty episode log")
    if window > len(log) or window <= 0:
        raise UsageError(f"window {window} not within episode length {len(log)}")
    return float(np.mean(np.abs(log.errors[-window:])))


def final_error(log: EpisodeLog) -> float:
    if len(log) == 0:
        raise UsageError("empty episode log")
    return abs(log.states[-1][0])


def undiscounted_return(log: EpisodeLog) -> float:
    return float(math.fsum(log.rewards))


def peak_rate(log: EpisodeLog) -> float:
    if len(log) == 0:
        raise UsageError("empty episode log")
    return float(np.max(np.abs(log.rates)))
