"""Deep deterministic policy gradient on top of :mod:`pirl.mlp`.

The critic sees the observation concatenated with the action rescaled to
[-1, 1]; the actor emits actions already mapped onto the plant bounds.
A training run is a deterministic function of the environment and agent seeds.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import env as envlib
from . import mlp
from .env import Env, EnvConfig
from .errors import DivergenceError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    tau_soft: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    hidden: tuple = (64, 64)
    activation: str = "relu"  # hidden-layer activation of both networks: relu or tanh
    noise: str = "gaussian"  # or "ou"
    noise_sigma: float = 0.3  # fraction of the half action range
    noise_decay: float = 0.995  # per episode
    ou_theta: float = 0.15
    episodes: int = 300
    eval_interval: int = 1
    updates_per_step: int = 1
    zero_init: bool = True
    warmup_random: bool = False  # uniform actions during warmup instead of actor + noise
    select_best: bool = True
    reward_scale: float = 1.0  # multiplies stored rewards; the policy optimum is unchanged
    critic_clip: float = 0.0  # max global norm of the critic gradient, 0 disables
    action_reg: float = 0.0  # weight of mean squared pre-tanh actor output in the actor loss
    critic_l2: float = 0.0  # L2 weight decay on critic parameters
    q_max: Optional[float] = None  # known upper bound on returns, clips the bootstrapped value
    lr_decay: float = 1.0  # per-episode multiplier on both learning rates
    eval_target: bool = False  # also evaluate the Polyak-averaged target actor for selection
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 < self.tau_soft <= 1:
            raise ValueError(f"tau_soft must lie in (0, 1], got {self.tau_soft}")
        if min(self.batch_size, self.buffer_capacity, self.episodes, self.eval_interval) <= 0:
            raise ValueError("batch_size, buffer_capacity, episodes, eval_interval must be positive")
        if not self.reward_scale > 0 or min(self.critic_clip, self.action_reg, self.critic_l2) < 0:
            raise ValueError("reward_scale must be positive, critic_clip, action_reg and critic_l2 non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.noise not in ("gaussian", "ou"):
            raise ValueError(f"unknown noise kind {self.noise!r}")


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros(capacity)
        self.rew = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done):
        i = self.cursor
        self.obs[i] = s
        self.act[i] = a
        self.rew[i] = r
        self.next_obs[i] = s2
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng, n):
        return rng.integers(0, self.size, n)

    def sample(self, rng, n):
        idx = self.sample_indices(rng, n)
        return Batch(self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.done[idx])


@dataclass
class Batch:
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray


class GaussianNoise:
    def __init__(self, sigma, rng):
        self.sigma = sigma
        self.rng = rng

    def reset(self):
        pass

    def __call__(self):
        return self.sigma * self.rng.standard_normal()


class OUNoise:
    """Ornstein-Uhlenbeck process, Euler-Maruyama discretised."""

    def __init__(self, sigma, rng, theta=0.15, dt=0.1):
        self.sigma, self.rng, self.theta, self.dt = sigma, rng, theta, dt
        self.x = 0.0

    def reset(self):
        self.x = 0.0

    def __call__(self):
        self.x += -self.theta * self.x * self.dt + self.sigma * math.sqrt(self.dt) * self.rng.standard_normal()
        return self.x


class Agent:
    """Online and target actor/critic pairs with their optimizers."""

    def __init__(self, obs_dim: int, bounds: tuple, cfg: AgentConfig):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.lo, self.hi = bounds
        self.mid = 0.5 * (self.hi + self.lo)
        self.half = 0.5 * (self.hi - self.lo)
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        self.actor = mlp.init(seeds[0], (obs_dim, *cfg.hidden, 1), "tanh", bounds, hidden=cfg.activation)
        if cfg.zero_init and self.lo < 0 < self.hi:
            # start from a policy that outputs (roughly) zero action, not mid-range
            self.actor.b[-1][:] += math.atanh(-self.mid / self.half)
        self.critic = mlp.init(seeds[1], (obs_dim + 1, *cfg.hidden, 1), hidden=cfg.activation)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = mlp.Adam(self.actor.n_params, lr=cfg.lr_actor)
        self.critic_opt = mlp.Adam(self.critic.n_params, lr=cfg.lr_critic)
        self.rng = np.random.default_rng(seeds[2])

    def critic_input(self, obs, act):
        return np.column_stack([obs, (np.asarray(act) - self.mid) / self.half])

    def q(self, critic, obs, act):
        return critic(self.critic_input(obs, act))[:, 0]


def act(actor: mlp.MLP, obs, noise: Optional[Callable[[], float]] = None) -> float:
    """Deterministic policy output plus optional exploration noise, clamped."""
    a = float(actor(obs)[0, 0])
    if noise is not None:
        lo, hi = actor.bounds
        a = min(max(a + noise(), lo), hi)
    return a


def td_target(agent: Agent, batch: Batch, gamma: float) -> np.ndarray:
    a2 = agent.actor_target(batch.next_obs)[:, 0]
    q2 = agent.q(agent.critic_target, batch.next_obs, a2)
    if agent.cfg.q_max is not None:
        q2 = np.minimum(q2, agent.cfg.q_max)
    return batch.rew + gamma * (1.0 - batch.done) * q2


def update_critic(agent: Agent, batch: Batch, targets) -> float:
    """One Adam step on the mean squared Bellman error; returns the pre-step loss."""
    critic = agent.critic
    q, cache = critic.forward(agent.critic_input(batch.obs, batch.act))
    diff = q[:, 0] - targets
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise DivergenceError(f"critic loss is {loss}")
    grad, _ = critic.backward(cache, (2.0 / len(diff)) * diff[:, None])
    if agent.cfg.critic_l2 > 0:
        grad = grad + agent.cfg.critic_l2 * critic.params
    clip = agent.cfg.critic_clip
    if clip > 0:
        norm = float(np.linalg.norm(grad))
        if norm > clip:
            grad *= clip / norm
    mlp.apply_gradients(agent.critic_opt, critic, grad)
    return loss


def actor_gradient(agent: Agent, obs) -> tuple[float, np.ndarray]:
    """Mean Q(s, mu(s)) and the gradient of its negation w.r.t. actor parameters.

    With ``action_reg`` the loss also carries ``action_reg * mean(z**2)`` for
    the pre-tanh output ``z``, which keeps the head away from saturation.
    """
    a, a_cache = agent.actor.forward(obs)
    q, q_cache = agent.critic.forward(agent.critic_input(obs, a[:, 0]))
    n = len(q)
    _, gx = agent.critic.backward(q_cache, np.full((n, 1), -1.0 / n), params=False)
    reg = agent.cfg.action_reg
    pre = (2.0 * reg / n) * a_cache[1][-1] if reg > 0 else None
    grad, _ = agent.actor.backward(a_cache, gx[:, -1:] / agent.half, pre)
    return float(np.mean(q)), grad


def update_actor(agent: Agent, batch: Batch) -> float:
    objective, grad = actor_gradient(agent, batch.obs)
    if not math.isfinite(objective):
        raise DivergenceError(f"actor objective is {objective}")
    mlp.apply_gradients(agent.actor_opt, agent.actor, grad)
    return objective


def learn(agent: Agent, buffer: ReplayBuffer) -> tuple[float, float]:
    cfg = agent.cfg
    batch = buffer.sample(agent.rng, cfg.batch_size)
    loss = update_critic(agent, batch, td_target(agent, batch, cfg.gamma))
    objective = update_actor(agent, batch)
    mlp.soft_update(agent.actor_target, agent.actor, cfg.tau_soft)
    mlp.soft_update(agent.critic_target, agent.critic, cfg.tau_soft)
    return loss, objective


@dataclass
class CurveRow:
    episode: int
    undiscounted_return: float
    steady_state_error: float
    noise_sigma: float


@dataclass
class TrainResult:
    policy: mlp.MLP
    final_policy: mlp.MLP
    critic: mlp.MLP
    curve: list = field(default_factory=list)
    best_episode: int = 0


def evaluate(policy: mlp.MLP, env_cfg: EnvConfig, episodes: int = 1, window: int = 50):
    """Noise-free rollouts. Returns ``(logs, metrics)``; metrics average over episodes."""
    env_cfg = replace(env_cfg, truncate_factor=None)
    env = Env(env_cfg)
    logs = []
    for _ in range(episodes):
        obs = env.reset()
        done = False
        while not done:
            obs, _, done, _ = env.step(act(policy, obs))
        logs.append(env.log)
    window = min(window, env_cfg.episode_len)
    metrics = {
        "steady_state_error": float(np.mean([envlib.steady_state_error(l, window) for l in logs])),
        "final_error": float(np.mean([envlib.final_error(l) for l in logs])),
        "undiscounted_return": float(np.mean([envlib.undiscounted_return(l) for l in logs])),
        "peak_rate": float(np.max([envlib.peak_rate(l) for l in logs])),
    }
    return logs, metrics


def _discounted_tail(gamma: float, tail) -> float:
    """sum_j gamma**(j+1) * tail[j]: value of the charges that follow the current reward."""
    return math.fsum(gamma ** (j + 1) * r for j, r in enumerate(tail))


def train(env_cfg: EnvConfig, agent_cfg: AgentConfig, progress: Optional[Callable] = None) -> TrainResult:
    """Run DDPG for ``agent_cfg.episodes`` fixed-length episodes.

    After every ``eval_interval`` episodes the current actor is rolled out
    without noise; with ``select_best`` the returned policy is the evaluated
    snapshot with the highest undiscounted return. With ``eval_target`` the
    Polyak-averaged target actor is a candidate too; the curve always reports
    the online actor.
    """
    cfg = agent_cfg
    train_cfg = env_cfg if env_cfg.truncate_factor is not None else replace(env_cfg, truncate_factor=10.0)
    env = Env(train_cfg)
    bounds = train_cfg.action_bounds
    agent = Agent(train_cfg.obs_dim, bounds, cfg)
    buffer = ReplayBuffer(cfg.buffer_capacity, train_cfg.obs_dim)
    sigma = cfg.noise_sigma * agent.half
    if cfg.noise == "ou":
        noise = OUNoise(sigma, agent.rng, cfg.ou_theta, train_cfg.dt)
    else:
        noise = GaussianNoise(sigma, agent.rng)

    result = TrainResult(agent.actor.copy(), agent.actor, agent.critic)
    best = -math.inf
    total = 0
    for ep in range(1, cfg.episodes + 1):
        obs = env.reset()
        noise.reset()
        done = False
        while not done:
            if total < cfg.warmup_steps and cfg.warmup_random:
                a = float(agent.rng.uniform(agent.lo, agent.hi))
            else:
                a = act(agent.actor, obs, noise)
            obs2, r, done, info = env.step(a)
            if info["truncated"]:
                r = info["step_reward"] + _discounted_tail(cfg.gamma, info["tail"])
            buffer.add(obs, info["action"], cfg.reward_scale * r, obs2, done)
            obs = obs2
            total += 1
            if total >= cfg.warmup_steps and len(buffer) >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    learn(agent, buffer)
        if not (np.all(np.isfinite(agent.actor.params)) and np.all(np.isfinite(agent.critic.params))):
            raise DivergenceError(f"non-finite network parameters after episode {ep}")

        if ep % cfg.eval_interval == 0 or ep == cfg.episodes:
            _, m = evaluate(agent.actor, env_cfg)
            ret, sse = m["undiscounted_return"], m["steady_state_error"]
            if cfg.select_best and ret > best:
                best = ret
                result.policy = agent.actor.copy()
                result.best_episode = ep
            if cfg.select_best and cfg.eval_target:
                _, mt = evaluate(agent.actor_target, env_cfg)
                if mt["undiscounted_return"] > best:
                    best = mt["undiscounted_return"]
                    result.policy = agent.actor_target.copy()
                    result.best_episode = ep
        else:
            ret = envlib.undiscounted_return(env.log)
            sse = envlib.steady_state_error(env.log, min(50, len(env.log)))
        result.curve.append(CurveRow(ep, ret, sse, noise.sigma))
        if progress is not None:
            progress(result.curve[-1])
        noise.sigma *= cfg.noise_decay
        agent.actor_opt.lr *= cfg.lr_decay
        agent.critic_opt.lr *= cfg.lr_decay

    if not cfg.select_best:
        result.policy = agent.actor.copy()
        result.best_episode = cfg.episodes
    result.final_policy = agent.actor.copy()
    result.critic = agent.critic.copy()
    return result
