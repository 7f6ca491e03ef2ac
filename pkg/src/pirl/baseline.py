"""Open-loop trajectory optimisation used as the optimal-control reference.

A whole control sequence is optimised against the undiscounted negated reward
of the environment it will be replayed in. Rollout and cost are evaluated here
independently of :mod:`pirl.env`; the gradient comes from a reverse (adjoint)
sweep through the Euler-discretised dynamics and the reward, with central
finite differences available as a check. Iterates are projected onto the
action box and every accepted step decreases the cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import plants
from .env import ACC, EnvConfig
from .errors import DivergenceError
from .rewards import Method1, RewardKind, kappa


@dataclass(frozen=True)
class BaselineConfig:
    iterations: int = 3000
    step_size: float = 0.5  # largest control change of the first step
    gradient: str = "analytic"  # or "fd"
    tol: float = 1e-13
    patience: int = 50
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.iterations <= 0 or not self.tol > 0 or not self.step_size > 0:
            raise ValueError("iterations, step_size and tol must be positive")
        if self.gradient not in ("analytic", "fd"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")


@dataclass
class BaselineResult:
    controls: np.ndarray
    cost: float
    cost_curve: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def project(seq, env_cfg: EnvConfig) -> np.ndarray:
    lo, hi = env_cfg.action_bounds
    return np.clip(np.asarray(seq, dtype=float), lo, hi)


def _integral_gains(env_cfg: EnvConfig, T: int) -> np.ndarray:
    """Per-step factor multiplying |error| in the accumulator update."""
    acc = env_cfg.reward.new_accumulator(env_cfg.episode_len)
    if acc is None:
        return np.zeros(T)
    if isinstance(acc.method, Method1):
        return (np.arange(T) >= acc.method.t_threshold).astype(float)
    return np.array([kappa(k, acc.method.kappa) for k in range(T)])


def _simulate(seq, env_cfg: EnvConfig):
    """Forward pass; returns states s_0..s_T, rates, and c_I after each step."""
    p, dt = env_cfg.params, env_cfg.dt
    lo, hi = env_cfg.action_bounds
    if env_cfg.plant == ACC:
        step, lag = plants.acc_step, 2
    else:
        step, lag = plants.lane_step, 5
    T = len(seq)
    s = env_cfg.state_type(*map(float, env_cfg.initial_state))
    states = [s]
    rates = np.empty(T)
    for k in range(T):
        u = min(max(float(seq[k]), lo), hi)
        rates[k] = (u - s[lag]) / p.tau
        s = step(s, u, p, dt)
        states.append(s)
    S = np.array(states)
    if not np.all(np.isfinite(S)):
        raise DivergenceError("non-finite state in baseline rollout")
    errs = S[1:, 0]
    c = np.cumsum(_integral_gains(env_cfg, T) * np.abs(errs))
    return S, rates, c


def _stage_costs(seq, env_cfg: EnvConfig, errs, rates, c):
    rw = env_cfg.reward
    w, n = rw.weights, rw.normalizers
    u = np.clip(np.asarray(seq, dtype=float), *env_cfg.action_bounds)
    xe, xu, xr = errs / n.err_nmax, u / n.act_max, rates / n.rate_nmax
    if rw.kind is RewardKind.ABSOLUTE:
        cost = w.w1 * np.abs(xe) + w.w2 * np.abs(xu) + w.w3 * np.abs(xr)
    else:
        cost = w.w1 * xe**2 + w.w2 * xu**2 + w.w3 * xr**2
    if rw.kind.is_pi:
        cost = cost + w.w4 * (c / n.c_nmax) ** 2
    return cost


def rollout_cost(seq, env_cfg: EnvConfig) -> float:
    """Undiscounted cost (= minus the episode return) of an open-loop sequence."""
    S, rates, c = _simulate(seq, env_cfg)
    return float(math.fsum(_stage_costs(seq, env_cfg, S[1:, 0], rates, c)))


def cost_gradient(seq, env_cfg: EnvConfig, mode: str = "analytic", fd_step: float = 1e-6) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)
    if mode == "fd":
        g = np.empty_like(seq)
        for k in range(len(seq)):
            up, dn = seq.copy(), seq.copy()
            up[k] += fd_step
            dn[k] -= fd_step
            g[k] = (rollout_cost(up, env_cfg) - rollout_cost(dn, env_cfg)) / (2 * fd_step)
        return g

    p, dt = env_cfg.params, env_cfg.dt
    rw = env_cfg.reward
    w, n = rw.weights, rw.normalizers
    T = len(seq)
    S, rates, c = _simulate(seq, env_cfg)
    errs = S[1:, 0]
    u = np.clip(seq, *env_cfg.action_bounds)
    gains = _integral_gains(env_cfg, T)

    if rw.kind is RewardKind.ABSOLUTE:
        d_err = w.w1 * np.sign(errs) / n.err_nmax
        d_u = w.w2 * np.sign(u) / n.act_max
        d_rate = w.w3 * np.sign(rates) / n.rate_nmax
    else:
        d_err = 2 * w.w1 * errs / n.err_nmax**2
        d_u = 2 * w.w2 * u / n.act_max**2
        d_rate = 2 * w.w3 * rates / n.rate_nmax**2
    if rw.kind.is_pi:
        # dJ/dc_{k+1} accumulates every later integral penalty
        mu = np.cumsum((2 * w.w4 * c / n.c_nmax**2)[::-1])[::-1]
        d_err = d_err + mu * gains * np.sign(errs)

    if env_cfg.plant == ACC:
        jac, lag = plants.acc_step_jacobian, 2
        A, B = jac(None, 0.0, p, dt)
    else:
        jac, lag = plants.lane_step_jacobian, 5
    dim = S.shape[1]
    lo, hi = env_cfg.action_bounds
    inside = (seq >= lo) & (seq <= hi)
    grad = np.empty(T)
    lam = np.zeros(dim)
    for k in range(T - 1, -1, -1):
        if env_cfg.plant != ACC:
            A, B = jac(env_cfg.state_type(*S[k]), u[k], p, dt)
        lam[0] += d_err[k]
        grad[k] = d_u[k] + d_rate[k] / p.tau + B @ lam
        lam = A.T @ lam
        lam[lag] -= d_rate[k] / p.tau
    return np.where(inside, grad, 0.0)


def optimize(seq0, env_cfg: EnvConfig, cfg: BaselineConfig = BaselineConfig()) -> BaselineResult:
    """Monotone projected gradient with Barzilai-Borwein steps.

    Each iteration moves along the projected direction ``P(u - alpha*g) - u``
    and backtracks until an Armijo decrease holds, so accepted costs never
    increase. ``alpha`` is the BB ratio ``s.s / s.y`` from the last step; the
    first step is scaled so no control moves by more than ``step_size``.
    Convergence means the projected gradient vanished or ``patience``
    consecutive steps each improved the cost by less than ``tol`` relative.
    """
    lo, hi = env_cfg.action_bounds
    u = project(seq0, env_cfg)
    J = rollout_cost(u, env_cfg)
    curve = [J]
    grad = lambda x: cost_gradient(x, env_cfg, cfg.gradient, cfg.fd_step)
    g = grad(u)
    gmax = float(np.max(np.abs(g))) if len(g) else 0.0
    alpha = cfg.step_size / gmax if gmax > 0 else cfg.step_size
    stall = 0
    converged = False
    it = 0
    for it in range(1, cfg.iterations + 1):
        pg = u - np.clip(u - g, lo, hi)
        if np.max(np.abs(pg)) <= 1e-14 * max(1.0, abs(J)):
            converged = True
            break
        d = np.clip(u - alpha * g, lo, hi) - u
        slope = float(g @ d)
        t = 1.0
        for _ in range(60):
            cand = u + t * d
            Jc = rollout_cost(cand, env_cfg)
            if Jc <= J + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            converged = True  # no decrease along a descent direction: numerically stationary
            curve.append(J)
            break
        g_new = grad(cand)
        s_, y_ = cand - u, g_new - g
        sy = float(s_ @ y_)
        alpha = float(s_ @ s_) / sy if sy > 0 else 1e3 * alpha
        alpha = min(max(alpha, 1e-12), 1e12)
        improvement = (J - Jc) / max(abs(J), 1e-300)
        u, J, g = cand, Jc, g_new
        curve.append(J)
        stall = stall + 1 if improvement < cfg.tol else 0
        if stall >= cfg.patience:
            converged = True
            break
    return BaselineResult(u, J, curve, converged, it)
