"""Reward families and the integral-of-error accumulators.

Every reward is returned as a negated cost, so values are always <= 0. The four
families are quadratic, absolute-value, and the quadratic reward augmented with
an integral penalty whose accumulator is either gated by a timestep threshold
(method 1) or weighted by a sigmoid schedule (method 2).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .errors import ConfigError, DomainError


class RewardKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    ABSOLUTE = "absolute"
    PI_METHOD1 = "pi1"
    PI_METHOD2 = "pi2"

    @property
    def is_pi(self) -> bool:
        return self in (RewardKind.PI_METHOD1, RewardKind.PI_METHOD2)


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 1 / 3
    w2: float = 1 / 3
    w3: float = 1 / 3
    w4: float = 0.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ConfigError(f"reward weights must be non-negative: {self}")


@dataclass(frozen=True)
class Normalizers:
    """Scales that bring error, action, state rate and accumulator to O(1).

    The state-rate term is divided by ``(act_max - act_min) / tau``.
    """

    err_nmax: float
    act_max: float
    act_min: float
    c_nmax: float
    tau: float

    def __post_init__(self):
        if not (self.err_nmax > 0 and self.act_max > 0 and self.c_nmax > 0 and self.tau > 0):
            raise ConfigError(f"normalizers must be positive: {self}")
        if not self.act_min < self.act_max:
            raise ConfigError("act_min must be below act_max")

    @property
    def rate_nmax(self) -> float:
        return (self.act_max - self.act_min) / self.tau


@dataclass(frozen=True)
class KappaParams:
    a: float = 0.1
    T: float = 600

    def __post_init__(self):
        if not (self.a > 0 and self.T > 0):
            raise ConfigError(f"kappa needs a > 0 and T > 0, got {self}")


@dataclass(frozen=True)
class Method1:
    t_threshold: int


@dataclass(frozen=True)
class Method2:
    kappa: KappaParams


@dataclass(frozen=True)
class ErrorAccumulator:
    """Running integral term ``c_I`` and the timestep index it has reached."""

    method: Union[Method1, Method2]
    c_I: float = 0.0
    t: int = 0


def quadratic_reward(err, action, rate, w: RewardWeights, n: Normalizers) -> float:
    return -(
        w.w1 * (err / n.err_nmax) ** 2
        + w.w2 * (action / n.act_max) ** 2
        + w.w3 * (rate / n.rate_nmax) ** 2
    )


def absolute_reward(err, action, rate, w: RewardWeights, n: Normalizers) -> float:
    return -(
        w.w1 * abs(err / n.err_nmax)
        + w.w2 * abs(action / n.act_max)
        + w.w3 * abs(rate / n.rate_nmax)
    )


def kappa(t: float, kp: KappaParams) -> float:
    """Sigmoid weight ``1 / (1 + a*exp(T/2 - t))``, evaluated without overflow."""
    x = kp.T / 2 - t
    if x > 0:
        z = math.exp(-x)
        return z / (z + kp.a)
    return 1.0 / (1.0 + kp.a * math.exp(x))


def accumulate(acc: ErrorAccumulator, abs_err: float) -> ErrorAccumulator:
    if abs_err < 0 or math.isnan(abs_err):
        raise DomainError(f"abs_err must be non-negative, got {abs_err}")
    m = acc.method
    if isinstance(m, Method1):
        c = acc.c_I + abs_err if acc.t >= m.t_threshold else 0.0
    else:
        c = acc.c_I + kappa(acc.t, m.kappa) * abs_err
    return replace(acc, c_I=c, t=acc.t + 1)


def integral_penalty(acc: ErrorAccumulator, w4: float, c_nmax: float) -> float:
    return -w4 * (acc.c_I / c_nmax) ** 2


def compute_reward(
    kind: RewardKind,
    err: float,
    action: float,
    rate: float,
    acc: Optional[ErrorAccumulator],
    w: RewardWeights,
    n: Normalizers,
) -> tuple[float, Optional[ErrorAccumulator]]:
    """Reward for one transition and the advanced accumulator (``None`` if unused)."""
    if kind is RewardKind.QUADRATIC:
        return quadratic_reward(err, action, rate, w, n), acc
    if kind is RewardKind.ABSOLUTE:
        return absolute_reward(err, action, rate, w, n), acc
    want = Method1 if kind is RewardKind.PI_METHOD1 else Method2
    if acc is None or not isinstance(acc.method, want):
        raise ConfigError(f"{kind.value} reward needs a {want.__name__} accumulator, got {acc}")
    acc = accumulate(acc, abs(err))
    return quadratic_reward(err, action, rate, w, n) + integral_penalty(acc, w.w4, n.c_nmax), acc


@dataclass(frozen=True)
class RewardSpec:
    """Reward family plus every constant it needs, as carried in a config."""

    kind: RewardKind
    normalizers: Normalizers
    weights: RewardWeights = field(default_factory=RewardWeights)
    t_threshold: Optional[int] = None
    kappa_a: Optional[float] = None

    def __post_init__(self):
        if self.kind is RewardKind.PI_METHOD1 and self.t_threshold is None:
            raise ConfigError("pi1 reward requires t_threshold")
        if self.kind is RewardKind.PI_METHOD2 and self.kappa_a is None:
            raise ConfigError("pi2 reward requires kappa_a")

    def new_accumulator(self, episode_len: int) -> Optional[ErrorAccumulator]:
        if self.kind is RewardKind.PI_METHOD1:
            return ErrorAccumulator(Method1(self.t_threshold))
        if self.kind is RewardKind.PI_METHOD2:
            return ErrorAccumulator(Method2(KappaParams(self.kappa_a, episode_len)))
        return None

    def __call__(self, err, action, rate, acc):
        return compute_reward(self.kind, err, action, rate, acc, self.weights, self.normalizers)
