"""Vehicle plants: car-following (ACC) and a dynamic bicycle model for lane change.

Both plants are written as continuous-time right-hand sides and advanced with an
explicit Euler step. States are immutable named tuples; every function here is
pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError


class AccState(NamedTuple):
    e: float  # spacing error [m]
    e_v: float  # velocity error [m/s]
    a_r: float  # controlled-vehicle acceleration [m/s^2]


class AccRate(NamedTuple):
    de: float
    de_v: float
    da_r: float


class LaneState(NamedTuple):
    e: float  # lateral offset from the target centerline [m]
    phi: float  # heading [rad]
    u: float  # longitudinal body velocity [m/s]
    v: float  # lateral body velocity [m/s]
    omega: float  # yaw rate [rad/s]
    delta_old: float  # lagged steering angle [rad]


class LaneRate(NamedTuple):
    de: float
    dphi: float
    du: float
    dv: float
    domega: float
    ddelta_old: float


@dataclass(frozen=True)
class AccParams:
    """Car-following parameters. ``d0`` is informational only: the spacing
    error is simulated directly, so the standstill distance never enters."""

    h: float = 1.0
    tau: float = 0.4
    u_max: float = 2.0
    u_min: float = -3.0
    d0: float = 0.0

    def __post_init__(self):
        if not self.h > 0 or not self.tau > 0:
            raise DomainError(f"h and tau must be positive (h={self.h}, tau={self.tau})")
        if not self.u_min < self.u_max:
            raise DomainError(f"u_min={self.u_min} must be below u_max={self.u_max}")


@dataclass(frozen=True)
class LaneParams:
    """Bicycle-model parameters; steering limits are in radians."""

    m: float = 1470.0
    Iz: float = 2400.0
    kf: float = -100000.0
    kr: float = -100000.0
    lf: float = 1.085
    lr: float = 2.503
    tau: float = 0.1
    delta_max: float = math.radians(5.0)
    delta_min: float = math.radians(-5.0)

    def __post_init__(self):
        for name in ("m", "Iz", "lf", "lr", "tau"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if not (self.kf < 0 and self.kr < 0):
            raise DomainError("cornering stiffnesses kf, kr must be negative")
        if not self.delta_min < self.delta_max:
            raise DomainError("delta_min must be below delta_max")


def _check_finite(*values):
    for x in values:
        if not math.isfinite(x):
            raise DomainError(f"non-finite input: {values}")


def clamp_action(a: float, lo: float, hi: float) -> float:
    return min(max(a, lo), hi)


# --------------------------------------------------------------------------- ACC


def acc_derivative(s: AccState, u_r: float, p: AccParams) -> AccRate:
    """Right-hand side of the car-following model with a constant-speed leader."""
    _check_finite(*s, u_r)
    return AccRate(s.e_v - p.h * s.a_r, -s.a_r, (u_r - s.a_r) / p.tau)


def acc_step(s: AccState, u_r: float, p: AccParams, dt: float) -> AccState:
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    d = acc_derivative(s, u_r, p)
    return AccState(s.e + dt * d.de, s.e_v + dt * d.de_v, s.a_r + dt * d.da_r)


def acc_system_matrices(p: AccParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time (A, B) with x' = A x + B u for x = (e, e_v, a_r)."""
    a = np.array([[0.0, 1.0, -p.h], [0.0, 0.0, -1.0], [0.0, 0.0, -1.0 / p.tau]])
    b = np.array([0.0, 0.0, 1.0 / p.tau])
    return a, b


def acc_step_jacobian(s: AccState, u_r: float, p: AccParams, dt: float):
    """Jacobians of :func:`acc_step` w.r.t. state and control."""
    a, b = acc_system_matrices(p)
    return np.eye(3) + dt * a, dt * b


# ---------------------------------------------------------------------- lane change


def lane_forces(s: LaneState, delta: float, p: LaneParams) -> tuple[float, float]:
    """Linear-tyre lateral forces (front, rear) for small slip angles.

    The front force uses the slip angle ``(v + lf*omega)/u - delta``.
    """
    if not s.u > 0:
        raise DomainError(f"longitudinal velocity must be positive, got u={s.u}")
    f1 = p.kf * ((s.v + p.lf * s.omega) / s.u - delta)
    f2 = p.kr * (s.v - p.lr * s.omega) / s.u
    return f1, f2


def lane_derivative(s: LaneState, delta: float, p: LaneParams) -> LaneRate:
    _check_finite(*s, delta)
    f1, f2 = lane_forces(s, delta, p)
    cd = math.cos(delta)
    return LaneRate(
        s.v * math.cos(s.phi) + s.u * math.sin(s.phi),
        s.omega,
        0.0,
        -s.u * s.omega + (f1 * cd + f2) / p.m,
        (p.lf * f1 * cd - p.lr * f2) / p.Iz,
        (delta - s.delta_old) / p.tau,
    )


def lane_step(s: LaneState, delta: float, p: LaneParams, dt: float) -> LaneState:
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    d = lane_derivative(s, delta, p)
    return LaneState(*(x + dt * dx for x, dx in zip(s, d)))


def lane_step_jacobian(s: LaneState, delta: float, p: LaneParams, dt: float):
    """Jacobians of :func:`lane_step` w.r.t. state (6x6) and steering (6,)."""
    e, phi, u, v, om, _ = s
    kf, kr, lf, lr = p.kf, p.kr, p.lf, p.lr
    cd, sd = math.cos(delta), math.sin(delta)
    f1, f2 = lane_forces(s, delta, p)
    # partials of the tyre forces w.r.t. (u, v, omega, delta)
    f1_u, f1_v, f1_w, f1_d = -kf * (v + lf * om) / u**2, kf / u, kf * lf / u, -kf
    f2_u, f2_v, f2_w = -kr * (v - lr * om) / u**2, kr / u, -kr * lr / u

    j = np.zeros((6, 6))
    j[0, 1] = -v * math.sin(phi) + u * math.cos(phi)
    j[0, 2] = math.sin(phi)
    j[0, 3] = math.cos(phi)
    j[1, 4] = 1.0
    j[3, 2] = -om + (cd * f1_u + f2_u) / p.m
    j[3, 3] = (cd * f1_v + f2_v) / p.m
    j[3, 4] = -u + (cd * f1_w + f2_w) / p.m
    j[4, 2] = (lf * cd * f1_u - lr * f2_u) / p.Iz
    j[4, 3] = (lf * cd * f1_v - lr * f2_v) / p.Iz
    j[4, 4] = (lf * cd * f1_w - lr * f2_w) / p.Iz
    j[5, 5] = -1.0 / p.tau

    b = np.zeros(6)
    b[3] = (cd * f1_d - sd * f1) / p.m
    b[4] = lf * (cd * f1_d - sd * f1) / p.Iz
    b[5] = 1.0 / p.tau
    return np.eye(6) + dt * j, dt * b
