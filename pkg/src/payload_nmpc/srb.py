"""Single-rigid-body dynamics, GRF wrench map, RK4 step and trot schedule.

A body state is a flat 12-vector ``[p, theta, v, omega]`` (world frame,
ZYX Euler angles). The net wrench is ``[force, torque]`` about the CoM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._jit import jit
from .spatial import check_gimbal, cross3, euler_rate, euler_rate_partials, matmul, matvec, rot, rot_partials, skew3

GRAVITY = 9.81

FOOT_NAMES = ("FL", "FR", "RL", "RR")
DEFAULT_FEET_BODY = np.array(
    [[0.19, 0.14, -0.28], [0.19, -0.14, -0.28], [-0.19, 0.14, -0.28], [-0.19, -0.14, -0.28]]
)


@dataclass(frozen=True)
class SrbParams:
    mass: float
    body_inertia: np.ndarray
    name: str = ""

    def __post_init__(self):
        I = np.asarray(self.body_inertia, dtype=float).reshape(3, 3)
        object.__setattr__(self, "body_inertia", I)
        if not self.mass > 0:
            raise ValueError(f"{self.name or 'body'}: mass must be positive, got {self.mass}")
        if not np.allclose(I, I.T, atol=1e-12):
            raise ValueError(f"{self.name or 'body'}: inertia not symmetric")
        if np.linalg.eigvalsh(I).min() <= 0:
            raise ValueError(f"{self.name or 'body'}: inertia not positive definite")

    @property
    def inertia_inv(self) -> np.ndarray:
        return np.linalg.inv(self.body_inertia)


@dataclass
class SrbState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.theta, self.v, self.omega]).astype(float)

    @classmethod
    def from_array(cls, x) -> "SrbState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), x[9:12].copy())


class NetWrench(NamedTuple):
    force: np.ndarray
    torque: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque]).astype(float)


@dataclass(frozen=True)
class ContactSchedule:
    """Per-step stance flags, shape (n_steps, 4), in FL, FR, RL, RR order."""

    stance: np.ndarray
    feet_body: np.ndarray = field(default_factory=lambda: DEFAULT_FEET_BODY.copy())
    period: float = 0.4
    phase_offset: float = 0.0


# ---------------------------------------------------------------------------
# kernels

@jit
def srb_rhs(s, w, m, Ib, Ibinv, g):
    th = s[3:6]
    om = s[9:12]
    R = rot(th)
    A = euler_rate(th)
    Iw = matmul(R, matmul(Ib, R.T))
    Iinv = matmul(R, matmul(Ibinv, R.T))
    d = np.empty(12)
    d[0:3] = s[6:9]
    d[3:6] = matvec(A, om)
    d[6:9] = w[0:3] / m
    d[8] -= g
    d[9:12] = matvec(Iinv, w[3:6] - cross3(om, matvec(Iw, om)))
    return d


@jit
def srb_rhs_jac(s, w, m, Ib, Ibinv, g):
    """RHS with Jacobians w.r.t. the state (12x12) and the wrench (12x6)."""
    th = s[3:6]
    om = s[9:12]
    R, dR = rot_partials(th)
    A, dA, _ = euler_rate_partials(th)
    Iw = matmul(R, matmul(Ib, R.T))
    Iinv = matmul(R, matmul(Ibinv, R.T))
    h = matvec(Iw, om)
    y = w[3:6] - cross3(om, h)
    d = np.empty(12)
    d[0:3] = s[6:9]
    d[3:6] = matvec(A, om)
    d[6:9] = w[0:3] / m
    d[8] -= g
    d[9:12] = matvec(Iinv, y)

    Js = np.zeros((12, 12))
    Jw = np.zeros((12, 6))
    for i in range(3):
        Js[i, 6 + i] = 1.0
        Jw[6 + i, i] = 1.0 / m
    Js[3:6, 9:12] = A
    for n in range(3):
        Js[3:6, 3 + n] = matvec(dA[n], om)
    Jw[9:12, 3:6] = Iinv
    Js[9:12, 9:12] = matmul(Iinv, skew3(h) - matmul(skew3(om), Iw))
    for n in range(3):
        dI = matmul(dR[n], matmul(Ib, R.T)) + matmul(R, matmul(Ib, dR[n].T))
        dIinv = matmul(dR[n], matmul(Ibinv, R.T)) + matmul(R, matmul(Ibinv, dR[n].T))
        Js[9:12, 3 + n] = matvec(dIinv, y) - matvec(Iinv, cross3(om, matvec(dI, om)))
    return d, Js, Jw


@jit
def srb_rk4(s, w, dt, m, Ib, Ibinv, g):
    k1 = srb_rhs(s, w, m, Ib, Ibinv, g)
    k2 = srb_rhs(s + 0.5 * dt * k1, w, m, Ib, Ibinv, g)
    k3 = srb_rhs(s + 0.5 * dt * k2, w, m, Ib, Ibinv, g)
    k4 = srb_rhs(s + dt * k3, w, m, Ib, Ibinv, g)
    return s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@jit
def srb_rk4_jac(s, w, dt, m, Ib, Ibinv, g):
    """One RK4 step with the wrench held; returns (s_next, dS/ds, dS/dw)."""
    eye = np.eye(12)
    k1, J1, B1 = srb_rhs_jac(s, w, m, Ib, Ibinv, g)
    dk1x = J1
    dk1w = B1
    k2, J2, B2 = srb_rhs_jac(s + 0.5 * dt * k1, w, m, Ib, Ibinv, g)
    dk2x = matmul(J2, eye + 0.5 * dt * dk1x)
    dk2w = matmul(J2, 0.5 * dt * dk1w) + B2
    k3, J3, B3 = srb_rhs_jac(s + 0.5 * dt * k2, w, m, Ib, Ibinv, g)
    dk3x = matmul(J3, eye + 0.5 * dt * dk2x)
    dk3w = matmul(J3, 0.5 * dt * dk2w) + B3
    k4, J4, B4 = srb_rhs_jac(s + dt * k3, w, m, Ib, Ibinv, g)
    dk4x = matmul(J4, eye + dt * dk3x)
    dk4w = matmul(J4, dt * dk3w) + B4
    sn = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    Phx = eye + dt / 6.0 * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    Phw = dt / 6.0 * (dk1w + 2.0 * dk2w + 2.0 * dk3w + dk4w)
    return sn, Phx, Phw


@jit
def grf_wrench(th, feet, stance, u):
    """Net GRF wrench, the map E (6x12) and d(wrench)/d(theta) (6x3)."""
    R, dR = rot_partials(th)
    w = np.zeros(6)
    E = np.zeros((6, 12))
    dw = np.zeros((6, 3))
    for k in range(4):
        if stance[k] > 0.5:
            f = u[3 * k:3 * k + 3]
            r = matvec(R, feet[k])
            S = skew3(r)
            for a in range(3):
                E[a, 3 * k + a] = 1.0
                for b in range(3):
                    E[3 + a, 3 * k + b] = S[a, b]
            w[0:3] += f
            w[3:6] += cross3(r, f)
            for m in range(3):
                dw[3:6, m] += cross3(matvec(dR[m], feet[k]), f)
    return w, E, dw


# ---------------------------------------------------------------------------
# public API

def _arr(state) -> np.ndarray:
    return state.as_array() if isinstance(state, SrbState) else np.asarray(state, dtype=float)


def _wrench(net) -> np.ndarray:
    return net.as_array() if isinstance(net, NetWrench) else np.asarray(net, dtype=float)


def grf_map(state, schedule: ContactSchedule, step: int) -> np.ndarray:
    """6x12 matrix mapping stacked foot forces to the CoM wrench."""
    x = _arr(state)
    stance = np.asarray(schedule.stance[step], dtype=float)
    _, E, _ = grf_wrench(x[3:6], np.asarray(schedule.feet_body, dtype=float), stance, np.zeros(12))
    return E


def srb_continuous_rhs(params: SrbParams, state, net, g: float = GRAVITY) -> np.ndarray:
    x = _arr(state)
    check_gimbal(x[3:6])
    return srb_rhs(x, _wrench(net), float(params.mass), params.body_inertia, params.inertia_inv, g)


def srb_continuous_rhs_jacobian(params: SrbParams, state, net, g: float = GRAVITY):
    x = _arr(state)
    check_gimbal(x[3:6])
    return srb_rhs_jac(x, _wrench(net), float(params.mass), params.body_inertia, params.inertia_inv, g)


def discretize(params: SrbParams, state, net, dt: float, g: float = GRAVITY) -> np.ndarray:
    """Single RK4 step with the net wrench held over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = _arr(state)
    check_gimbal(x[3:6])
    return srb_rk4(x, _wrench(net), float(dt), float(params.mass), params.body_inertia, params.inertia_inv, g)


def discretize_jacobian(params: SrbParams, state, net, dt: float, g: float = GRAVITY):
    x = _arr(state)
    check_gimbal(x[3:6])
    return srb_rk4_jac(x, _wrench(net), float(dt), float(params.mass), params.body_inertia, params.inertia_inv, g)


def trot_phase_stance(t: float, period: float = 0.4, phase_offset: float = 0.0) -> np.ndarray:
    """Stance flags at time ``t``: FL+RR in the first half period, FR+RL in the second."""
    if not period > 0:
        raise ValueError("gait period must be positive")
    half = math.floor(2.0 * (t + phase_offset) / period + 1e-9) % 2
    return np.array([True, False, False, True]) if half == 0 else np.array([False, True, True, False])


def trot_schedule(t: float, horizon: int, Ts: float, period: float = 0.4, phase_offset: float = 0.0,
                  feet_body=None) -> ContactSchedule:
    stance = np.array([trot_phase_stance(t + k * Ts, period, phase_offset) for k in range(horizon + 1)])
    feet = DEFAULT_FEET_BODY.copy() if feet_body is None else np.asarray(feet_body, dtype=float)
    return ContactSchedule(stance=stance, feet_body=feet, period=period, phase_offset=phase_offset)
