"""Rotations, ZYX Euler kinematics and a finite-difference helper.

Angles are ordered (roll, pitch, yaw) with R = Rz(yaw) Ry(pitch) Rx(roll).
Angular velocity is expressed in the world frame throughout.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from ._jit import USE_NUMBA, jit
from .errors import GimbalProximity

GIMBAL_EPS = 0.05


class EulerAngles(NamedTuple):
    roll: float
    pitch: float
    yaw: float


# ---------------------------------------------------------------------------
# kernels

@jit
def cross3(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@jit
def skew3(v):
    S = np.zeros((3, 3))
    S[0, 1] = -v[2]
    S[0, 2] = v[1]
    S[1, 0] = v[2]
    S[1, 2] = -v[0]
    S[2, 0] = -v[1]
    S[2, 1] = v[0]
    return S


if USE_NUMBA:
    @jit
    def matmul(a, b):
        m, k = a.shape
        n = b.shape[1]
        out = np.zeros((m, n))
        for i in range(m):
            for p in range(k):
                aip = a[i, p]
                if aip != 0.0:
                    for j in range(n):
                        out[i, j] += aip * b[p, j]
        return out

    @jit
    def matvec(a, v):
        m, k = a.shape
        out = np.zeros(m)
        for i in range(m):
            s = 0.0
            for p in range(k):
                s += a[i, p] * v[p]
            out[i] = s
        return out

    @jit
    def dot(a, b):
        s = 0.0
        for i in range(a.shape[0]):
            s += a[i] * b[i]
        return s
else:
    def matmul(a, b):
        return np.dot(a, b)

    def matvec(a, v):
        return np.dot(a, v)

    def dot(a, b):
        return float(np.dot(a, b))


@jit
def _elementary(th):
    cr, sr = math.cos(th[0]), math.sin(th[0])
    cp, sp = math.cos(th[1]), math.sin(th[1])
    cy, sy = math.cos(th[2]), math.sin(th[2])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    dRx = np.array([[0.0, 0.0, 0.0], [0.0, -sr, -cr], [0.0, cr, -sr]])
    dRy = np.array([[-sp, 0.0, cp], [0.0, 0.0, 0.0], [-cp, 0.0, -sp]])
    dRz = np.array([[-sy, -cy, 0.0], [cy, -sy, 0.0], [0.0, 0.0, 0.0]])
    return Rx, Ry, Rz, dRx, dRy, dRz


@jit
def rot(th):
    Rx, Ry, Rz, _, _, _ = _elementary(th)
    return matmul(Rz, matmul(Ry, Rx))


@jit
def rot_partials(th):
    """R and dR[m] = dR/dth_m."""
    Rx, Ry, Rz, dRx, dRy, dRz = _elementary(th)
    dR = np.empty((3, 3, 3))
    dR[0] = matmul(Rz, matmul(Ry, dRx))
    dR[1] = matmul(Rz, matmul(dRy, Rx))
    dR[2] = matmul(dRz, matmul(Ry, Rx))
    return matmul(Rz, matmul(Ry, Rx)), dR


@jit
def euler_rate(th):
    cp, tp = math.cos(th[1]), math.tan(th[1])
    cy, sy = math.cos(th[2]), math.sin(th[2])
    A = np.zeros((3, 3))
    A[0, 0] = cy / cp
    A[0, 1] = sy / cp
    A[1, 0] = -sy
    A[1, 1] = cy
    A[2, 0] = cy * tp
    A[2, 1] = sy * tp
    A[2, 2] = 1.0
    return A


@jit
def euler_rate_partials(th):
    """A, dA[n] = dA/dth_n and d2A[n, m] = d2A/(dth_n dth_m).

    A depends on pitch and yaw only, so every roll slice is zero.
    """
    cp, sp = math.cos(th[1]), math.sin(th[1])
    tp = sp / cp
    cy, sy = math.cos(th[2]), math.sin(th[2])
    A = euler_rate(th)
    dA = np.zeros((3, 3, 3))
    d2A = np.zeros((3, 3, 3, 3))
    # pitch
    dA[1, 0, 0] = cy * sp / cp**2
    dA[1, 0, 1] = sy * sp / cp**2
    dA[1, 2, 0] = cy / cp**2
    dA[1, 2, 1] = sy / cp**2
    # yaw
    dA[2, 0, 0] = -sy / cp
    dA[2, 0, 1] = cy / cp
    dA[2, 1, 0] = -cy
    dA[2, 1, 1] = -sy
    dA[2, 2, 0] = -sy * tp
    dA[2, 2, 1] = cy * tp
    # pitch-pitch
    k = (1.0 + sp * sp) / cp**3
    d2A[1, 1, 0, 0] = cy * k
    d2A[1, 1, 0, 1] = sy * k
    d2A[1, 1, 2, 0] = 2.0 * sp * cy / cp**3
    d2A[1, 1, 2, 1] = 2.0 * sp * sy / cp**3
    # pitch-yaw (symmetric)
    for a, b in ((1, 2), (2, 1)):
        d2A[a, b, 0, 0] = -sy * sp / cp**2
        d2A[a, b, 0, 1] = cy * sp / cp**2
        d2A[a, b, 2, 0] = -sy / cp**2
        d2A[a, b, 2, 1] = cy / cp**2
    # yaw-yaw
    d2A[2, 2, 0, 0] = -cy / cp
    d2A[2, 2, 0, 1] = -sy / cp
    d2A[2, 2, 1, 0] = sy
    d2A[2, 2, 1, 1] = -cy
    d2A[2, 2, 2, 0] = -cy * tp
    d2A[2, 2, 2, 1] = -sy * tp
    return A, dA, d2A


@jit
def euler_from_rot(R):
    th = np.empty(3)
    th[0] = math.atan2(R[2, 1], R[2, 2])
    th[1] = math.atan2(-R[2, 0], math.sqrt(R[2, 1] ** 2 + R[2, 2] ** 2))
    th[2] = math.atan2(R[1, 0], R[0, 0])
    return th


@jit
def heading_axes(yaw):
    """World-frame x/y axes of the yaw-only frame, as columns (3x2)."""
    c, s = math.cos(yaw), math.sin(yaw)
    H = np.zeros((3, 2))
    H[0, 0] = c
    H[1, 0] = s
    H[0, 1] = -s
    H[1, 1] = c
    return H


@jit
def heading_axes_dyaw(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    H = np.zeros((3, 2))
    H[0, 0] = -s
    H[1, 0] = c
    H[0, 1] = -c
    H[1, 1] = -s
    return H


# ---------------------------------------------------------------------------
# public API

def check_gimbal(th, eps: float = GIMBAL_EPS) -> None:
    pitch = float(np.asarray(th, dtype=float)[1])
    if abs(pitch) >= math.pi / 2 - eps:
        raise GimbalProximity(f"pitch {pitch:.4f} rad within {eps} rad of +-pi/2")


def skew(v) -> np.ndarray:
    return skew3(np.asarray(v, dtype=float))


def rotation_from_euler(th) -> np.ndarray:
    return rot(np.asarray(th, dtype=float))


def euler_from_rotation(R) -> np.ndarray:
    return euler_from_rot(np.ascontiguousarray(R, dtype=float))


def euler_rate_map(th) -> np.ndarray:
    """Matrix A(th) with th_dot = A(th) @ omega_world."""
    th = np.asarray(th, dtype=float)
    check_gimbal(th)
    return euler_rate(th)


def finite_difference_jacobian(f: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        J[:, j] = (np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))).ravel() / (2.0 * step)
    return J
