"""Robot-payload holonomic coupling and the interaction-wrench maps.

Global state ``x`` (36) stacks robot 1, robot 2 and the payload, each as
``[p, theta, v, omega]``. The per-step input ``u`` (34) stacks the GRFs of
robot 1 and 2 (12 each) followed by the interaction wrenches
``lam_1L, lam_2L`` (5 each: world-frame force, then roll/pitch torques).

Each edge contributes five constraint rows: attachment-point coincidence
(3) and roll/pitch equality (2); relative yaw is free. The roll/pitch
constraint torques act about the x/y axes of the payload's heading
(yaw-only) frame, equal and opposite on robot and payload.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._jit import jit
from .errors import SingularCoupling
from .spatial import cross3, dot, euler_rate_partials, heading_axes, heading_axes_dyaw, matmul, matvec, rot, rot_partials, skew3
from .srb import GRAVITY, grf_wrench, srb_rhs, srb_rhs_jac, srb_rk4, srb_rk4_jac

NX = 36
NU = 34
N_LAMBDA = 5
COND_LIMIT = 1e12


@dataclass(frozen=True)
class AttachmentGeometry:
    robot_offsets: np.ndarray = field(default_factory=lambda: np.array([[0.25, 0.0, 0.05], [-0.25, 0.0, 0.05]]))
    payload_offsets: np.ndarray = field(default_factory=lambda: np.array([[-0.45, 0.0, 0.0], [0.45, 0.0, 0.0]]))

    def __post_init__(self):
        ra = np.asarray(self.robot_offsets, dtype=float).reshape(2, 3)
        rl = np.asarray(self.payload_offsets, dtype=float).reshape(2, 3)
        object.__setattr__(self, "robot_offsets", ra)
        object.__setattr__(self, "payload_offsets", rl)
        if np.linalg.norm(rl[0] - rl[1]) < 1e-9:
            raise ValueError("payload attachment points must be distinct")


@dataclass(frozen=True)
class InteractionWrench:
    f: np.ndarray
    tau_rp: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.f, self.tau_rp]).astype(float)

    @classmethod
    def from_array(cls, lam) -> "InteractionWrench":
        lam = np.asarray(lam, dtype=float)
        return cls(lam[0:3].copy(), lam[3:5].copy())


# ---------------------------------------------------------------------------
# kernels

@jit
def phi_kernel(x, ra, rl):
    out = np.empty(10)
    RL = rot(x[27:30])
    for i in range(2):
        o = 12 * i
        Ri = rot(x[o + 3:o + 6])
        out[5 * i:5 * i + 3] = x[o:o + 3] + matvec(Ri, ra[i]) - x[24:27] - matvec(RL, rl[i])
        out[5 * i + 3] = x[o + 3] - x[27]
        out[5 * i + 4] = x[o + 4] - x[28]
    return out


@jit
def phi_jac_kernel(x, ra, rl):
    """d(phi)/dx (10x36); velocities do not enter."""
    J = np.zeros((10, 36))
    RL, dRL = rot_partials(x[27:30])
    for i in range(2):
        o = 12 * i
        Ri, dRi = rot_partials(x[o + 3:o + 6])
        for a in range(3):
            J[5 * i + a, o + a] = 1.0
            J[5 * i + a, 24 + a] = -1.0
        for m in range(3):
            J[5 * i:5 * i + 3, o + 3 + m] = matvec(dRi[m], ra[i])
            J[5 * i:5 * i + 3, 27 + m] = -matvec(dRL[m], rl[i])
        J[5 * i + 3, o + 3] = 1.0
        J[5 * i + 3, 27] = -1.0
        J[5 * i + 4, o + 4] = 1.0
        J[5 * i + 4, 28] = -1.0
    return J


@jit
def phi_dot_kernel(x, ra, rl):
    out = np.empty(10)
    RL = rot(x[27:30])
    AL, _, _ = euler_rate_partials(x[27:30])
    omL = x[33:36]
    thdL = matvec(AL, omL)
    rhoL = np.empty(3)
    for i in range(2):
        o = 12 * i
        Ri = rot(x[o + 3:o + 6])
        Ai, _, _ = euler_rate_partials(x[o + 3:o + 6])
        om = x[o + 9:o + 12]
        rho = matvec(Ri, ra[i])
        rhoL = matvec(RL, rl[i])
        out[5 * i:5 * i + 3] = x[o + 6:o + 9] + cross3(om, rho) - x[30:33] - cross3(omL, rhoL)
        thd = matvec(Ai, om)
        out[5 * i + 3] = thd[0] - thdL[0]
        out[5 * i + 4] = thd[1] - thdL[1]
    return out


@jit
def net_wrench_kernel(x, u, stance, feet, ra, rl):
    """Net CoM wrench of each body (3x6) for GRFs and interaction wrenches in ``u``."""
    W = np.zeros((3, 6))
    RL = rot(x[27:30])
    H = heading_axes(x[29])
    for i in range(2):
        o = 12 * i
        th = x[o + 3:o + 6]
        w, _, _ = grf_wrench(th, feet, stance[i], u[12 * i:12 * i + 12])
        W[i] += w
        lam = u[24 + 5 * i:29 + 5 * i]
        f = lam[0:3]
        tl = matvec(H, lam[3:5].copy())
        rho = matvec(rot(th), ra[i])
        rhoL = matvec(RL, rl[i])
        W[i, 0:3] += f
        W[i, 3:6] += cross3(rho, f) + tl
        W[2, 0:3] -= f
        W[2, 3:6] -= cross3(rhoL, f) + tl
    return W


@jit
def lambda_wrench_cols(x, ra, rl):
    """d(W_b)/d(lam) for each body (3 x 6 x 10); W is linear in lam."""
    Wl = np.zeros((3, 6, 10))
    RL = rot(x[27:30])
    H = heading_axes(x[29])
    for i in range(2):
        o = 12 * i
        S = skew3(matvec(rot(x[o + 3:o + 6]), ra[i]))
        SL = skew3(matvec(RL, rl[i]))
        c = 5 * i
        for a in range(3):
            Wl[i, a, c + a] = 1.0
            Wl[2, a, c + a] = -1.0
            for b in range(3):
                Wl[i, 3 + a, c + b] = S[a, b]
                Wl[2, 3 + a, c + b] = -SL[a, b]
            for b in range(2):
                Wl[i, 3 + a, c + 3 + b] = H[a, b]
                Wl[2, 3 + a, c + 3 + b] = -H[a, b]
    return Wl


@jit
def net_wrench_jac_kernel(x, u, stance, feet, ra, rl):
    """Net wrenches with Jacobians w.r.t. the global state and input."""
    W = np.zeros((3, 6))
    Wx = np.zeros((3, 6, 36))
    Wu = np.zeros((3, 6, 34))
    RL, dRL = rot_partials(x[27:30])
    H = heading_axes(x[29])
    Hd = heading_axes_dyaw(x[29])
    for i in range(2):
        o = 12 * i
        th = x[o + 3:o + 6]
        w, E, dw = grf_wrench(th, feet, stance[i], u[12 * i:12 * i + 12])
        W[i] += w
        Wx[i, :, o + 3:o + 6] += dw
        Wu[i, :, 12 * i:12 * i + 12] = E
        c = 24 + 5 * i
        lam = u[c:c + 5]
        f = lam[0:3]
        trp = lam[3:5]
        Ri, dRi = rot_partials(th)
        rho = matvec(Ri, ra[i])
        rhoL = matvec(RL, rl[i])
        tl = matvec(H, trp.copy())
        tld = matvec(Hd, trp.copy())
        W[i, 0:3] += f
        W[i, 3:6] += cross3(rho, f) + tl
        W[2, 0:3] -= f
        W[2, 3:6] -= cross3(rhoL, f) + tl
        S = skew3(rho)
        SL = skew3(rhoL)
        for a in range(3):
            Wu[i, a, c + a] = 1.0
            Wu[2, a, c + a] = -1.0
            for b in range(3):
                Wu[i, 3 + a, c + b] = S[a, b]
                Wu[2, 3 + a, c + b] = -SL[a, b]
            for b in range(2):
                Wu[i, 3 + a, c + 3 + b] = H[a, b]
                Wu[2, 3 + a, c + 3 + b] = -H[a, b]
        for m in range(3):
            Wx[i, 3:6, o + 3 + m] += cross3(matvec(dRi[m], ra[i]), f)
            Wx[2, 3:6, 27 + m] -= cross3(matvec(dRL[m], rl[i]), f)
        Wx[i, 3:6, 29] += tld
        Wx[2, 3:6, 29] -= tld
    return W, Wx, Wu


@jit
def _body_accel(xb, wb, m, Ib, Ibinv, g):
    d = srb_rhs(xb, wb, m, Ib, Ibinv, g)
    return d[6:12]


@jit
def _phidd_linear(x, acc, ra, rl, with_bias):
    """phi_ddot given body accelerations ``acc`` (3x6: [a, alpha]).

    With ``with_bias`` False only the part linear in ``acc`` is returned,
    which is what the constraint matrix needs.
    """
    out = np.zeros(10)
    thL = x[27:30]
    RL = rot(thL)
    AL, dAL, _ = euler_rate_partials(thL)
    omL = x[33:36]
    thdL = matvec(AL, omL)
    for i in range(2):
        o = 12 * i
        th = x[o + 3:o + 6]
        om = x[o + 9:o + 12]
        rho = matvec(rot(th), ra[i])
        rhoL = matvec(RL, rl[i])
        A, dA, _ = euler_rate_partials(th)
        tr = acc[i, 0:3] + cross3(acc[i, 3:6], rho) - acc[2, 0:3] - cross3(acc[2, 3:6], rhoL)
        rr = np.zeros(2)
        for j in range(2):
            rr[j] = dot(A[j], acc[i, 3:6]) - dot(AL[j], acc[2, 3:6])
        if with_bias:
            tr += cross3(om, cross3(om, rho)) - cross3(omL, cross3(omL, rhoL))
            thd = matvec(A, om)
            for j in range(2):
                for m in range(3):
                    rr[j] += dot(dA[m, j], om) * thd[m] - dot(dAL[m, j], omL) * thdL[m]
        out[5 * i:5 * i + 3] = tr
        out[5 * i + 3:5 * i + 5] = rr
    return out


@jit
def phidd_affine_kernel(x, W0, Wl, masses, Ib, Ibinv, ra, rl, g):
    """phi_ddot at wrenches ``W0`` and its (constant) slope M w.r.t. lam."""
    acc = np.zeros((3, 6))
    Iinv = np.zeros((3, 3, 3))
    for b in range(3):
        acc[b] = _body_accel(x[12 * b:12 * b + 12], W0[b], masses[b], Ib[b], Ibinv[b], g)
        R = rot(x[12 * b + 3:12 * b + 6])
        Iinv[b] = matmul(R, matmul(Ibinv[b], R.T))
    val = _phidd_linear(x, acc, ra, rl, True)
    M = np.zeros((10, 10))
    dacc = np.zeros((3, 6))
    for col in range(10):
        for b in range(3):
            dacc[b, 0:3] = Wl[b, 0:3, col] / masses[b]
            dacc[b, 3:6] = matvec(Iinv[b], Wl[b, 3:6, col].copy())
        M[:, col] = _phidd_linear(x, dacc, ra, rl, False)
    return val, M


@jit
def phidd_jac_kernel(x, u, stance, feet, masses, Ib, Ibinv, ra, rl, g):
    """Raw phi_ddot (10) with Jacobians w.r.t. x (10x36) and u (10x34)."""
    W, Wx, Wu = net_wrench_jac_kernel(x, u, stance, feet, ra, rl)
    acc = np.zeros((3, 6))
    dax = np.zeros((3, 6, 36))
    dau = np.zeros((3, 6, 34))
    for b in range(3):
        o = 12 * b
        d, Js, Jw = srb_rhs_jac(x[o:o + 12], W[b], masses[b], Ib[b], Ibinv[b], g)
        acc[b] = d[6:12]
        Jwa = Jw[6:12].copy()
        dax[b] = matmul(Jwa, Wx[b])
        dax[b, :, o + 3:o + 6] += Js[6:12, 3:6]
        dax[b, :, o + 9:o + 12] += Js[6:12, 9:12]
        dau[b] = matmul(Jwa, Wu[b])

    val = _phidd_linear(x, acc, ra, rl, True)
    Jx = np.zeros((10, 36))
    Ju = np.zeros((10, 34))
    for i in range(2):
        r0 = 5 * i
        for side in range(2):
            if side == 0:
                b, sgn, r = i, 1.0, ra[i]
            else:
                b, sgn, r = 2, -1.0, rl[i]
            o = 12 * b
            th = x[o + 3:o + 6]
            om = x[o + 9:o + 12]
            R, dR = rot_partials(th)
            rho = matvec(R, r)
            alpha = acc[b, 3:6]
            S = skew3(rho)
            # translational rows: a + alpha x rho + om x (om x rho)
            Jx[r0:r0 + 3] += sgn * (dax[b, 0:3] - matmul(S, dax[b, 3:6]))
            Ju[r0:r0 + 3] += sgn * (dau[b, 0:3] - matmul(S, dau[b, 3:6]))
            Jx[r0:r0 + 3, o + 9:o + 12] += sgn * (-skew3(cross3(om, rho)) - matmul(skew3(om), S))
            for m in range(3):
                drho = matvec(dR[m], r)
                Jx[r0:r0 + 3, o + 3 + m] += sgn * (cross3(alpha, drho) + cross3(om, cross3(om, drho)))
            # roll/pitch rows: d/dt (A(th) om)
            A, dA, d2A = euler_rate_partials(th)
            thd = matvec(A, om)
            for j in range(2):
                rw = r0 + 3 + j
                Jx[rw] += sgn * matvec(dax[b, 3:6].T.copy(), A[j])
                Ju[rw] += sgn * matvec(dau[b, 3:6].T.copy(), A[j])
                for m in range(3):
                    c_m = dot(dA[m, j], om)
                    Jx[rw, o + 9:o + 12] += sgn * (thd[m] * dA[m, j] + c_m * A[m])
                for n in range(3):
                    s = dot(dA[n, j], alpha)
                    for m in range(3):
                        s += dot(d2A[m, n, j], om) * thd[m] + dot(dA[m, j], om) * dot(dA[n, m], om)
                    Jx[rw, o + 3 + n] += sgn * s
    return val, Jx, Ju


@jit
def global_step_kernel(x, u, dt, stance, feet, masses, Ib, Ibinv, ra, rl, g):
    W = net_wrench_kernel(x, u, stance, feet, ra, rl)
    xn = np.empty(36)
    for b in range(3):
        o = 12 * b
        xn[o:o + 12] = srb_rk4(x[o:o + 12].copy(), W[b], dt, masses[b], Ib[b], Ibinv[b], g)
    return xn


@jit
def global_step_jac_kernel(x, u, dt, stance, feet, masses, Ib, Ibinv, ra, rl, g):
    """Controller model: per-body RK4 with the net wrench frozen at x_k."""
    W, Wx, Wu = net_wrench_jac_kernel(x, u, stance, feet, ra, rl)
    xn = np.empty(36)
    A = np.zeros((36, 36))
    B = np.zeros((36, 34))
    for b in range(3):
        o = 12 * b
        sn, Phx, Phw = srb_rk4_jac(x[o:o + 12].copy(), W[b], dt, masses[b], Ib[b], Ibinv[b], g)
        xn[o:o + 12] = sn
        A[o:o + 12, o:o + 12] += Phx
        A[o:o + 12] += matmul(Phw, Wx[b])
        B[o:o + 12] = matmul(Phw, Wu[b])
    return xn, A, B


@jit
def plant_rhs_kernel(x, grf, dist, stance, feet, masses, Ib, Ibinv, ra, rl, g, zeta, wb):
    """Continuous DAE right-hand side with Baumgarte-stabilised wrench solve."""
    u = np.zeros(34)
    u[0:24] = grf
    W = net_wrench_kernel(x, u, stance, feet, ra, rl)
    for b in range(3):
        W[b, 0:3] += dist[b]
    Wl = lambda_wrench_cols(x, ra, rl)
    val, M = phidd_affine_kernel(x, W, Wl, masses, Ib, Ibinv, ra, rl, g)
    rhs = val + 2.0 * zeta * wb * phi_dot_kernel(x, ra, rl) + wb * wb * phi_kernel(x, ra, rl)
    lam = np.linalg.solve(M, -rhs)
    xd = np.empty(36)
    for b in range(3):
        wfull = W[b] + matvec(Wl[b], lam)
        xd[12 * b:12 * b + 12] = srb_rhs(x[12 * b:12 * b + 12].copy(), wfull, masses[b], Ib[b], Ibinv[b], g)
    return xd, lam


@jit
def plant_substeps_kernel(x, grf, dist, n_sub, dt, stance, feet, masses, Ib, Ibinv, ra, rl, g, zeta, wb):
    """``n_sub`` RK4 substeps of the plant DAE with inputs held."""
    lam0 = np.zeros(10)
    for k in range(n_sub):
        k1, lam = plant_rhs_kernel(x, grf, dist, stance, feet, masses, Ib, Ibinv, ra, rl, g, zeta, wb)
        if k == 0:
            lam0 = lam
        k2, _ = plant_rhs_kernel(x + 0.5 * dt * k1, grf, dist, stance, feet, masses, Ib, Ibinv, ra, rl, g, zeta, wb)
        k3, _ = plant_rhs_kernel(x + 0.5 * dt * k2, grf, dist, stance, feet, masses, Ib, Ibinv, ra, rl, g, zeta, wb)
        k4, _ = plant_rhs_kernel(x + dt * k3, grf, dist, stance, feet, masses, Ib, Ibinv, ra, rl, g, zeta, wb)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x, lam0


# ---------------------------------------------------------------------------
# public API

@dataclass(frozen=True)
class CoupledSystem:
    """Parameters of the two-robot + payload assembly, packed for the kernels."""

    robots: tuple
    payload: object
    geometry: AttachmentGeometry = field(default_factory=AttachmentGeometry)
    feet_body: np.ndarray = None
    g: float = GRAVITY

    def __post_init__(self):
        from .srb import DEFAULT_FEET_BODY

        feet = DEFAULT_FEET_BODY if self.feet_body is None else self.feet_body
        object.__setattr__(self, "feet_body", np.ascontiguousarray(feet, dtype=float).reshape(4, 3))
        bodies = (*self.robots, self.payload)
        object.__setattr__(self, "masses", np.array([b.mass for b in bodies], dtype=float))
        object.__setattr__(self, "inertias", np.array([b.body_inertia for b in bodies]))
        object.__setattr__(self, "inertias_inv", np.array([b.inertia_inv for b in bodies]))

    @property
    def ra(self) -> np.ndarray:
        return self.geometry.robot_offsets

    @property
    def rl(self) -> np.ndarray:
        return self.geometry.payload_offsets

    def kernel_args(self):
        return self.feet_body, self.masses, self.inertias, self.inertias_inv, self.ra, self.rl, self.g


def _state(x) -> np.ndarray:
    return x.as_array() if hasattr(x, "as_array") else np.asarray(x, dtype=float)


def _pair_state(x_i, x_L, edge: int) -> np.ndarray:
    x = np.zeros(NX)
    x[12 * edge:12 * edge + 12] = _state(x_i)
    x[24:36] = _state(x_L)
    return x


def holonomic_residual(x_i, x_L, geom: AttachmentGeometry, edge: int) -> np.ndarray:
    """Five-row constraint residual of robot ``edge`` (0 or 1) with the payload."""
    x = _pair_state(x_i, x_L, edge)
    return phi_kernel(x, geom.robot_offsets, geom.payload_offsets)[5 * edge:5 * edge + 5]


def holonomic_residual_jacobian(x_i, x_L, geom: AttachmentGeometry, edge: int) -> np.ndarray:
    """d(residual)/d(x_i, x_L), shape 5x24."""
    x = _pair_state(x_i, x_L, edge)
    J = phi_jac_kernel(x, geom.robot_offsets, geom.payload_offsets)[5 * edge:5 * edge + 5]
    return np.hstack([J[:, 12 * edge:12 * edge + 12], J[:, 24:36]])


def wrench_map(x_i, x_L, geom: AttachmentGeometry, edge: int):
    """(robot map, payload map), each 6x5, so that W = F @ lam for that edge."""
    x = _pair_state(x_i, x_L, edge)
    Wl = lambda_wrench_cols(x, geom.robot_offsets, geom.payload_offsets)
    cols = slice(5 * edge, 5 * edge + 5)
    return Wl[edge][:, cols].copy(), Wl[2][:, cols].copy()


def holonomic_second_derivative(system: CoupledSystem, x, u, stance, baumgarte=None) -> np.ndarray:
    """phi_ddot of both edges (10) along the continuous dynamics.

    ``u`` is the 34-vector of GRFs and interaction wrenches, ``stance`` the
    (2, 4) stance flags. With ``baumgarte=(zeta, omega_b)`` the stabilised
    residual ``phi_dd + 2 zeta omega_b phi_d + omega_b**2 phi`` is returned.
    """
    x = _state(x)
    feet, masses, Ib, Ibinv, ra, rl, g = system.kernel_args()
    u = np.asarray(u, dtype=float)
    W = net_wrench_kernel(x, u, np.asarray(stance, dtype=float), feet, ra, rl)
    Wl = lambda_wrench_cols(x, ra, rl)
    val, _ = phidd_affine_kernel(x, W, Wl, masses, Ib, Ibinv, ra, rl, g)
    if baumgarte is not None:
        zeta, wb = baumgarte
        val = val + 2.0 * zeta * wb * phi_dot_kernel(x, ra, rl) + wb * wb * phi_kernel(x, ra, rl)
    return val


def holonomic_second_derivative_jacobian(system: CoupledSystem, x, u, stance):
    """Raw phi_ddot with its Jacobians w.r.t. x (10x36) and u (10x34)."""
    feet, masses, Ib, Ibinv, ra, rl, g = system.kernel_args()
    return phidd_jac_kernel(_state(x), np.asarray(u, dtype=float), np.asarray(stance, dtype=float),
                            feet, masses, Ib, Ibinv, ra, rl, g)


def solve_constraint_wrenches(system: CoupledSystem, x, grf, stance, baumgarte=(1.0, 50.0), disturbance=None):
    """Interaction wrenches making the (stabilised) phi_ddot vanish.

    Returns ``(lam_1L, lam_2L)`` as :class:`InteractionWrench`.
    """
    x = _state(x)
    feet, masses, Ib, Ibinv, ra, rl, g = system.kernel_args()
    u = np.zeros(NU)
    u[:24] = np.asarray(grf, dtype=float).ravel()
    W = net_wrench_kernel(x, u, np.asarray(stance, dtype=float), feet, ra, rl)
    if disturbance is not None:
        W[:, 0:3] += np.asarray(disturbance, dtype=float).reshape(3, 3)
    Wl = lambda_wrench_cols(x, ra, rl)
    val, M = phidd_affine_kernel(x, W, Wl, masses, Ib, Ibinv, ra, rl, g)
    if baumgarte is not None:
        zeta, wb = baumgarte
        val = val + 2.0 * zeta * wb * phi_dot_kernel(x, ra, rl) + wb * wb * phi_kernel(x, ra, rl)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularCoupling(f"constraint-wrench system condition number {cond:.3g}")
    lam = np.linalg.solve(M, -val)
    return InteractionWrench.from_array(lam[:5]), InteractionWrench.from_array(lam[5:])


def nominal_formation(geom: AttachmentGeometry, payload_p, yaw: float = 0.0):
    """Robot CoM positions for a payload at ``payload_p`` with every body at ``yaw``."""
    R = rot(np.array([0.0, 0.0, yaw]))
    p = np.asarray(payload_p, dtype=float)
    return [p + R @ geom.payload_offsets[i] - R @ geom.robot_offsets[i] for i in range(2)]
