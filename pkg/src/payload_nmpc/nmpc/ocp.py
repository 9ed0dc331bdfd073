"""Multiple-shooting optimal control problems.

Two views are offered on the same problem:

* a stagewise view (per-step dynamics, algebraic rows, input partition)
  consumed by the SQP condensing, and
* a flat NLP view over ``z = [x_0 .. x_N, u_0 .. u_{N-1}]`` with optional
  HOCBF slacks appended, consumed by the KKT checker and the Jacobian tests.

Input partition per step: *free* inputs (stance-foot GRFs) are the QP
unknowns, *fixed* inputs (swing-foot GRFs) are pinned to zero and *basic*
inputs (interaction wrenches) are determined by the algebraic rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..coupling import NU, NX, CoupledSystem, global_step_jac_kernel, global_step_kernel, phidd_affine_kernel, \
    lambda_wrench_cols, net_wrench_kernel, phidd_jac_kernel
from ..errors import ReferenceLengthMismatch
from ..hocbf import HocbfParams, barrier_values_and_grad
from ..srb import ContactSchedule, srb_rk4, srb_rk4_jac

DEFAULT_HORIZON = 8
DEFAULT_TS = 1.0 / 60.0
FRICTION_MU = 0.6
FZ_MAX = 250.0
W_SLACK = 1e8
COST_SCALE = 1e-3


def n_decision_vars(N: int, nx: int = NX, nu: int = NU) -> int:
    return nx * (N + 1) + nu * N


@dataclass(frozen=True)
class OcpWeights:
    q_p: tuple = (1e7, 1e7, 16e7)
    q_theta: tuple = (1e7, 1e7, 1e7)
    q_v: tuple = (1e6, 1e6, 1e6)
    q_omega: tuple = (1e5, 1e5, 1e5)
    terminal_factor: float = 10.0
    r_grf: float = 20.0
    r_f: tuple = (50.0, 50.0, 50.0)
    r_tau: tuple = (500.0, 500.0)

    def __post_init__(self):
        vals = np.concatenate([self.q_p, self.q_theta, self.q_v, self.q_omega, self.r_f, self.r_tau,
                               [self.terminal_factor, self.r_grf]])
        if not np.all(vals > 0):
            raise ValueError("all cost weights must be positive")

    @property
    def Q(self) -> np.ndarray:
        """Diagonal of the per-body state weight."""
        return np.concatenate([self.q_p, self.q_theta, self.q_v, self.q_omega]).astype(float)

    @property
    def P(self) -> np.ndarray:
        return self.terminal_factor * self.Q

    @property
    def R_grf(self) -> np.ndarray:
        return np.full(12, float(self.r_grf))

    @property
    def R_wrench(self) -> np.ndarray:
        edge = np.concatenate([self.r_f, self.r_tau]).astype(float)
        return np.concatenate([edge, edge])

    def to_dict(self) -> dict:
        return {"q_p": list(self.q_p), "q_theta": list(self.q_theta), "q_v": list(self.q_v),
                "q_omega": list(self.q_omega), "terminal_factor": self.terminal_factor, "r_grf": self.r_grf,
                "r_f": list(self.r_f), "r_tau": list(self.r_tau)}

    @classmethod
    def from_dict(cls, d: dict) -> "OcpWeights":
        d = dict(d)
        for k in ("q_p", "q_theta", "q_v", "q_omega", "r_f", "r_tau"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        return cls(**d)


def _pyramid(n_feet: int, mu: float, fz_max: float):
    """Rows G f <= h for ``n_feet`` stacked (fx, fy, fz) forces."""
    blk = np.array([[1.0, 0.0, -mu], [-1.0, 0.0, -mu], [0.0, 1.0, -mu], [0.0, -1.0, -mu], [0.0, 0.0, 1.0]])
    G = np.kron(np.eye(n_feet), blk)
    h = np.tile([0.0, 0.0, 0.0, 0.0, fz_max], n_feet)
    return G, h


def project_pyramid(f: np.ndarray, mu: float = FRICTION_MU, fz_max: float = FZ_MAX) -> np.ndarray:
    """Clip stacked foot forces into the pyramid (exactly feasible afterwards)."""
    f = np.array(f, dtype=float).reshape(-1, 3)
    f[:, 2] = np.clip(f[:, 2], 0.0, fz_max)
    lim = mu * f[:, 2]
    f[:, 0] = np.clip(f[:, 0], -lim, lim)
    f[:, 1] = np.clip(f[:, 1], -lim, lim)
    return f.ravel()


class StageOcp:
    """Base class: stagewise problem data plus the flat NLP view built from it.

    Subclasses set ``N, Ts, nx, nu, x0, x_ref, q, p, r`` and the partition
    ``free_idx[k], fixed_idx[k], basic_idx`` and implement ``step``,
    ``step_jac``, ``alg`` and ``alg_jac``.
    """

    cost_scale = COST_SCALE
    w_slack = W_SLACK
    obstacles = np.zeros((0, 2))
    hocbf = None
    body_xy = ()

    # -- sizes --------------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return n_decision_vars(self.N, self.nx, self.nu)

    @property
    def n_alg(self) -> int:
        return len(self.basic_idx)

    @property
    def n_cbf(self) -> int:
        if self.hocbf is None:
            return 0
        return self.N * len(self.body_xy) * len(self.obstacles)

    @property
    def n_slack(self) -> int:
        return self.n_cbf

    @property
    def n_pyramid(self) -> int:
        return sum(len(h) for h in self.h_free)

    @property
    def n_fixed(self) -> int:
        return sum(len(f) for f in self.fixed_idx)

    @property
    def n_eq(self) -> int:
        return self.nx * (self.N + 1) + self.n_alg * self.N + self.n_fixed

    @property
    def n_ineq(self) -> int:
        return self.n_pyramid + self.n_cbf

    # -- packing ------------------------------------------------------------
    def pack(self, X, U) -> np.ndarray:
        return np.concatenate([np.asarray(X, dtype=float).ravel(), np.asarray(U, dtype=float).ravel()])

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        nX = self.nx * (self.N + 1)
        X = z[:nX].reshape(self.N + 1, self.nx)
        U = z[nX:nX + self.nu * self.N].reshape(self.N, self.nu)
        return X, U

    # -- cost ---------------------------------------------------------------
    def state_weights(self) -> np.ndarray:
        W = np.tile(self.q, (self.N + 1, 1))
        W[-1] = self.p
        return W

    def objective(self, z) -> float:
        X, U = self.unpack(z)
        dX = X - self.x_ref
        return float(np.sum(self.state_weights() * dX * dX) + np.sum(self.r * U * U))

    def objective_grad(self, z) -> np.ndarray:
        X, U = self.unpack(z)
        return self.pack(2.0 * self.state_weights() * (X - self.x_ref), 2.0 * self.r * U)

    # -- barrier rows -------------------------------------------------------
    def cbf_coefficients(self) -> np.ndarray:
        """(N, N+1) weights turning the h sequence into psi2 rows (psi1 on the last row)."""
        a1, a2 = self.hocbf.alpha1_gain, self.hocbf.alpha2_gain
        C = np.zeros((self.N, self.N + 1))
        for k in range(self.N - 1):
            C[k, k:k + 3] = [(1 - a1) * (1 - a2), -(2 - a1 - a2), 1.0]
        C[self.N - 1, self.N - 1:self.N + 1] = [-(1 - a1), 1.0]
        return C

    def _traj_xy(self, X) -> np.ndarray:
        # barrier helper expects 36-wide rows with bodies at 0, 12, 24
        out = np.zeros((X.shape[0], 36))
        for b, (ix, iy) in enumerate(self.body_xy):
            out[:, 12 * b] = X[:, ix]
            out[:, 12 * b + 1] = X[:, iy]
        return out

    def cbf_values(self, X, with_grad: bool = False):
        """psi rows shaped (N, n_body, n_obs); optionally d/dxy of every h."""
        nb, no = len(self.body_xy), len(self.obstacles)
        if self.n_cbf == 0:
            empty = np.zeros((self.N, nb, no))
            return (empty, np.zeros((self.N + 1, nb, no, 2))) if with_grad else empty
        h, dh = barrier_values_and_grad(self._traj_xy(X), self.obstacles, self.hocbf.d_th)
        h, dh = h[:, :nb], dh[:, :nb]
        psi = np.einsum("kj,jbl->kbl", self.cbf_coefficients(), h)
        return (psi, dh) if with_grad else psi

    # -- flat NLP view ------------------------------------------------------
    def _x_slice(self, k):
        return slice(self.nx * k, self.nx * (k + 1))

    def _u_col(self, k, i):
        return self.nx * (self.N + 1) + self.nu * k + i

    def eq_constraints(self, z) -> np.ndarray:
        X, U = self.unpack(z)
        rows = [X[0] - self.x0]
        for k in range(self.N):
            rows.append(X[k + 1] - self.step(k, X[k], U[k]))
        for k in range(self.N):
            if self.n_alg:
                rows.append(self.alg(k, X[k], U[k]))
        for k in range(self.N):
            rows.append(U[k][self.fixed_idx[k]])
        return np.concatenate(rows)

    def eq_jacobian(self, z) -> sp.csr_matrix:
        X, U = self.unpack(z)
        nx, nu, N = self.nx, self.nu, self.N
        u0 = nx * (N + 1)
        blocks = sp.lil_matrix((self.n_eq, self.n_vars))
        blocks[0:nx, 0:nx] = np.eye(nx)
        r = nx
        for k in range(N):
            _, A, B = self.step_jac(k, X[k], U[k])
            blocks[r:r + nx, nx * (k + 1):nx * (k + 2)] = np.eye(nx)
            blocks[r:r + nx, nx * k:nx * (k + 1)] = -A
            blocks[r:r + nx, u0 + nu * k:u0 + nu * (k + 1)] = -B
            r += nx
        if self.n_alg:
            for k in range(N):
                _, C, D = self.alg_jac(k, X[k], U[k])
                blocks[r:r + self.n_alg, nx * k:nx * (k + 1)] = C
                blocks[r:r + self.n_alg, u0 + nu * k:u0 + nu * (k + 1)] = D
                r += self.n_alg
        for k in range(N):
            for i in self.fixed_idx[k]:
                blocks[r, u0 + nu * k + i] = 1.0
                r += 1
        return blocks.tocsr()

    def ineq_constraints(self, z) -> np.ndarray:
        """Inequalities in ``g(z) >= 0`` form: pyramid rows, then barrier rows."""
        X, U = self.unpack(z)
        rows = [self.h_free[k] - self.G_free[k] @ U[k][self.free_idx[k]] for k in range(self.N)]
        rows.append(self.cbf_values(X).ravel())
        return np.concatenate(rows)

    def ineq_jacobian(self, z) -> sp.csr_matrix:
        X, _ = self.unpack(z)
        J = sp.lil_matrix((self.n_ineq, self.n_vars))
        r = 0
        for k in range(self.N):
            m = len(self.h_free[k])
            cols = [self._u_col(k, i) for i in self.free_idx[k]]
            J[r:r + m, cols] = -self.G_free[k]
            r += m
        if self.n_cbf:
            _, dh = self.cbf_values(X, with_grad=True)
            C = self.cbf_coefficients()
            nb, no = len(self.body_xy), len(self.obstacles)
            for k in range(self.N):
                for b, (ix, iy) in enumerate(self.body_xy):
                    for l in range(no):
                        row = r + (k * nb + b) * no + l
                        for j in np.nonzero(C[k])[0]:
                            J[row, self.nx * j + ix] += C[k, j] * dh[j, b, l, 0]
                            J[row, self.nx * j + iy] += C[k, j] * dh[j, b, l, 1]
        return J.tocsr()


class OcpProblem(StageOcp):
    """Coupled two-robot + payload NMPC problem (one instance per control tick)."""

    nx = NX
    nu = NU

    def __init__(self, x0, x_ref, stance, system: CoupledSystem, weights: OcpWeights, obstacles=(),
                 hocbf: HocbfParams | None = None, N: int = DEFAULT_HORIZON, Ts: float = DEFAULT_TS,
                 mu: float = FRICTION_MU, fz_max: float = FZ_MAX, w_slack: float = W_SLACK):
        self.N, self.Ts = int(N), float(Ts)
        self.x0 = np.asarray(x0, dtype=float).reshape(NX)
        self.x_ref = np.asarray(x_ref, dtype=float).reshape(self.N + 1, NX)
        self.stance = np.asarray(stance, dtype=float).reshape(-1, 2, 4)
        self.system = system
        self.weights = weights
        self.mu, self.fz_max, self.w_slack = mu, fz_max, w_slack
        self.obstacles = np.asarray([getattr(o, "position", o) for o in obstacles], dtype=float).reshape(-1, 2)
        self.hocbf = hocbf if len(self.obstacles) else None
        self.body_xy = ((0, 1), (12, 13), (24, 25))
        Q, P = weights.Q, weights.P
        self.q = np.tile(Q, 3)
        self.p = np.tile(P, 3)
        self.r = np.concatenate([weights.R_grf, weights.R_grf, weights.R_wrench])
        self.basic_idx = np.arange(24, 34)
        self.free_idx, self.fixed_idx, self.G_free, self.h_free = [], [], [], []
        for k in range(self.N):
            free, fixed = [], []
            for rb in range(2):
                for j in range(4):
                    cols = [12 * rb + 3 * j + c for c in range(3)]
                    (free if self.stance[k, rb, j] > 0.5 else fixed).extend(cols)
            self.free_idx.append(np.array(free, dtype=int))
            self.fixed_idx.append(np.array(fixed, dtype=int))
            G, h = _pyramid(len(free) // 3, mu, fz_max)
            self.G_free.append(G)
            self.h_free.append(h)
        self._kargs = system.kernel_args()

    # -- stagewise ----------------------------------------------------------
    def step(self, k, x, u):
        feet, m, Ib, Ibinv, ra, rl, g = self._kargs
        return global_step_kernel(x, u, self.Ts, self.stance[k], feet, m, Ib, Ibinv, ra, rl, g)

    def step_jac(self, k, x, u):
        feet, m, Ib, Ibinv, ra, rl, g = self._kargs
        return global_step_jac_kernel(x, u, self.Ts, self.stance[k], feet, m, Ib, Ibinv, ra, rl, g)

    def alg(self, k, x, u):
        feet, m, Ib, Ibinv, ra, rl, g = self._kargs
        W = net_wrench_kernel(x, u, self.stance[k], feet, ra, rl)
        val, _ = phidd_affine_kernel(x, W, lambda_wrench_cols(x, ra, rl), m, Ib, Ibinv, ra, rl, g)
        return val

    def alg_jac(self, k, x, u):
        feet, m, Ib, Ibinv, ra, rl, g = self._kargs
        return phidd_jac_kernel(x, u, self.stance[k], feet, m, Ib, Ibinv, ra, rl, g)

    def hover_guess(self) -> np.ndarray:
        """Inputs balancing gravity with the payload weight split across both edges."""
        m = self.system.masses
        g = self.system.g
        U = np.zeros((self.N, NU))
        for k in range(self.N):
            for rb in range(2):
                feet = np.nonzero(self.stance[k, rb] > 0.5)[0]
                load = (m[rb] + 0.5 * m[2]) * g
                for j in feet:
                    U[k, 12 * rb + 3 * j + 2] = load / max(len(feet), 1)
            U[k, 24 + 2] = -0.5 * m[2] * g
            U[k, 29 + 2] = -0.5 * m[2] * g
        return U


class SingleBodyOcp(StageOcp):
    """One SRB driven directly by its net wrench; used as an LQ oracle problem."""

    nx = 12
    nu = 6

    def __init__(self, x0, x_ref, params, q, p, r, N: int = DEFAULT_HORIZON, Ts: float = DEFAULT_TS,
                 g: float = 9.81):
        self.N, self.Ts, self.g = int(N), float(Ts), g
        self.x0 = np.asarray(x0, dtype=float).reshape(12)
        self.x_ref = np.asarray(x_ref, dtype=float).reshape(self.N + 1, 12)
        self.params = params
        self.q, self.p, self.r = (np.asarray(a, dtype=float) for a in (q, p, r))
        self.basic_idx = np.zeros(0, dtype=int)
        self.free_idx = [np.arange(6)] * self.N
        self.fixed_idx = [np.zeros(0, dtype=int)] * self.N
        self.G_free = [np.zeros((0, 6))] * self.N
        self.h_free = [np.zeros(0)] * self.N

    def _args(self):
        P = self.params
        return float(P.mass), P.body_inertia, P.inertia_inv, self.g

    def step(self, k, x, u):
        return srb_rk4(np.asarray(x, dtype=float), np.asarray(u, dtype=float), self.Ts, *self._args())

    def step_jac(self, k, x, u):
        return srb_rk4_jac(np.asarray(x, dtype=float), np.asarray(u, dtype=float), self.Ts, *self._args())

    def alg(self, k, x, u):
        return np.zeros(0)

    def alg_jac(self, k, x, u):
        return np.zeros(0), np.zeros((0, 12)), np.zeros((0, 6))

    def hover_guess(self) -> np.ndarray:
        U = np.zeros((self.N, 6))
        U[:, 2] = self.params.mass * self.g
        return U


def _stance_array(schedule, N: int) -> np.ndarray:
    if isinstance(schedule, ContactSchedule):
        sched = (schedule, schedule)
    else:
        sched = tuple(schedule)
    st = []
    for s in sched:
        a = np.asarray(s.stance if isinstance(s, ContactSchedule) else s, dtype=float)
        if a.shape[0] < N:
            raise ReferenceLengthMismatch(f"contact schedule covers {a.shape[0]} steps, need {N}")
        st.append(a[:N + 1] if a.shape[0] > N else a)
    n = min(len(a) for a in st)
    return np.stack([a[:n] for a in st], axis=1)


def _refs_array(refs, N: int) -> np.ndarray:
    if isinstance(refs, (list, tuple)) and len(refs) == 3:
        parts = [np.asarray(r, dtype=float) for r in refs]
        for r in parts:
            if r.ndim != 2 or r.shape[0] != N + 1 or r.shape[1] != 12:
                raise ReferenceLengthMismatch(f"reference of shape {r.shape}, need ({N + 1}, 12)")
        return np.hstack(parts)
    a = np.asarray(refs, dtype=float)
    if a.ndim != 2 or a.shape != (N + 1, NX):
        raise ReferenceLengthMismatch(f"reference of shape {a.shape}, need ({N + 1}, {NX})")
    return a


def build_ocp(x_measured, refs, schedule, obstacles, weights: OcpWeights, hocbf: HocbfParams | None,
              system: CoupledSystem, N: int = DEFAULT_HORIZON, Ts: float = DEFAULT_TS, safety: bool = True,
              **kw) -> OcpProblem:
    """Assemble the coupled NMPC problem for one control tick.

    ``refs`` is either a (N+1, 36) array or three (N+1, 12) per-body arrays.
    ``schedule`` is one ContactSchedule shared by both robots or a pair.
    ``safety=False`` drops the barrier rows (ablation).
    """
    x_ref = _refs_array(refs, N)
    stance = _stance_array(schedule, N)
    prob = OcpProblem(x_measured, x_ref, stance, system, weights, obstacles if safety else (),
                      hocbf if safety else None, N=N, Ts=Ts, **kw)
    assert prob.n_vars == n_decision_vars(N), "decision-vector layout drifted"
    return prob
