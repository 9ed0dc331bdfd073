"""Gauss-Newton SQP with condensing and an l1 merit line search.

Each iteration linearises the stage dynamics and algebraic rows, eliminates
the basic inputs (interaction wrenches) and the pinned swing forces, and
condenses the state trajectory onto the free inputs. The resulting dense
QP is solved with ``quadprog``. Barrier rows are tried hard first and only
softened with slacks when the hard QP is infeasible, so slack is exactly
zero whenever it is not needed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import quadprog

from ..errors import QpSubproblemFailure
from .ocp import StageOcp, project_pyramid

MAX_ITER = 10
TOL_STAT = 1e-4
TOL_EQ = 1e-6
TOL_INEQ = 1e-6
TOL_COMP = 1e-6
SLACK_REG = 1e-8

STATUS_CONVERGED = "converged"
STATUS_CAPPED = "iteration-capped"
STATUS_FALLBACK = "infeasible-fallback"


@dataclass
class KktResidual:
    stationarity: float
    equality: float
    inequality: float
    complementarity: float

    def ok(self, tol_stat=TOL_STAT, tol_eq=TOL_EQ, tol_ineq=TOL_INEQ, tol_comp=TOL_COMP) -> bool:
        return (self.stationarity < tol_stat and self.equality < tol_eq and self.inequality < tol_ineq
                and self.complementarity < tol_comp)

    @property
    def max(self) -> float:
        return max(self.stationarity, self.equality, self.inequality, self.complementarity)


@dataclass
class SolveResult:
    X: np.ndarray
    U: np.ndarray
    first_input: np.ndarray
    kkt: KktResidual
    iterations: int
    solve_time_ms: float
    slack: np.ndarray
    status: str
    nu_pyramid: list = field(default_factory=list)
    nu_cbf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cost: float = float("nan")

    @property
    def slack_total(self) -> float:
        return float(np.sum(self.slack))

    @property
    def grfs(self) -> np.ndarray:
        return self.U[:, :24]

    @property
    def wrenches(self) -> np.ndarray:
        return self.U[:, 24:]


class _Lin:
    """Function values and Jacobians of every stage at one iterate."""

    def __init__(self, prob: StageOcp, X, U):
        N = prob.N
        self.xn = np.empty((N, prob.nx))
        self.A = np.empty((N, prob.nx, prob.nx))
        self.B = np.empty((N, prob.nx, prob.nu))
        na = prob.n_alg
        self.c = np.empty((N, na))
        self.C = np.empty((N, na, prob.nx))
        self.D = np.empty((N, na, prob.nu))
        for k in range(N):
            self.xn[k], self.A[k], self.B[k] = prob.step_jac(k, X[k], U[k])
            if na:
                self.c[k], self.C[k], self.D[k] = prob.alg_jac(k, X[k], U[k])
        self.psi, self.dh = prob.cbf_values(X, with_grad=True)


def _violation(prob: StageOcp, X, U, psi=None) -> float:
    """l1 norm of equality defects plus barrier violations."""
    v = np.abs(X[0] - prob.x0).sum()
    for k in range(prob.N):
        v += np.abs(X[k + 1] - prob.step(k, X[k], U[k])).sum()
        if prob.n_alg:
            v += np.abs(prob.alg(k, X[k], U[k])).sum()
        v += np.abs(U[k][prob.fixed_idx[k]]).sum()
    if prob.n_cbf:
        psi = prob.cbf_values(X) if psi is None else psi
        v += np.maximum(0.0, -psi).sum()
    return float(v)


def _lin_violation(prob: StageOcp, X, U, lin) -> float:
    """Same as :func:`_violation`, reusing stage values already in ``lin``."""
    v = np.abs(X[0] - prob.x0).sum() + np.abs(X[1:] - lin.xn).sum() + np.abs(lin.c).sum()
    v += sum(np.abs(U[k][prob.fixed_idx[k]]).sum() for k in range(prob.N))
    return float(v + np.maximum(0.0, -lin.psi).sum())


def _eq_violation(prob: StageOcp, X, U, lin: _Lin) -> float:
    e = np.abs(X[0] - prob.x0).max()
    for k in range(prob.N):
        e = max(e, np.abs(X[k + 1] - lin.xn[k]).max())
        if prob.n_alg:
            e = max(e, np.abs(lin.c[k]).max())
        if len(prob.fixed_idx[k]):
            e = max(e, np.abs(U[k][prob.fixed_idx[k]]).max())
    return float(e)


def _cbf_row_grads(prob: StageOcp, dh, Phi):
    """Condensed gradients of barrier rows w.r.t. the free inputs."""
    nb, no = len(prob.body_xy), len(prob.obstacles)
    ny = Phi.shape[2]
    G = np.zeros((prob.N + 1, nb, no, ny))
    for b, (ix, iy) in enumerate(prob.body_xy):
        G[:, b] = dh[:, b, :, 0, None] * Phi[:, None, ix, :] + dh[:, b, :, 1, None] * Phi[:, None, iy, :]
    return np.einsum("kj,jbly->kbly", prob.cbf_coefficients(), G).reshape(prob.N * nb * no, ny)


def _cbf_row_consts(prob: StageOcp, dh, phi):
    nb, no = len(prob.body_xy), len(prob.obstacles)
    g = np.zeros((prob.N + 1, nb, no))
    for b, (ix, iy) in enumerate(prob.body_xy):
        g[:, b] = dh[:, b, :, 0] * phi[:, ix, None] + dh[:, b, :, 1] * phi[:, iy, None]
    return np.einsum("kj,jbl->kbl", prob.cbf_coefficients(), g).ravel()


class _Condensed:
    """Affine maps dX = Phi Y + phi, dU = Psi Y + psi over the free inputs Y."""

    def __init__(self, prob: StageOcp, X, U, lin: _Lin):
        N, nx, nu = prob.N, prob.nx, prob.nu
        self.offsets = np.cumsum([0] + [len(f) for f in prob.free_idx])
        ny = int(self.offsets[-1])
        Phi = np.zeros((N + 1, nx, ny))
        phi = np.zeros((N + 1, nx))
        Psi = np.zeros((N, nu, ny))
        psi = np.zeros((N, nu))
        phi[0] = prob.x0 - X[0]
        basic = prob.basic_idx
        for k in range(N):
            free, fixed = prob.free_idx[k], prob.fixed_idx[k]
            o0, o1 = self.offsets[k], self.offsets[k + 1]
            # free and fixed parts of du_k
            Psi[k, free, o0:o1] = np.eye(len(free))
            psi[k, fixed] = -U[k][fixed]
            if len(basic):
                Db = lin.D[k][:, basic]
                rhs_const = lin.c[k] + lin.C[k] @ phi[k] + lin.D[k][:, fixed] @ psi[k, fixed]
                rhs_lin = lin.C[k] @ Phi[k]
                rhs_lin[:, o0:o1] += lin.D[k][:, free]
                sol = np.linalg.solve(Db, np.column_stack([rhs_const, rhs_lin]))
                psi[k, basic] = -sol[:, 0]
                Psi[k, basic] = -sol[:, 1:]
            Phi[k + 1] = lin.A[k] @ Phi[k] + lin.B[k] @ Psi[k]
            phi[k + 1] = lin.A[k] @ phi[k] + lin.B[k] @ psi[k] + lin.xn[k] - X[k + 1]
        self.Phi, self.phi, self.Psi, self.psi = Phi, phi, Psi, psi
        self.ny = ny


def _solve_qp(H, g, Cin, bin_, n_soft: int, w_soft: float):
    """min 1/2 y'Hy + g'y s.t. Cin y >= bin_; the last ``n_soft`` rows may be relaxed.

    Returns (y, multipliers, slack).
    """
    ny = H.shape[0]
    try:
        if len(bin_):
            y, _, _, _, lag, _ = quadprog.solve_qp(H, -g, Cin.T, bin_, 0)
        else:
            y = np.linalg.solve(H, -g)
            lag = np.zeros(0)
        return y, lag, np.zeros(n_soft)
    except ValueError as err:
        if n_soft == 0 or "inconsistent" not in str(err):
            raise QpSubproblemFailure(str(err)) from err
    m = len(bin_)
    nh = m - n_soft
    Ha = np.zeros((ny + n_soft, ny + n_soft))
    Ha[:ny, :ny] = H
    Ha[ny:, ny:] = SLACK_REG * np.eye(n_soft)
    ga = np.concatenate([g, np.full(n_soft, w_soft)])
    Ca = np.zeros((m + n_soft, ny + n_soft))
    Ca[:m, :ny] = Cin
    Ca[nh:m, ny:] = np.eye(n_soft)
    Ca[m:, ny:] = np.eye(n_soft)
    ba = np.concatenate([bin_, np.zeros(n_soft)])
    try:
        ya, _, _, _, lag, _ = quadprog.solve_qp(Ha, -ga, Ca.T, ba, 0)
    except ValueError as err:
        raise QpSubproblemFailure(str(err)) from err
    return ya[:ny], lag[:m], np.maximum(ya[ny:], 0.0)


def kkt_residual(prob: StageOcp, X, U, lin: _Lin, nu_pyr, nu_cbf, slack) -> KktResidual:
    """KKT residual of the (scaled) NLP via an adjoint sweep for the equality multipliers."""
    s = prob.cost_scale
    N = prob.N
    gx = 2.0 * s * prob.state_weights() * (X - prob.x_ref)
    gu = 2.0 * s * prob.r * U
    # d(barrier rows)/dx_j contracted with their multipliers
    lam_x = np.zeros((N + 1, prob.nx))
    if prob.n_cbf:
        nb, no = len(prob.body_xy), len(prob.obstacles)
        w = np.einsum("kj,kbl->jbl", prob.cbf_coefficients(), nu_cbf.reshape(N, nb, no))
        for b, (ix, iy) in enumerate(prob.body_xy):
            lam_x[:, ix] += np.sum(w[:, b] * lin.dh[:, b, :, 0], axis=1)
            lam_x[:, iy] += np.sum(w[:, b] * lin.dh[:, b, :, 1], axis=1)
    basic = prob.basic_idx
    mu = lam_x[N] - gx[N]
    stat = 0.0
    for k in range(N - 1, -1, -1):
        free = prob.free_idx[k]
        if len(basic):
            eta = np.linalg.solve(lin.D[k][:, basic].T, lin.B[k][:, basic].T @ mu - gu[k, basic])
        else:
            eta = np.zeros(0)
        r = gu[k, free] - lin.B[k][:, free].T @ mu + lin.D[k][:, free].T @ eta + prob.G_free[k].T @ nu_pyr[k]
        if len(r):
            stat = max(stat, float(np.abs(r).max()))
        if k > 0:
            mu = lin.A[k].T @ mu - lin.C[k].T @ eta + lam_x[k] - gx[k]
    eq = _eq_violation(prob, X, U, lin)
    ineq, comp = 0.0, 0.0
    for k in range(N):
        gk = prob.h_free[k] - prob.G_free[k] @ U[k][prob.free_idx[k]]
        if len(gk):
            ineq = max(ineq, float(np.maximum(0.0, -gk).max()))
            comp = max(comp, float(np.abs(gk * nu_pyr[k]).max()))
    if prob.n_cbf:
        psi = lin.psi.ravel()
        sig = np.maximum(slack, np.maximum(0.0, -psi))
        ineq = max(ineq, float(np.maximum(0.0, -(psi + sig)).max()))
        comp = max(comp, float(np.abs((psi + sig) * nu_cbf).max()))
        comp = max(comp, float(np.abs(sig * (s * prob.w_slack - nu_cbf)).max()))
    return KktResidual(stat, eq, ineq, comp)


def shift_guess(prob: StageOcp, prev: SolveResult | None, shift: bool = True):
    """Initial iterate: shifted previous solution (or a hover guess) made consistent with this tick."""
    if prev is None or prev.X.shape != (prob.N + 1, prob.nx):
        X = np.tile(prob.x0, (prob.N + 1, 1))
        U = prob.hover_guess()
    elif shift:
        X = np.vstack([prev.X[1:], prev.X[-1:]])
        U = np.vstack([prev.U[1:], prev.U[-1:]])
    else:
        X, U = prev.X.copy(), prev.U.copy()
    X = X.copy()
    U = U.copy()
    X[0] = prob.x0
    for k in range(prob.N):
        U[k][prob.fixed_idx[k]] = 0.0
        if len(prob.h_free[k]):
            U[k][prob.free_idx[k]] = project_pyramid(U[k][prob.free_idx[k]], prob.mu, prob.fz_max)
    return X, U


def _apply_first(prob: StageOcp, U) -> np.ndarray:
    u = U[0].copy()
    u[prob.fixed_idx[0]] = 0.0
    if len(prob.h_free[0]):
        u[prob.free_idx[0]] = project_pyramid(u[prob.free_idx[0]], prob.mu, prob.fz_max)
    return u


def solve(prob: StageOcp, warm_start: SolveResult | None = None, max_iter: int = MAX_ITER, shift: bool = True,
          tol_stat: float = TOL_STAT) -> SolveResult:
    """Run at most ``max_iter`` SQP iterations on ``prob``."""
    t0 = time.perf_counter()
    X, U = shift_guess(prob, warm_start, shift)
    s = prob.cost_scale
    w_soft = s * prob.w_slack
    n_cbf = prob.n_cbf
    rho = 1.0
    lin = _Lin(prob, X, U)
    nu_pyr = [np.zeros(len(h)) for h in prob.h_free]
    nu_cbf = np.zeros(n_cbf)
    slack = np.zeros(n_cbf)
    kkt = None
    it = 0
    status = STATUS_CAPPED
    if warm_start is not None and not shift and warm_start.status == STATUS_CONVERGED:
        # an unchanged problem whose stored iterate is already a KKT point is returned as is
        if len(warm_start.nu_cbf) == n_cbf and len(warm_start.nu_pyramid) == prob.N:
            kkt0 = kkt_residual(prob, X, U, lin, warm_start.nu_pyramid, warm_start.nu_cbf, warm_start.slack)
            if kkt0.ok(tol_stat=tol_stat):
                ms = (time.perf_counter() - t0) * 1e3
                return SolveResult(X=X, U=U, first_input=_apply_first(prob, U), kkt=kkt0, iterations=0,
                                   solve_time_ms=ms, slack=warm_start.slack.copy(), status=STATUS_CONVERGED,
                                   nu_pyramid=[a.copy() for a in warm_start.nu_pyramid],
                                   nu_cbf=warm_start.nu_cbf.copy(), cost=prob.objective(prob.pack(X, U)))
    try:
        for it in range(1, max_iter + 1):
            cond = _Condensed(prob, X, U, lin)
            W = prob.state_weights()
            Phi, phi, Psi, psi = cond.Phi, cond.phi, cond.Psi, cond.psi
            WPhi = 2.0 * s * W[:, :, None] * Phi
            RPsi = 2.0 * s * prob.r[None, :, None] * Psi
            ny = cond.ny
            H = Phi.reshape(-1, ny).T @ WPhi.reshape(-1, ny) + Psi.reshape(-1, ny).T @ RPsi.reshape(-1, ny)
            H = 0.5 * (H + H.T)
            gX = 2.0 * s * W * (X + phi - prob.x_ref)
            gU = 2.0 * s * prob.r * (U + psi)
            g = gX.ravel() @ Phi.reshape(-1, ny) + gU.ravel() @ Psi.reshape(-1, ny)
            # inequality rows: Cin y >= b
            rows, rhs = [], []
            for k in range(prob.N):
                o0, o1 = cond.offsets[k], cond.offsets[k + 1]
                m = len(prob.h_free[k])
                if m:
                    Ck = np.zeros((m, cond.ny))
                    Ck[:, o0:o1] = -prob.G_free[k]
                    rows.append(Ck)
                    rhs.append(prob.G_free[k] @ U[k][prob.free_idx[k]] - prob.h_free[k])
            if n_cbf:
                rows.append(_cbf_row_grads(prob, lin.dh, Phi))
                rhs.append(-(lin.psi.ravel() + _cbf_row_consts(prob, lin.dh, phi)))
            Cin = np.vstack(rows) if rows else np.zeros((0, cond.ny))
            bin_ = np.concatenate(rhs) if rhs else np.zeros(0)
            y, lag, slack = _solve_qp(H, g, Cin, bin_, n_cbf, w_soft)
            dX = Phi @ y + phi
            dU = Psi @ y + psi
            n_pyr = len(bin_) - n_cbf
            lag_pyr = lag[:n_pyr]
            nu_pyr, off = [], 0
            for k in range(prob.N):
                m = len(prob.h_free[k])
                nu_pyr.append(lag_pyr[off:off + m])
                off += m
            nu_cbf = lag[n_pyr:]

            # l1 merit line search
            f0 = s * prob.objective(prob.pack(X, U))
            v0 = _lin_violation(prob, X, U, lin)
            grad_dir = float(np.sum(2.0 * s * W * (X - prob.x_ref) * dX) + np.sum(2.0 * s * prob.r * U * dU))
            quad = float(np.sum(s * W * dX * dX) + np.sum(s * prob.r * dU * dU))
            lin_v = float(np.sum(slack))
            if v0 - lin_v > 1e-12:
                rho = max(rho, (grad_dir + 0.5 * quad) / (0.5 * (v0 - lin_v)) + 1.0)
            D = grad_dir - rho * (v0 - lin_v)
            m0 = f0 + rho * v0
            alpha = 1.0
            for _ in range(12):
                Xt, Ut = X + alpha * dX, U + alpha * dU
                mt = s * prob.objective(prob.pack(Xt, Ut)) + rho * _violation(prob, Xt, Ut)
                if mt <= m0 + 1e-4 * alpha * min(D, 0.0) + 1e-12 * abs(m0):
                    break
                alpha *= 0.5
            X, U = Xt, Ut
            lin = _Lin(prob, X, U)
            kkt = kkt_residual(prob, X, U, lin, nu_pyr, nu_cbf, slack)
            if kkt.ok(tol_stat=tol_stat):
                status = STATUS_CONVERGED
                break
    except QpSubproblemFailure:
        X, U = shift_guess(prob, warm_start, shift)
        status = STATUS_FALLBACK
        slack = np.zeros(n_cbf)
        kkt = KktResidual(np.inf, np.inf, np.inf, np.inf)
    if kkt is None:
        kkt = KktResidual(np.inf, np.inf, np.inf, np.inf)
    ms = (time.perf_counter() - t0) * 1e3
    return SolveResult(X=X, U=U, first_input=_apply_first(prob, U), kkt=kkt, iterations=it, solve_time_ms=ms,
                       slack=slack, status=status, nu_pyramid=nu_pyr, nu_cbf=nu_cbf,
                       cost=prob.objective(prob.pack(X, U)))
