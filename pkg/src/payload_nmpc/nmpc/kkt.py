"""Independent KKT certification of an SQP result.

Everything is re-evaluated on the flat NLP: constraint values, the sparse
constraint Jacobians and the objective gradient. Equality multipliers are
obtained by a least-squares fit rather than the solver's adjoint sweep;
inequality multipliers are taken from the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ocp import StageOcp
from .sqp import TOL_COMP, TOL_EQ, TOL_INEQ, TOL_STAT, SolveResult


@dataclass
class KktReport:
    stationarity: float
    equality: float
    inequality: float
    complementarity: float
    dual_infeasibility: float
    passed: bool


def check_kkt(prob: StageOcp, result: SolveResult, tol_stat: float = TOL_STAT, tol_eq: float = TOL_EQ,
              tol_ineq: float = TOL_INEQ, tol_comp: float = TOL_COMP) -> KktReport:
    s = prob.cost_scale
    z = prob.pack(result.X, result.U)
    grad = s * prob.objective_grad(z)
    c_eq = prob.eq_constraints(z)
    J_eq = prob.eq_jacobian(z).toarray()
    g_in = prob.ineq_constraints(z)
    J_in = prob.ineq_jacobian(z).toarray()
    nu = np.concatenate([np.concatenate(result.nu_pyramid) if len(result.nu_pyramid) else np.zeros(0),
                         np.asarray(result.nu_cbf, dtype=float)])
    if len(nu) != len(g_in):
        nu = np.zeros(len(g_in))
    # slacks only relax barrier rows
    n_pyr = prob.n_pyramid
    sigma = np.zeros(len(g_in))
    if prob.n_cbf:
        sigma[n_pyr:] = np.maximum(np.asarray(result.slack, dtype=float), np.maximum(0.0, -g_in[n_pyr:]))
    r0 = grad - J_in.T @ nu
    mu, *_ = np.linalg.lstsq(J_eq.T, -r0, rcond=None)
    stat = float(np.abs(r0 + J_eq.T @ mu).max())
    eq = float(np.abs(c_eq).max()) if len(c_eq) else 0.0
    gs = g_in + sigma
    ineq = float(np.maximum(0.0, -gs).max()) if len(gs) else 0.0
    comp = float(np.abs(gs * nu).max()) if len(gs) else 0.0
    dual = float(np.maximum(0.0, -nu).max()) if len(nu) else 0.0
    if prob.n_cbf:
        w = s * prob.w_slack
        nu_sigma = w - nu[n_pyr:]
        dual = max(dual, float(np.maximum(0.0, -nu_sigma).max()))
        comp = max(comp, float(np.abs(sigma[n_pyr:] * nu_sigma).max()))
    passed = stat < tol_stat and eq < tol_eq and ineq < tol_ineq and comp < tol_comp and dual < tol_comp
    return KktReport(stat, eq, ineq, comp, dual, passed)
