"""Receding-horizon controller wrapping OCP construction and the SQP."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..coupling import CoupledSystem
from ..hocbf import HocbfParams
from ..srb import trot_schedule
from .ocp import DEFAULT_HORIZON, DEFAULT_TS, OcpWeights, build_ocp
from .sqp import MAX_ITER, SolveResult, solve


class NmpcController:
    """Holds the nominal model, the reference generator and the warm start.

    ``reference`` maps ``(t, N, Ts)`` to an (N+1, 36) reference window.
    """

    def __init__(self, system: CoupledSystem, weights: OcpWeights, reference: Callable, obstacles=(),
                 hocbf: HocbfParams | None = None, N: int = DEFAULT_HORIZON, Ts: float = DEFAULT_TS,
                 gait_period: float = 0.4, phase_offsets=(0.0, 0.0), safety: bool = True, max_iter: int = MAX_ITER,
                 **ocp_kw):
        self.system = system
        self.weights = weights
        self.reference = reference
        self.obstacles = list(obstacles)
        self.hocbf = hocbf
        self.N, self.Ts = int(N), float(Ts)
        self.gait_period = gait_period
        self.phase_offsets = tuple(phase_offsets)
        self.safety = safety
        self.max_iter = max_iter
        self.ocp_kw = ocp_kw
        self.last: SolveResult | None = None
        self.last_t: float | None = None
        self.last_problem = None
        self.solve_times: list[float] = []

    def schedules(self, t: float):
        return tuple(trot_schedule(t, self.N, self.Ts, self.gait_period, off, self.system.feet_body)
                     for off in self.phase_offsets)

    def step(self, x_measured, t: float):
        """Solve one tick. Returns ``(grfs (2, 12), SolveResult)``."""
        prob = build_ocp(x_measured, self.reference(t, self.N, self.Ts), self.schedules(t), self.obstacles,
                         self.weights, self.hocbf, self.system, N=self.N, Ts=self.Ts, safety=self.safety,
                         **self.ocp_kw)
        # shift only when time has advanced since the stored solution
        shift = self.last_t is None or t > self.last_t + 1e-12
        res = solve(prob, self.last, max_iter=self.max_iter, shift=shift)
        self.last, self.last_t, self.last_problem = res, t, prob
        self.solve_times.append(res.solve_time_ms)
        return res.first_input[:24].reshape(2, 12), res

    def solve_time_stats(self):
        a = np.asarray(self.solve_times)
        if a.size == 0:
            return float("nan"), float("nan")
        return float(a.mean()), float(a.std())


def step_controller(controller: NmpcController, x_measured, t: float):
    return controller.step(x_measured, t)
