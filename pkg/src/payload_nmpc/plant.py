"""Ground-truth plant, measurement model and the closed-loop driver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coupling import NX, CoupledSystem, phi_kernel, plant_substeps_kernel
from .errors import ConstraintBlowup, PayloadNmpcError
from .spatial import euler_rate, rot
from .srb import trot_phase_stance

PHI_LIMIT = 0.05


@dataclass(frozen=True)
class Disturbance:
    start: float
    duration: float
    body: int
    force: tuple

    def active(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration


@dataclass(frozen=True)
class PlantConfig:
    system: CoupledSystem
    Ts: float = 1.0 / 60.0
    substeps: int = 16
    baumgarte: tuple = (1.0, 50.0)
    disturbances: tuple = ()
    phi_limit: float = PHI_LIMIT
    gait_period: float = 0.4
    phase_offsets: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.substeps < 1 or int(self.substeps) != self.substeps:
            raise ValueError("substeps must be a positive integer")

    @property
    def dt_plant(self) -> float:
        return self.Ts / self.substeps

    def disturbance_at(self, t: float) -> np.ndarray:
        d = np.zeros((3, 3))
        for dist in self.disturbances:
            if dist.active(t):
                d[dist.body] += np.asarray(dist.force, dtype=float)
        return d


def plant_step(x, grfs, stance, config: PlantConfig, t: float):
    """Advance the plant by one control period with the GRFs held.

    Returns ``(x_next, lam)`` where ``lam`` (10) is the constraint wrench
    resolved at the start of the period.
    """
    x = np.asarray(x, dtype=float).reshape(NX)
    grf = np.asarray(grfs, dtype=float).reshape(24)
    st = np.asarray(stance, dtype=float).reshape(2, 4)
    sysm = config.system
    feet, m, Ib, Ibinv, ra, rl = sysm.feet_body, sysm.masses, sysm.inertias, sysm.inertias_inv, sysm.ra, sysm.rl
    zeta, wb = config.baumgarte
    dt = config.dt_plant
    lam0 = None
    k = 0
    while k < config.substeps:
        # group substeps sharing the same disturbance
        dist = config.disturbance_at(t + k * dt)
        j = k + 1
        while j < config.substeps and np.array_equal(config.disturbance_at(t + j * dt), dist):
            j += 1
        x, lam = plant_substeps_kernel(x, grf, dist, j - k, dt, st, feet, m, Ib, Ibinv, ra, rl, sysm.g, zeta, wb)
        if lam0 is None:
            lam0 = lam
        k = j
    if not np.all(np.isfinite(x)):
        raise ConstraintBlowup(f"non-finite plant state at t={t:.4f}")
    err = np.abs(phi_kernel(x, ra, rl)).max()
    if err > config.phi_limit:
        raise ConstraintBlowup(f"holonomic residual {err:.3g} exceeds {config.phi_limit} at t={t:.4f}")
    return x, lam0


# ---------------------------------------------------------------------------
# measurement

def reconstruct_payload(x, system: CoupledSystem) -> np.ndarray:
    """Payload state rebuilt from the two robot states and the rigid geometry."""
    x = np.asarray(x, dtype=float)
    ra, rl = system.ra, system.rl
    att, att_v = [], []
    for i in range(2):
        o = 12 * i
        rho = rot(x[o + 3:o + 6]) @ ra[i]
        att.append(x[o:o + 3] + rho)
        att_v.append(x[o + 6:o + 9] + np.cross(x[o + 9:o + 12], rho))
    roll = 0.5 * (x[3] + x[15])
    pitch = 0.5 * (x[4] + x[16])
    d = att[1] - att[0]
    dd = att_v[1] - att_v[0]
    q = rot(np.array([roll, pitch, 0.0])) @ (rl[1] - rl[0])
    yaw = math.atan2(d[1], d[0]) - math.atan2(q[1], q[0])
    yaw = math.atan2(math.sin(yaw), math.cos(yaw))
    th = np.array([roll, pitch, yaw])
    R = rot(th)
    p = 0.5 * sum(att[i] - R @ rl[i] for i in range(2))
    # Euler rates: roll/pitch from the robots, yaw from the rotation of d
    rates = [euler_rate(x[12 * i + 3:12 * i + 6]) @ x[12 * i + 9:12 * i + 12] for i in range(2)]
    yaw_rate = (d[0] * dd[1] - d[1] * dd[0]) / (d[0] ** 2 + d[1] ** 2)
    thd = np.array([0.5 * (rates[0][0] + rates[1][0]), 0.5 * (rates[0][1] + rates[1][1]), yaw_rate])
    om = np.linalg.solve(euler_rate(th), thd)
    v = 0.5 * sum(att_v[i] - np.cross(om, R @ rl[i]) for i in range(2))
    return np.concatenate([p, th, v, om])


def measure(x, system: CoupledSystem | None = None, mode: str = "exact", noise_std: float = 0.0,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Measured global state.

    ``mode='exact'`` returns the plant state; ``'reconstruct'`` replaces the
    payload state by its reconstruction from the (optionally noisy) robots.
    """
    y = np.array(x, dtype=float)
    if noise_std > 0.0:
        rng = rng if rng is not None else np.random.default_rng(0)
        for i in range(2):
            y[12 * i:12 * i + 3] += rng.normal(0.0, noise_std, 3)
    if mode == "exact":
        return y
    if mode != "reconstruct":
        raise ValueError(f"unknown measurement mode {mode!r}")
    if system is None:
        raise ValueError("reconstruction needs the attachment geometry")
    y[24:36] = reconstruct_payload(y, system)
    return y


# ---------------------------------------------------------------------------
# closed loop

@dataclass
class RunLog:
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x: np.ndarray = field(default_factory=lambda: np.zeros((0, NX)))
    x_ref: np.ndarray = field(default_factory=lambda: np.zeros((0, NX)))
    grf: np.ndarray = field(default_factory=lambda: np.zeros((0, 24)))
    lam_plant: np.ndarray = field(default_factory=lambda: np.zeros((0, 10)))
    lam_pred: np.ndarray = field(default_factory=lambda: np.zeros((0, 10)))
    phi: np.ndarray = field(default_factory=lambda: np.zeros((0, 10)))
    h: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 0)))
    solve_ms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    status: list = field(default_factory=list)
    slack: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kkt: np.ndarray = field(default_factory=lambda: np.zeros(0))
    disturbance: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=bool))
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)


def run_closed_loop(spec, controller=None, plant: PlantConfig | None = None, on_tick=None) -> RunLog:
    """Lockstep loop: measure, solve, integrate, log.

    ``spec`` is a :class:`~payload_nmpc.scenario.ScenarioSpec`. Controller and
    plant are built from it unless supplied. A :class:`ConstraintBlowup`
    truncates the log and is recorded in ``meta['completion']``.
    """
    from .scenario import build_controller, build_plant, initial_state

    controller = controller if controller is not None else build_controller(spec)
    plant = plant if plant is not None else build_plant(spec)
    Ts = controller.Ts
    n_ticks = int(round(spec.duration_s / Ts))
    rng = np.random.default_rng(spec.seed)
    obstacles = np.array(spec.obstacles, dtype=float).reshape(-1, 2)
    d_th = spec.hocbf.d_th
    rows = {k: [] for k in ("t", "x", "x_ref", "grf", "lam_plant", "lam_pred", "phi", "h", "solve_ms",
                            "iterations", "status", "slack", "kkt", "disturbance")}
    x = initial_state(spec)
    ra, rl = plant.system.ra, plant.system.rl
    completion, message = "completed", ""
    from .hocbf import barrier_values

    for k in range(n_ticks):
        t = k * Ts
        y = measure(x, controller.system, spec.measurement, spec.measurement_noise_m, rng)
        grfs, res = controller.step(y, t)
        stance = np.array([trot_phase_stance(t, plant.gait_period, off) for off in plant.phase_offsets])
        rows["t"].append(t)
        rows["x"].append(x.copy())
        rows["x_ref"].append(controller.last_problem.x_ref[0].copy())
        rows["grf"].append(grfs.ravel().copy())
        rows["lam_pred"].append(res.first_input[24:34].copy())
        rows["phi"].append(phi_kernel(x, ra, rl))
        rows["h"].append(barrier_values(x[None], obstacles, d_th)[0] if len(obstacles) else np.zeros((3, 0)))
        rows["solve_ms"].append(res.solve_time_ms)
        rows["iterations"].append(res.iterations)
        rows["status"].append(res.status)
        rows["slack"].append(res.slack_total)
        rows["kkt"].append(res.kkt.max)
        rows["disturbance"].append(np.any(plant.disturbance_at(t) != 0.0, axis=1))
        try:
            x, lam = plant_step(x, grfs, stance, plant, t)
        except PayloadNmpcError as err:
            rows["lam_plant"].append(np.full(10, np.nan))
            completion, message = ("blowup" if isinstance(err, ConstraintBlowup) else "error"), str(err)
            break
        rows["lam_plant"].append(lam)
        if on_tick is not None:
            on_tick(k, t, x, res)

    log = RunLog(obstacles=obstacles, h=np.zeros((0, 3, len(obstacles))))
    n = len(rows["t"])
    if n:
        log.t = np.array(rows["t"])
        log.x = np.array(rows["x"])
        log.x_ref = np.array(rows["x_ref"])
        log.grf = np.array(rows["grf"])
        log.lam_plant = np.array(rows["lam_plant"])
        log.lam_pred = np.array(rows["lam_pred"])
        log.phi = np.array(rows["phi"])
        log.h = np.array(rows["h"]).reshape(n, 3, len(obstacles))
        log.solve_ms = np.array(rows["solve_ms"])
        log.iterations = np.array(rows["iterations"], dtype=int)
        log.status = rows["status"]
        log.slack = np.array(rows["slack"])
        log.kkt = np.array(rows["kkt"])
        log.disturbance = np.array(rows["disturbance"], dtype=bool)
    log.meta = {"scenario": spec.name, "seed": spec.seed, "horizon": controller.N, "dt_s": Ts,
                "d_th_m": d_th, "safety": controller.safety, "measurement": spec.measurement,
                "duration_s": spec.duration_s, "completion": completion, "message": message,
                "speed_mps": spec.reference.speed_mps, "alpha1": spec.alpha1, "alpha2": spec.alpha2,
                "cbf_margin_m": spec.cbf_margin_m if controller.safety else 0.0,
                "tracking_clearance_m": spec.tracking_clearance_m, "tracking_settle_s": spec.tracking_settle_s}
    return log
