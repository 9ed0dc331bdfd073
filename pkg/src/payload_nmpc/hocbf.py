"""Discrete-time barrier functions for body-obstacle clearance.

For a body CoM projected onto the plane and a point obstacle,
``h = ||g(x) - o|| - d_th``. With linear class-K gains the relative-degree-2
sequence is

    psi0 = h_k
    psi1 = h_{k+1} - h_k + a1 h_k
    psi2 = psi1_{k+1} - psi1_k + a2 psi1_k

and the controller imposes ``psi2 >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDistance

BODY_LABELS = ("1", "2", "L")
DIST_EPS = 1e-6


@dataclass(frozen=True)
class Obstacle:
    position: np.ndarray
    id: int = 0

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(2)
        if not np.all(np.isfinite(p)):
            raise ValueError("obstacle position must be finite")
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class HocbfParams:
    d_th: float = 0.5
    alpha1_gain: float = 0.4
    alpha2_gain: float = 0.04

    def __post_init__(self):
        if not self.d_th > 0:
            raise ValueError(f"d_th must be positive, got {self.d_th}")
        for name in ("alpha1_gain", "alpha2_gain"):
            a = getattr(self, name)
            # linear class-K with alpha(s) < s
            if not 0.0 < a < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {a}")


def _xy(x, body: int) -> np.ndarray:
    x = np.asarray(x.as_array() if hasattr(x, "as_array") else x, dtype=float)
    if x.size == 12:
        return x[0:2]
    return x[12 * body:12 * body + 2]


def _obs_xy(obs) -> np.ndarray:
    return obs.position if isinstance(obs, Obstacle) else np.asarray(obs, dtype=float).reshape(2)


def barrier(x, obs, params: HocbfParams, body: int = 0) -> float:
    """Clearance margin of ``body`` (global state) or of a single 12-state."""
    d = np.linalg.norm(_xy(x, body) - _obs_xy(obs))
    if d <= DIST_EPS:
        raise DegenerateDistance(f"body {BODY_LABELS[body]} within {DIST_EPS} m of obstacle centre")
    return float(d - params.d_th)


def psi1(x_now, x_next, body: int, obs, params: HocbfParams) -> float:
    h0 = barrier(x_now, obs, params, body)
    h1 = barrier(x_next, obs, params, body)
    return h1 - h0 + params.alpha1_gain * h0


def psi2(x_now, x_next, x_next2, body: int, obs, params: HocbfParams) -> float:
    p_now = psi1(x_now, x_next, body, obs, params)
    p_next = psi1(x_next, x_next2, body, obs, params)
    return p_next - p_now + params.alpha2_gain * p_now


def psi2_closed_form(h0: float, h1: float, h2: float, params: HocbfParams) -> float:
    a1, a2 = params.alpha1_gain, params.alpha2_gain
    return h2 - (2.0 - a1 - a2) * h1 + (1.0 - a1) * (1.0 - a2) * h0


def barrier_values(traj: np.ndarray, obstacles: np.ndarray, d_th: float) -> np.ndarray:
    """h for every sample, body and obstacle: shape (T, 3, n_obs)."""
    traj = np.atleast_2d(traj)
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    xy = traj[:, [0, 1, 12, 13, 24, 25]].reshape(-1, 3, 1, 2)
    dist = np.linalg.norm(xy - obstacles[None, None], axis=-1)
    return dist - d_th


def barrier_values_and_grad(traj: np.ndarray, obstacles: np.ndarray, d_th: float):
    """h (T, 3, n_obs) and dh/d(xy) (T, 3, n_obs, 2)."""
    traj = np.atleast_2d(traj)
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    xy = traj[:, [0, 1, 12, 13, 24, 25]].reshape(-1, 3, 1, 2)
    diff = xy - obstacles[None, None]
    dist = np.linalg.norm(diff, axis=-1)
    if dist.size and dist.min() <= DIST_EPS:
        raise DegenerateDistance("a body centre coincides with an obstacle centre")
    return dist - d_th, diff / dist[..., None]


# ---------------------------------------------------------------------------
# closed-loop monitor

@dataclass
class Violation:
    body: str
    obstacle: int
    t_start: float
    t_end: float
    min_value: float
    recovered: bool

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def is_transient(self, window: float) -> bool:
        return self.recovered and self.duration < window


@dataclass
class InvarianceReport:
    min_psi0: dict = field(default_factory=dict)
    min_psi1: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    psi1_violations: list = field(default_factory=list)
    transient_window: float = 0.5
    tol_model: float = 0.0

    @property
    def n_transient(self) -> int:
        return sum(v.is_transient(self.transient_window) for v in self.violations)

    @property
    def n_persistent(self) -> int:
        return len(self.violations) - self.n_transient

    def classification(self) -> str:
        if not self.violations:
            return "none"
        return "persistent" if self.n_persistent else "transient"


def _intervals(t: np.ndarray, values: np.ndarray, tol: float):
    """(start, end, min, recovered) runs where values < -tol; end is first recovered sample."""
    bad = values < -tol
    runs = []
    k = 0
    n = len(values)
    while k < n:
        if bad[k]:
            j = k
            while j < n and bad[j]:
                j += 1
            recovered = j < n
            t_end = t[j] if recovered else t[-1]
            runs.append((float(t[k]), float(t_end), float(values[k:j].min()), recovered))
            k = j
        else:
            k += 1
    return runs


def invariance_monitor(times, states, obstacles, params: HocbfParams, transient_window: float = 0.5,
                       tol: float = 0.0) -> InvarianceReport:
    """Scan a closed-loop state log for barrier violations.

    Violations of h (psi0) are classified as transient when they last less
    than ``transient_window`` seconds and recover before the log ends.
    psi1 is evaluated on consecutive samples and reported separately.
    """
    t = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    obs = np.array([_obs_xy(o) for o in obstacles]).reshape(-1, 2)
    report = InvarianceReport(transient_window=transient_window)
    if len(t) == 0 or len(obs) == 0:
        return report
    h = barrier_values(states, obs, params.d_th)
    worst = 0.0
    for b, label in enumerate(BODY_LABELS):
        for l in range(len(obs)):
            series = h[:, b, l]
            key = f"{label},{l + 1}"
            report.min_psi0[key] = float(series.min())
            worst = min(worst, float(series.min()))
            for t0, t1, vmin, rec in _intervals(t, series, tol):
                report.violations.append(Violation(label, l + 1, t0, t1, vmin, rec))
            if len(series) > 1:
                p1 = series[1:] - series[:-1] + params.alpha1_gain * series[:-1]
                report.min_psi1[key] = float(p1.min())
                worst = min(worst, float(p1.min()))
                for t0, t1, vmin, rec in _intervals(t[:-1], p1, tol):
                    report.psi1_violations.append(Violation(label, l + 1, t0, t1, vmin, rec))
    report.tol_model = -worst
    return report
