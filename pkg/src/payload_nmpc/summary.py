"""Run summaries computed from a :class:`~payload_nmpc.plant.RunLog`.

Everything in :class:`RunSummary` is a deterministic function of the log.
Wall-clock solve times are not, so they live in a separate timing record.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .hocbf import BODY_LABELS, HocbfParams, invariance_monitor

LAMBDA_RMS_LIMIT = 0.15


@dataclass
class RunSummary:
    scenario: str
    seed: int
    horizon: int
    dt_s: float
    d_th_m: float
    safety: bool
    measurement: str
    completion: str
    message: str
    n_ticks: int
    duration_s: float
    min_h: dict = field(default_factory=dict)
    min_h_overall: float | None = None
    min_psi1_overall: float | None = None
    violation_class: str = "none"
    n_violations: int = 0
    n_transient: int = 0
    n_persistent: int = 0
    violations: list = field(default_factory=list)
    tracking_samples: int = 0
    velocity_rmse_mps: dict = field(default_factory=dict)
    yaw_rmse_rad: dict = field(default_factory=dict)
    total_slack: float = 0.0
    phi_max: float = 0.0
    lambda_rel_rms: float | None = None
    iterations_mean: float | None = None
    iterations_max: int = 0
    status_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def header(self) -> str:
        return (f"{self.scenario}: horizon={self.horizon} dt={self.dt_s:.5f}s seed={self.seed} "
                f"safety={'on' if self.safety else 'off'} measurement={self.measurement}")

    def text(self) -> str:
        lines = [self.header(), f"completion: {self.completion} after {self.n_ticks} ticks ({self.duration_s:.2f} s)"]
        if self.message:
            lines.append(f"message: {self.message}")
        if self.min_h:
            lines.append(f"min h overall: {self.min_h_overall:.4f} m, violations: {self.violation_class} "
                         f"({self.n_transient} transient, {self.n_persistent} persistent)")
            worst = sorted(self.min_h.items(), key=lambda kv: kv[1])[:5]
            lines.append("closest pairs: " + ", ".join(f"h[{k}]={v:.4f}" for k, v in worst))
        if self.velocity_rmse_mps:
            lines.append("velocity rmse (free segments): "
                         + ", ".join(f"{k}={v:.4f}" for k, v in self.velocity_rmse_mps.items()))
        lines.append(f"total slack: {self.total_slack:.3g}, max |phi|: {self.phi_max:.3g}")
        if self.lambda_rel_rms is not None:
            lines.append(f"lambda plant vs predicted rel. rms: {self.lambda_rel_rms:.3g}")
        return "\n".join(lines) + "\n"


def _finite(v):
    # json has no NaN/inf; map them to null so the file stays portable
    if isinstance(v, dict):
        return {k: _finite(a) for k, a in v.items()}
    if isinstance(v, list):
        return [_finite(a) for a in v]
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def tracking_mask(log) -> np.ndarray:
    """Ticks in obstacle-free segments: past the settle time and every h above the clearance."""
    n = len(log)
    if n == 0:
        return np.zeros(0, dtype=bool)
    settle = float(log.meta.get("tracking_settle_s", 2.0))
    clearance = float(log.meta.get("tracking_clearance_m", 1.0))
    mask = log.t >= settle
    if log.h.size:
        mask &= log.h.reshape(n, -1).min(axis=1) >= clearance
    return mask


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def tracking_errors(log, mask=None):
    """Per-body planar velocity RMSE and yaw RMSE over the masked ticks."""
    mask = tracking_mask(log) if mask is None else mask
    vel, yaw = {}, {}
    if not mask.any():
        return vel, yaw
    for b, label in enumerate(BODY_LABELS):
        o = 12 * b
        dv = log.x[mask, o + 6:o + 8] - log.x_ref[mask, o + 6:o + 8]
        vel[label] = float(np.sqrt(np.mean(np.sum(dv ** 2, axis=1))))
        dy = _wrap(log.x[mask, o + 5] - log.x_ref[mask, o + 5])
        yaw[label] = float(np.sqrt(np.mean(dy ** 2)))
    return vel, yaw


def lambda_discrepancy(log) -> float | None:
    """RMS of plant minus predicted first-step wrench, relative to the plant RMS."""
    if len(log) == 0:
        return None
    ok = np.all(np.isfinite(log.lam_plant), axis=1) & np.all(np.isfinite(log.lam_pred), axis=1)
    if not ok.any():
        return None
    ref = np.sqrt(np.mean(log.lam_plant[ok] ** 2))
    if ref == 0.0:
        return None
    return float(np.sqrt(np.mean((log.lam_plant[ok] - log.lam_pred[ok]) ** 2)) / ref)


def summarize(log) -> RunSummary:
    meta = log.meta
    n = len(log)
    s = RunSummary(
        scenario=str(meta.get("scenario", "")), seed=int(meta.get("seed", 0)), horizon=int(meta.get("horizon", 0)),
        dt_s=float(meta.get("dt_s", 0.0)), d_th_m=float(meta.get("d_th_m", 0.0)),
        safety=bool(meta.get("safety", True)), measurement=str(meta.get("measurement", "exact")),
        completion=str(meta.get("completion", "completed")), message=str(meta.get("message", "")),
        n_ticks=n, duration_s=float(n * meta.get("dt_s", 0.0)),
    )
    if n == 0:
        return s
    no = log.h.shape[2] if log.h.ndim == 3 else 0
    if no:
        params = HocbfParams(s.d_th_m, float(meta.get("alpha1", 0.4)), float(meta.get("alpha2", 0.04)))
        rep = invariance_monitor(log.t, log.x, log.obstacles, params)
        s.min_h = rep.min_psi0
        s.min_h_overall = float(min(rep.min_psi0.values()))
        s.min_psi1_overall = float(min(rep.min_psi1.values())) if rep.min_psi1 else None
        s.violation_class = rep.classification()
        s.n_violations = len(rep.violations)
        s.n_transient = rep.n_transient
        s.n_persistent = rep.n_persistent
        s.violations = [dict(asdict(v), duration=v.duration) for v in rep.violations]
    mask = tracking_mask(log)
    s.tracking_samples = int(mask.sum())
    s.velocity_rmse_mps, s.yaw_rmse_rad = tracking_errors(log, mask)
    s.total_slack = float(np.sum(log.slack))
    s.phi_max = float(np.abs(log.phi).max()) if log.phi.size else 0.0
    s.lambda_rel_rms = lambda_discrepancy(log)
    s.iterations_mean = float(np.mean(log.iterations))
    s.iterations_max = int(np.max(log.iterations))
    s.status_counts = {k: int(log.status.count(k)) for k in sorted(set(log.status))}
    return s


def timing_stats(log) -> dict:
    """Solve-time statistics in milliseconds (wall clock, not reproducible)."""
    ms = np.asarray(log.solve_ms, dtype=float)
    if ms.size == 0:
        return {"n": 0, "mean_ms": None, "std_ms": None, "median_ms": None, "p95_ms": None, "max_ms": None}
    return {"n": int(ms.size), "mean_ms": float(ms.mean()), "std_ms": float(ms.std()),
            "median_ms": float(np.median(ms)), "p95_ms": float(np.percentile(ms, 95)), "max_ms": float(ms.max())}
