"""Run-log persistence (columnar CSV plus an ``.npz`` mirror) and plot-data export."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .hocbf import BODY_LABELS
from .plant import RunLog

STATE_NAMES = ("px", "py", "pz", "roll", "pitch", "yaw", "vx", "vy", "vz", "wx", "wy", "wz")
LAMBDA_NAMES = ("fx", "fy", "fz", "tau_r", "tau_p")
ARRAY_FIELDS = ("t", "x", "x_ref", "grf", "lam_plant", "lam_pred", "phi", "h", "solve_ms", "iterations",
                "slack", "kkt", "disturbance", "obstacles")
PLOT_FILES = ("velocity.csv", "wrenches.csv", "barriers.csv", "xy.csv")


class LogFormatError(ValueError):
    pass


def state_columns(prefix: str = "") -> list:
    return [f"{prefix}{b}_{s}" for b in BODY_LABELS for s in STATE_NAMES]


def grf_columns() -> list:
    return [f"grf{r}_{foot}_{a}" for r in (1, 2) for foot in ("FL", "FR", "RL", "RR") for a in "xyz"]


def lambda_columns(prefix: str) -> list:
    return [f"{prefix}{e}L_{c}" for e in (1, 2) for c in LAMBDA_NAMES]


def barrier_columns(n_obs: int) -> list:
    return [f"h_{b}_{l + 1}" for b in BODY_LABELS for l in range(n_obs)]


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list, rows, comments=()):
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def save_log(log: RunLog, out_dir) -> dict:
    """Write ``log.csv``, ``log.npz`` and ``meta.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(log)
    no = log.obstacles.shape[0]
    header = (["t"] + state_columns() + state_columns("ref_") + grf_columns() + lambda_columns("plant_")
              + lambda_columns("pred_") + [f"phi_{i}" for i in range(10)] + barrier_columns(no)
              + ["solve_ms", "iterations", "status", "slack", "kkt"] + [f"dist_{b}" for b in BODY_LABELS])
    rows = []
    for k in range(n):
        rows.append([_fmt(log.t[k])] + [_fmt(v) for v in log.x[k]] + [_fmt(v) for v in log.x_ref[k]]
                    + [_fmt(v) for v in log.grf[k]] + [_fmt(v) for v in log.lam_plant[k]]
                    + [_fmt(v) for v in log.lam_pred[k]] + [_fmt(v) for v in log.phi[k]]
                    + [_fmt(v) for v in log.h[k].ravel()]
                    + [_fmt(log.solve_ms[k]), str(int(log.iterations[k])), log.status[k], _fmt(log.slack[k]),
                       _fmt(log.kkt[k])] + [str(int(b)) for b in log.disturbance[k]])
    _write_csv(out / "log.csv", header, rows)
    arrays = {f: np.asarray(getattr(log, f)) for f in ARRAY_FIELDS}
    arrays["status"] = np.array(log.status, dtype=str)
    np.savez_compressed(out / "log.npz", **arrays, meta=np.array(json.dumps(log.meta, sort_keys=True)))
    (out / "meta.json").write_text(json.dumps(log.meta, indent=2, sort_keys=True) + "\n")
    return {"csv": out / "log.csv", "npz": out / "log.npz", "meta": out / "meta.json"}


def load_log(path) -> RunLog:
    """Read a log written by :func:`save_log` (the ``.npz`` file or its directory)."""
    p = Path(path)
    if p.is_dir():
        p = p / "log.npz"
    if not p.exists():
        raise LogFormatError(f"no log found at {path}")
    try:
        with np.load(p, allow_pickle=False) as z:
            missing = [f for f in ARRAY_FIELDS + ("status", "meta") if f not in z.files]
            if missing:
                raise LogFormatError(f"{p}: missing field(s) {', '.join(missing)}")
            log = RunLog(**{f: z[f] for f in ARRAY_FIELDS})
            log.iterations = log.iterations.astype(int)
            log.disturbance = log.disturbance.astype(bool)
            log.status = [str(s) for s in z["status"]]
            log.meta = json.loads(str(z["meta"]))
    except (OSError, ValueError) as err:
        if isinstance(err, LogFormatError):
            raise
        raise LogFormatError(f"{p}: {err}") from err
    n = len(log.t)
    if log.x.shape != (n, 36) or log.h.shape[:2] != (n, 3) or len(log.status) != n:
        raise LogFormatError(f"{p}: inconsistent array shapes")
    return log


def export_plots(log: RunLog | str | Path, out_dir) -> list:
    """Emit the four figure-analogue tables; returns the written paths."""
    if not isinstance(log, RunLog):
        log = load_log(log)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(log)
    no = log.obstacles.shape[0]
    paths = [out / f for f in PLOT_FILES]

    vel_header = ["t"]
    for b in BODY_LABELS:
        vel_header += [f"{b}_vx", f"{b}_vy", f"{b}_vx_ref", f"{b}_vy_ref"]
    vel_header += ["L_yaw", "L_yaw_ref"]
    vel_rows = []
    for k in range(n):
        row = [_fmt(log.t[k])]
        for b in range(3):
            o = 12 * b
            row += [_fmt(log.x[k, o + 6]), _fmt(log.x[k, o + 7]), _fmt(log.x_ref[k, o + 6]), _fmt(log.x_ref[k, o + 7])]
        row += [_fmt(log.x[k, 29]), _fmt(log.x_ref[k, 29])]
        vel_rows.append(row)
    _write_csv(paths[0], vel_header, vel_rows)

    w_header = ["t"] + grf_columns() + lambda_columns("plant_") + lambda_columns("pred_")
    w_rows = [[_fmt(log.t[k])] + [_fmt(v) for v in np.concatenate([log.grf[k], log.lam_plant[k], log.lam_pred[k]])]
              for k in range(n)]
    _write_csv(paths[1], w_header, w_rows)

    h_rows = [[_fmt(log.t[k])] + [_fmt(v) for v in log.h[k].ravel()] for k in range(n)]
    _write_csv(paths[2], ["t"] + barrier_columns(no), h_rows)

    d_th = log.meta.get("d_th_m", float("nan"))
    notes = [f"obstacle {l + 1}: x={_fmt(o[0])} y={_fmt(o[1])} d_th={_fmt(d_th)}" for l, o in enumerate(log.obstacles)]
    xy_header = ["t"] + [f"{b}_{a}" for b in BODY_LABELS for a in ("x", "y")]
    xy_rows = [[_fmt(log.t[k])] + [_fmt(log.x[k, 12 * b + a]) for b in range(3) for a in (0, 1)] for k in range(n)]
    _write_csv(paths[3], xy_header, xy_rows, comments=notes)
    return paths
