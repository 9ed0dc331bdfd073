"""Scenario files: parsing, validation, serialisation and reference generation.

Scenario files are YAML with explicit units in the field names. Parsing is
strict: unknown keys and invalid values raise :class:`ScenarioError` with
the offending line number when it can be located.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .coupling import AttachmentGeometry, CoupledSystem, nominal_formation
from .errors import ScenarioError
from .hocbf import HocbfParams, Obstacle
from .nmpc.controller import NmpcController
from .nmpc.ocp import FRICTION_MU, FZ_MAX, W_SLACK, OcpWeights
from .plant import Disturbance, PlantConfig
from .srb import DEFAULT_FEET_BODY, SrbParams

BODY_INDEX = {"robot1": 0, "robot2": 1, "payload": 2}


def _tup(v, n=None, name="value"):
    try:
        t = tuple(float(a) for a in v)
    except TypeError as err:
        raise ScenarioError(f"{name}: expected a list of numbers") from err
    if n is not None and len(t) != n:
        raise ScenarioError(f"{name}: expected {n} numbers, got {len(t)}")
    return t


@dataclass(frozen=True)
class BodySpec:
    mass_kg: float
    inertia_diag_kgm2: tuple

    def params(self, name: str) -> SrbParams:
        try:
            return SrbParams(float(self.mass_kg), np.diag(self.inertia_diag_kgm2), name)
        except ValueError as err:
            raise ScenarioError(str(err)) from err


def box_inertia(mass: float, dims) -> tuple:
    a, b, c = dims
    return (mass / 12 * (b * b + c * c), mass / 12 * (a * a + c * c), mass / 12 * (a * a + b * b))


@dataclass(frozen=True)
class ReferenceSpec:
    start_xy_m: tuple = (0.0, 0.0)
    heading_rad: float = 0.0
    speed_mps: float = 0.3
    payload_height_m: float = 0.33
    waypoints_m: tuple = ()


@dataclass(frozen=True)
class DisturbanceSpec:
    start_s: float
    duration_s: float
    body: str
    force_n: tuple


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    duration_s: float
    obstacles: tuple = ()
    d_th_m: float = 0.5
    alpha1: float = 0.4
    alpha2: float = 0.04
    cbf_margin_m: float = 0.02
    robot: BodySpec = BodySpec(15.0, (0.1, 0.25, 0.3))
    payload_nominal: BodySpec = BodySpec(5.0, box_inertia(5.0, (1.0, 0.3, 0.15)))
    payload_true: BodySpec | None = None
    robot_offsets_m: tuple = ((0.25, 0.0, 0.05), (-0.25, 0.0, 0.05))
    payload_offsets_m: tuple = ((-0.45, 0.0, 0.0), (0.45, 0.0, 0.0))
    feet_body_m: tuple = tuple(tuple(r) for r in DEFAULT_FEET_BODY.tolist())
    gait_period_s: float = 0.4
    gait_phase_offsets_s: tuple = (0.0, 0.0)
    weights: OcpWeights = OcpWeights()
    reference: ReferenceSpec = ReferenceSpec()
    disturbances: tuple = ()
    horizon: int = 8
    dt_s: float = 1.0 / 60.0
    plant_substeps: int = 16
    max_iter: int = 10
    friction_mu: float = FRICTION_MU
    fz_max_n: float = FZ_MAX
    w_slack: float = W_SLACK
    safety: bool = True
    measurement: str = "exact"
    measurement_noise_m: float = 0.0
    seed: int = 0
    tracking_clearance_m: float = 1.0
    tracking_settle_s: float = 2.0
    description: str = ""

    def __post_init__(self):
        if not self.d_th_m > 0:
            raise ScenarioError(f"d_th_m must be positive, got {self.d_th_m}")
        if not self.cbf_margin_m >= 0:
            raise ScenarioError(f"cbf_margin_m must be non-negative, got {self.cbf_margin_m}")
        if not self.reference.speed_mps >= 0:
            raise ScenarioError(f"speed_mps must be non-negative, got {self.reference.speed_mps}")
        if not self.duration_s >= 0:
            raise ScenarioError("duration_s must be non-negative")
        if self.horizon < 2:
            raise ScenarioError("horizon must be at least 2")
        if not self.dt_s > 0:
            raise ScenarioError("dt_s must be positive")
        if self.measurement not in ("exact", "reconstruct"):
            raise ScenarioError(f"measurement must be 'exact' or 'reconstruct', got {self.measurement!r}")
        for d in self.disturbances:
            if d.body not in BODY_INDEX:
                raise ScenarioError(f"unknown disturbance body {d.body!r}")
        for b, nm in ((self.robot, "robot"), (self.payload_nominal, "payload_nominal"),
                      (self.payload_true_or_nominal, "payload_true")):
            b.params(nm)
        try:
            HocbfParams(self.d_th_m, self.alpha1, self.alpha2)
        except ValueError as err:
            raise ScenarioError(str(err)) from err

    @property
    def payload_true_or_nominal(self) -> BodySpec:
        return self.payload_true if self.payload_true is not None else self.payload_nominal

    @property
    def hocbf(self) -> HocbfParams:
        return HocbfParams(self.d_th_m, self.alpha1, self.alpha2)

    @property
    def controller_hocbf(self) -> HocbfParams:
        # the controller plans against d_th plus a small margin that absorbs model mismatch
        return HocbfParams(self.d_th_m + self.cbf_margin_m, self.alpha1, self.alpha2)

    @property
    def obstacle_list(self) -> list:
        return [Obstacle(np.array(p), i + 1) for i, p in enumerate(self.obstacles)]

    @property
    def geometry(self) -> AttachmentGeometry:
        return AttachmentGeometry(np.array(self.robot_offsets_m), np.array(self.payload_offsets_m))

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, OcpWeights):
                v = v.to_dict()
            elif isinstance(v, (BodySpec, ReferenceSpec)):
                v = _plain(asdict(v))
            elif f.name == "disturbances":
                v = [_plain(asdict(x)) for x in v]
            else:
                v = _plain(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ScenarioError(f"unknown field(s): {', '.join(sorted(unknown))}", key=sorted(unknown)[0])
        if "name" not in d or "duration_s" not in d:
            raise ScenarioError("scenario needs 'name' and 'duration_s'")
        kw = {}
        for k, v in d.items():
            try:
                kw[k] = _convert(k, v)
            except ScenarioError as err:
                err.key = err.key or k
                raise
            except (TypeError, ValueError) as err:
                raise ScenarioError(f"{k}: {err}", key=k) from err
        try:
            return cls(**kw)
        except ScenarioError as err:
            raise
        except (TypeError, ValueError) as err:
            raise ScenarioError(str(err)) from err

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def with_overrides(self, **kw) -> "ScenarioSpec":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _plain(v):
    if isinstance(v, (tuple, list)):
        return [_plain(a) for a in v]
    if isinstance(v, dict):
        return {k: _plain(a) for k, a in v.items()}
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _body(v, name) -> BodySpec:
    if not isinstance(v, dict):
        raise ScenarioError(f"{name}: expected a mapping")
    extra = set(v) - {"mass_kg", "inertia_diag_kgm2"}
    if extra:
        raise ScenarioError(f"{name}: unknown field(s) {sorted(extra)}")
    return BodySpec(float(v["mass_kg"]), _tup(v["inertia_diag_kgm2"], 3, name))


def _convert(k, v):
    if k in ("robot", "payload_nominal"):
        return _body(v, k)
    if k == "payload_true":
        return None if v is None else _body(v, k)
    if k == "obstacles":
        return tuple(_tup(p, 2, "obstacle") for p in v)
    if k in ("robot_offsets_m", "payload_offsets_m"):
        return tuple(_tup(p, 3, k) for p in v)
    if k == "feet_body_m":
        return tuple(_tup(p, 3, k) for p in v)
    if k == "gait_phase_offsets_s":
        return _tup(v, 2, k)
    if k == "weights":
        return OcpWeights.from_dict(v)
    if k == "reference":
        extra = set(v) - {f.name for f in fields(ReferenceSpec)}
        if extra:
            raise ScenarioError(f"reference: unknown field(s) {sorted(extra)}")
        r = dict(v)
        if "start_xy_m" in r:
            r["start_xy_m"] = _tup(r["start_xy_m"], 2, "start_xy_m")
        if "waypoints_m" in r:
            r["waypoints_m"] = tuple(_tup(p, 2, "waypoint") for p in r["waypoints_m"])
        for f in ("heading_rad", "speed_mps", "payload_height_m"):
            if f in r:
                r[f] = float(r[f])
        return ReferenceSpec(**r)
    if k == "disturbances":
        out = []
        for item in v:
            out.append(DisturbanceSpec(float(item["start_s"]), float(item["duration_s"]), str(item["body"]),
                                       _tup(item["force_n"], 3, "force_n")))
        return tuple(out)
    if k in ("horizon", "plant_substeps", "max_iter", "seed"):
        if isinstance(v, bool) or int(v) != v:
            raise ScenarioError(f"{k}: expected an integer")
        return int(v)
    if k in ("safety",):
        if not isinstance(v, bool):
            raise ScenarioError(f"{k}: expected true/false")
        return v
    if k in ("name", "measurement", "description"):
        return str(v)
    return float(v)


def _key_lines(text: str) -> dict:
    """First line of every mapping key in the document, nested keys included."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return {}
    out = {}
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, yaml.MappingNode):
            for kn, vn in n.value:
                out.setdefault(str(kn.value), kn.start_mark.line + 1)
                stack.append(vn)
        elif isinstance(n, yaml.SequenceNode):
            stack.extend(n.value)
    return out


def _locate(text: str, key: str | None, message: str):
    lines = _key_lines(text)
    if key and key in lines:
        return key, lines[key]
    # fall back to the longest key named in the message
    hits = [k for k in lines if k in message]
    if not hits:
        return key, None
    k = max(hits, key=len)
    return k, lines[k]


def parse_scenario(text: str, source: str = "<string>") -> ScenarioSpec:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ScenarioError(f"{source}{line}: {err}") from err
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: scenario must be a mapping")
    try:
        return ScenarioSpec.from_dict(data)
    except ScenarioError as err:
        key, line = _locate(text, err.key, str(err))
        loc = f"{source}:{line}" if line else source
        raise ScenarioError(f"{loc}: {err}", key=key, line=line) from err


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ScenarioError(f"cannot read {path}: {err}") from err
    return parse_scenario(text, str(path))


def save_scenario(spec: ScenarioSpec, path) -> None:
    Path(path).write_text(spec.to_yaml())


def bundled_scenarios() -> list:
    root = resources.files("payload_nmpc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_scenario_path(name: str) -> Path:
    p = Path(str(resources.files("payload_nmpc") / "scenarios" / f"{name}.yaml"))
    if not p.exists():
        raise ScenarioError(f"no bundled scenario {name!r}; available: {', '.join(bundled_scenarios())}")
    return p


def resolve_scenario(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    return bundled_scenario_path(str(name_or_path))


# ---------------------------------------------------------------------------
# builders

def build_system(spec: ScenarioSpec, true: bool = False) -> CoupledSystem:
    robot = spec.robot.params("robot")
    payload = (spec.payload_true_or_nominal if true else spec.payload_nominal).params("payload")
    return CoupledSystem((robot, robot), payload, spec.geometry, np.array(spec.feet_body_m))


def _path_point(ref: ReferenceSpec, s: float):
    """Position and unit direction at arc length ``s`` along the reference path."""
    start = np.array(ref.start_xy_m)
    if not ref.waypoints_m:
        d = np.array([math.cos(ref.heading_rad), math.sin(ref.heading_rad)])
        return start + s * d, d
    pts = [start] + [np.array(p) for p in ref.waypoints_m]
    for a, b in zip(pts[:-1], pts[1:]):
        seg = b - a
        L = float(np.linalg.norm(seg))
        if L == 0.0:
            continue
        if s <= L:
            return a + s * seg / L, seg / L
        s -= L
    return pts[-1], np.zeros(2)


def generate_references(spec: ScenarioSpec, t0: float, N: int, Ts: float) -> np.ndarray:
    """Reference window (N+1, 36): robot 1, robot 2, payload."""
    ref = spec.reference
    geom = spec.geometry
    yaw = ref.heading_rad
    out = np.zeros((N + 1, 36))
    for k in range(N + 1):
        t = t0 + k * Ts
        pxy, d = _path_point(ref, ref.speed_mps * t)
        pL = np.array([pxy[0], pxy[1], ref.payload_height_m])
        vel = np.array([d[0], d[1], 0.0]) * ref.speed_mps
        robots = nominal_formation(geom, pL, yaw)
        for b, p in enumerate((*robots, pL)):
            o = 12 * b
            out[k, o:o + 3] = p
            out[k, o + 5] = yaw
            out[k, o + 6:o + 9] = vel
    return out


def initial_state(spec: ScenarioSpec) -> np.ndarray:
    """Assembly at rest in its nominal formation at the reference start."""
    x = generate_references(spec, 0.0, 0, spec.dt_s)[0]
    for b in range(3):
        x[12 * b + 6:12 * b + 9] = 0.0
    return x


def build_controller(spec: ScenarioSpec, safety: bool | None = None) -> NmpcController:
    safe = spec.safety if safety is None else safety
    sysm = build_system(spec, true=False)

    def reference(t, N, Ts):
        return generate_references(spec, t, N, Ts)

    return NmpcController(sysm, spec.weights, reference, spec.obstacle_list, spec.controller_hocbf, N=spec.horizon,
                          Ts=spec.dt_s, gait_period=spec.gait_period_s, phase_offsets=spec.gait_phase_offsets_s,
                          safety=safe, max_iter=spec.max_iter, mu=spec.friction_mu, fz_max=spec.fz_max_n,
                          w_slack=spec.w_slack)


def build_plant(spec: ScenarioSpec) -> PlantConfig:
    dist = tuple(Disturbance(d.start_s, d.duration_s, BODY_INDEX[d.body], d.force_n) for d in spec.disturbances)
    return PlantConfig(build_system(spec, true=True), Ts=spec.dt_s, substeps=spec.plant_substeps,
                       disturbances=dist, gait_period=spec.gait_period_s, phase_offsets=spec.gait_phase_offsets_s)
