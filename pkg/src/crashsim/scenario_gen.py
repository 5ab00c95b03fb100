"""Procedural intersection maps, planned trajectories and accident scenario spawning.

Twelve accident families are generated (six conflict geometries, each at a
signalized and an unsignalized junction) plus normal scenarios. The two
accident vehicles are placed so that they reach the crossing point of their
planned paths at the same time; a follower trails each of them on the same
path and an infrastructure rig is mounted on a junction corner.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import OrientedBox, Polygon, Pose2, obb_overlap, se2_apply_array

log = logging.getLogger(__name__)

LANE_WIDTH = 3.5
JUNCTION_HALF = 7.0  # half size of the junction box; turn radii 5.25 m / 8.75 m
ARM_LENGTH = 100.0
STOP_LINE = 11.0  # distance of the stop line from the junction center
CROSSWALK = 9.0
SIDEWALK_EDGE = 8.5  # buildings start beyond this offset from each road axis
WAYPOINT_SPACING = 0.5
DURATION_CAP = 10.0

NORMAL = 0

# type -> (topology, signalized, (approach, maneuver) of accident-1, (approach, maneuver) of accident-2, name)
SCENARIO_TYPES: Dict[int, Tuple[str, bool, Tuple[str, str], Tuple[str, str], str]] = {}
_FAMILIES = [
    ("four-way", ("S", "straight"), ("W", "straight"), "straight through red light"),
    ("four-way", ("S", "left"), ("W", "straight"), "left turn through red light"),
    ("four-way", ("S", "left"), ("N", "straight"), "unprotected left turn"),
    ("four-way", ("S", "right"), ("N", "left"), "right turn against left turn"),
    ("three-way", ("W", "right"), ("E", "left"), "right turn against left turn"),
    ("three-way", ("W", "straight"), ("S", "right"), "straight against right turn"),
]
for _k, (_topo, _a, _b, _name) in enumerate(_FAMILIES):
    SCENARIO_TYPES[_k + 1] = (_topo, True, _a, _b, "signalized " + _name)
    SCENARIO_TYPES[_k + 7] = (_topo, False, _a, _b, "unsignalized " + _name)
RED_LIGHT_TYPES = (1, 2)

MANEUVERS = {
    "four-way": {a: ("straight", "left", "right") for a in ("S", "E", "N", "W")},
    "three-way": {"S": ("left", "right"), "E": ("straight", "left"), "W": ("straight", "right")},
}
_APPROACH_ROT = {"S": 0.0, "E": math.pi / 2, "N": math.pi, "W": 3 * math.pi / 2}
_AXIS = {"S": "NS", "N": "NS", "E": "EW", "W": "EW"}

# class -> (length, width)
CLASS_DIMS = {
    "car": (4.6, 1.9),
    "van": (5.2, 2.1),
    "truck": (8.0, 2.5),
    "motorcycle": (2.2, 0.8),
    "cyclist": (1.8, 0.8),
    "pedestrian": (0.8, 0.8),
}
CLASSES = tuple(CLASS_DIMS)
VEHICLE_CLASSES = ("car", "van", "truck", "motorcycle", "cyclist")
ROLES = ("accident-1", "accident-2", "follower-1", "follower-2", "background", "pedestrian")

WEATHER_TAGS = ("clear", "cloudy", "rain", "fog", "wet")
TIMEOFDAY_TAGS = ("noon", "sunset", "night")


class ScenarioError(ValueError):
    pass


class SpawnError(ScenarioError):
    pass


# --------------------------------------------------------------------------- trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    points: np.ndarray  # (N, 2)
    s: np.ndarray  # (N,)
    speeds: np.ndarray  # (N,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if len(pts) < 2 or len(s) != len(pts) or np.any(np.diff(s) <= 0):
            raise ScenarioError("trajectory needs >= 2 points with increasing arclength")
        sp = np.broadcast_to(np.asarray(self.speeds, dtype=float), s.shape).copy()
        for a in (pts, s, sp):
            a.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "speeds", sp)

    @classmethod
    def from_polyline(cls, pts: np.ndarray, speed: float = 10.0, spacing: float = WAYPOINT_SPACING):
        pts = np.asarray(pts, dtype=float)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        keep = np.concatenate([[True], seg > 1e-9])
        pts = pts[keep]
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        n = max(int(math.ceil(s[-1] / spacing)), 1)
        s_new = np.linspace(0.0, s[-1], n + 1)
        xy = np.stack([np.interp(s_new, s, pts[:, 0]), np.interp(s_new, s, pts[:, 1])], axis=1)
        s_true = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
        return cls(xy, s_true, np.full(len(s_true), float(speed)))

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def point_at(self, s: float) -> Tuple[float, float]:
        s = min(max(s, 0.0), self.length)
        return (float(np.interp(s, self.s, self.points[:, 0])), float(np.interp(s, self.s, self.points[:, 1])))

    def heading_at(self, s: float) -> float:
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.s) - 2))
        d = self.points[i + 1] - self.points[i]
        return math.atan2(d[1], d[0])

    def pose_at(self, s: float) -> Pose2:
        x, y = self.point_at(s)
        return Pose2(x, y, self.heading_at(s))

    def speed_at(self, s: float) -> float:
        return float(np.interp(s, self.s, self.speeds))

    def project(self, xy: Sequence[float], s_hint: Optional[float] = None, window: float = 15.0) -> float:
        """Arclength of the closest point on the path (searched near `s_hint` if given)."""
        lo, hi = 0, len(self.s) - 1
        if s_hint is not None:
            lo = max(int(np.searchsorted(self.s, s_hint - window)) - 1, 0)
            hi = min(int(np.searchsorted(self.s, s_hint + window)) + 1, len(self.s) - 1)
        a = self.points[lo:hi]
        b = self.points[lo + 1 : hi + 1]
        ab = b - a
        p = np.asarray(xy, dtype=float)
        t = np.clip(((p - a) * ab).sum(1) / np.maximum((ab * ab).sum(1), 1e-12), 0.0, 1.0)
        d = np.linalg.norm(a + t[:, None] * ab - p, axis=1)
        k = int(np.argmin(d))
        return float(self.s[lo + k] + t[k] * (self.s[lo + k + 1] - self.s[lo + k]))

    def with_speed(self, speeds) -> "Trajectory":
        return Trajectory(self.points, self.s, np.broadcast_to(speeds, self.s.shape))

    def tail_from(self, s0: float) -> "Trajectory":
        """Sub-path starting at arclength s0 (re-based to 0)."""
        x0 = self.point_at(s0)
        k = int(np.searchsorted(self.s, s0, side="right"))
        pts = np.vstack([x0, self.points[k:]])
        sp = np.concatenate([[self.speed_at(s0)], self.speeds[k:]])
        s = np.concatenate([[0.0], self.s[k:] - s0])
        keep = np.concatenate([[True], np.diff(s) > 1e-9])
        return Trajectory(pts[keep], s[keep], sp[keep])


def _arc(center, radius, th0, th1, step=WAYPOINT_SPACING):
    n = max(int(math.ceil(abs(th1 - th0) * radius / step)), 2)
    th = np.linspace(th0, th1, n + 1)
    return np.stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=1)


def _canonical_route(maneuver: str) -> np.ndarray:
    """Route entering from the south arm heading north (+y), right-hand traffic."""
    h, lane, J, L = LANE_WIDTH / 2.0, LANE_WIDTH / 2.0, JUNCTION_HALF, ARM_LENGTH
    entry = np.array([[h, -L], [h, -J]])
    if maneuver == "straight":
        return np.vstack([entry, [[h, L]]])
    if maneuver == "left":
        arc = _arc((-J, -J), J + lane, 0.0, math.pi / 2)
        return np.vstack([entry[:1], arc, [[-L, lane]]])
    if maneuver == "right":
        # center (J, -J); start angle pi (point (J - r, -J)), sweep clockwise to pi/2
        arc = _arc((J, -J), J - lane, math.pi, math.pi / 2)
        return np.vstack([entry[:1], arc, [[L, -lane]]])
    raise ScenarioError(f"unknown maneuver {maneuver!r}")


# --------------------------------------------------------------------------- maps


@dataclass(frozen=True)
class LightProgram:
    """Fixed-time program per axis: green / yellow / red seconds; EW lags NS by green+yellow."""

    offset: float
    green: float = 10.0
    yellow: float = 3.0
    red: float = 10.0

    @property
    def cycle(self) -> float:
        return self.green + self.yellow + self.red

    def state(self, approach: str, t: float) -> str:
        shift = 0.0 if _AXIS[approach] == "NS" else self.green + self.yellow
        phase = (t + self.offset - shift) % self.cycle
        if phase < self.green:
            return "green"
        if phase < self.green + self.yellow:
            return "yellow"
        return "red"


@dataclass(frozen=True, eq=False)
class IntersectionMap:
    topology: str
    signalized: bool
    seed: int
    routes: Dict[Tuple[str, str], Trajectory]
    buildings: Tuple[Polygon, ...]
    lights: Optional[LightProgram]
    crosswalks: Tuple[np.ndarray, ...]  # pedestrian polylines

    @property
    def stop_s(self) -> float:
        """Arclength of the stop line along every route (all routes share the entry arm)."""
        return ARM_LENGTH - STOP_LINE

    @property
    def conflict_s(self) -> float:
        return ARM_LENGTH - JUNCTION_HALF

    def light_state(self, approach: str, t: float) -> Optional[str]:
        return None if self.lights is None else self.lights.state(approach, t)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.topology, self.signalized, self.seed]).encode())
        for key in sorted(self.routes):
            h.update(repr(key).encode())
            h.update(np.ascontiguousarray(self.routes[key].points).tobytes())
        for b in self.buildings:
            h.update(np.ascontiguousarray(b.vertices).tobytes())
        h.update(repr(self.lights).encode())
        return h.hexdigest()[:16]


def _rot(th: float) -> Pose2:
    return Pose2(0.0, 0.0, th)


def build_map(topology: str, signalized: bool, seed: int) -> IntersectionMap:
    if topology not in MANEUVERS:
        raise ScenarioError(f"unknown topology {topology!r}")
    rng = np.random.default_rng([int(seed), 101])
    routes = {}
    for approach, mans in MANEUVERS[topology].items():
        for m in mans:
            pts = se2_apply_array(_rot(_APPROACH_ROT[approach]), _canonical_route(m))
            routes[(approach, m)] = Trajectory.from_polyline(pts)

    buildings = []
    n_build = int(rng.integers(0, 5))
    quadrants = rng.permutation(4)[:n_build]
    for q in sorted(int(v) for v in quadrants):
        sx, sy = (1, 1, -1, -1)[q], (1, -1, -1, 1)[q]
        gap_x, gap_y = rng.uniform(0.0, 3.0, size=2)
        w, d = rng.uniform(15.0, 35.0, size=2)
        x0, y0 = SIDEWALK_EDGE + gap_x, SIDEWALK_EDGE + gap_y
        rect = np.array([[x0, y0], [x0 + w, y0], [x0 + w, y0 + d], [x0, y0 + d]])
        buildings.append(Polygon(rect * np.array([sx, sy])))

    lights = LightProgram(offset=float(rng.uniform(0.0, 23.0))) if signalized else None

    crosswalks = []
    h = LANE_WIDTH + 2.5
    walk = np.array([[-h, -CROSSWALK - 20.0], [-h, -CROSSWALK], [h, -CROSSWALK], [h, -CROSSWALK - 20.0]])
    for approach in MANEUVERS[topology]:
        crosswalks.append(se2_apply_array(_rot(_APPROACH_ROT[approach]), walk))
    return IntersectionMap(topology, bool(signalized), int(seed), routes, tuple(buildings), lights, tuple(crosswalks))


def plan_trajectory(map_: IntersectionMap, approach: str, maneuver: str, speed: float = 10.0) -> Trajectory:
    if (approach, maneuver) not in map_.routes:
        raise ScenarioError(f"maneuver {maneuver!r} from {approach!r} invalid on {map_.topology}")
    return map_.routes[(approach, maneuver)].with_speed(speed)


def trajectory_intersection(a: Trajectory, b: Trajectory, tol: float = 0.5):
    """First crossing of path `a` with path `b` as (point, s_a, s_b), or None.

    A proper segment crossing is preferred; paths that only merge tangentially
    report the first point of `a` within `tol` of `b`.
    """
    a0, a1 = a.points[:-1], a.points[1:]
    b0, b1 = b.points[:-1], b.points[1:]
    da = a1 - a0
    db = b1 - b0
    denom = da[:, None, 0] * db[None, :, 1] - da[:, None, 1] * db[None, :, 0]
    w = b0[None, :, :] - a0[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[..., 0] * db[None, :, 1] - w[..., 1] * db[None, :, 0]) / denom
        u = (w[..., 0] * da[:, None, 1] - w[..., 1] * da[:, None, 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    cross = None
    if hit.any():
        i, j = np.argwhere(hit)[0]
        # earliest along a; among same segment the smallest t
        rows = np.argwhere(hit[i])[:, 0]
        j = int(rows[np.argmin(t[i, rows])])
        ti, uj = float(t[i, j]), float(u[i, j])
        pt = a0[i] + ti * da[i]
        cross = (
            (float(pt[0]), float(pt[1])),
            float(a.s[i] + ti * (a.s[i + 1] - a.s[i])),
            float(b.s[j] + uj * (b.s[j + 1] - b.s[j])),
        )
    # proximity scan for tangential merges (no proper crossing before it)
    ab = b1 - b0
    p = a.points
    tt = np.clip(
        ((p[:, None, :] - b0[None]) * ab[None]).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-12)[None], 0, 1
    )
    d = np.linalg.norm(b0[None] + tt[..., None] * ab[None] - p[:, None, :], axis=-1)
    dmin = d.min(axis=1)
    near = np.nonzero(dmin <= tol)[0]
    if len(near):
        k = int(near[0])
        # a near point just ahead of a proper crossing is the crossing's own approach
        if cross is None or a.s[k] < cross[1] - 4 * tol:
            j = int(np.argmin(d[k]))
            s_b = float(b.s[j] + tt[k, j] * (b.s[j + 1] - b.s[j]))
            return ((float(p[k, 0]), float(p[k, 1])), float(a.s[k]), s_b)
    return cross


def sync_arrival(
    s_a: float,
    s_b: float,
    v_a: float,
    v_b: float,
    max_shift_a: float = math.inf,
    max_shift_b: float = math.inf,
) -> Tuple[float, float]:
    """Backward start shifts making both vehicles reach the conflict point together.

    The later arriver keeps its start; the earlier one is moved back along its path.
    """
    if v_a <= 0 or v_b <= 0:
        raise ScenarioError("speeds must be positive")
    t_a, t_b = s_a / v_a, s_b / v_b
    shift_a = shift_b = 0.0
    if t_a < t_b:
        shift_a = v_a * t_b - s_a
    elif t_b < t_a:
        shift_b = v_b * t_a - s_b
    if shift_a > max_shift_a + 1e-9 or shift_b > max_shift_b + 1e-9:
        raise SpawnError("required start shift places a vehicle off the map")
    return shift_a, shift_b


# --------------------------------------------------------------------------- configs and spawn plans


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_type: int
    seed: int
    n_background_vehicles: int = 4
    n_pedestrians: int = 2
    max_speeds: Tuple[float, float] = (10.0, 10.0)
    weather_tag: str = "clear"
    timeofday_tag: str = "noon"
    duration_cap: float = DURATION_CAP
    topology: Optional[str] = None  # normal scenarios only; accident types fix their own
    signalized: Optional[bool] = None

    def __post_init__(self):
        if self.scenario_type != NORMAL and self.scenario_type not in SCENARIO_TYPES:
            raise ScenarioError(f"unknown scenario type {self.scenario_type}")
        if len(self.max_speeds) != 2 or min(self.max_speeds) <= 0:
            raise ScenarioError("max_speeds must be two positive speeds")
        if self.duration_cap != DURATION_CAP:
            raise ScenarioError("duration_cap is fixed at 10 s")
        object.__setattr__(self, "max_speeds", tuple(float(v) for v in self.max_speeds))

    @property
    def is_accident(self) -> bool:
        return self.scenario_type != NORMAL

    def map_layout(self) -> Tuple[str, bool]:
        if self.is_accident:
            topo, sig = SCENARIO_TYPES[self.scenario_type][:2]
            return topo, sig
        rng = np.random.default_rng([self.seed, 7])
        topo = self.topology or ("four-way" if rng.random() < 0.5 else "three-way")
        sig = self.signalized if self.signalized is not None else bool(rng.random() < 0.5)
        return topo, sig

    def build_map(self) -> IntersectionMap:
        topo, sig = self.map_layout()
        return build_map(topo, sig, self.seed)

    @classmethod
    def sample(cls, scenario_type: int, seed: int) -> "ScenarioConfig":
        """Randomised config: traffic density, accident speeds and metadata tags from `seed`."""
        rng = np.random.default_rng([int(seed), 3])
        return cls(
            scenario_type=int(scenario_type),
            seed=int(seed),
            n_background_vehicles=int(rng.integers(0, 7)),
            n_pedestrians=int(rng.integers(0, 4)),
            max_speeds=tuple(float(round(v, 3)) for v in rng.uniform(6.0, 12.0, size=2)),
            weather_tag=str(rng.choice(WEATHER_TAGS)),
            timeofday_tag=str(rng.choice(TIMEOFDAY_TAGS)),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["max_speeds"] = list(self.max_speeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["max_speeds"] = tuple(d["max_speeds"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class AgentSpec:
    id: int
    cls: str
    length: float
    width: float
    role: str
    trajectory: Trajectory
    start_s: float
    speed: float
    max_speed: float
    approach: Optional[str] = None

    @property
    def pose(self) -> Pose2:
        return self.trajectory.pose_at(self.start_s)

    def box(self) -> OrientedBox:
        return OrientedBox(self.pose, self.length, self.width)


@dataclass(frozen=True)
class InfraSpec:
    pose: Pose2
    height: float


@dataclass(frozen=True, eq=False)
class SpawnPlan:
    config: ScenarioConfig
    agents: Tuple[AgentSpec, ...]
    infra: InfraSpec
    v2x: Dict[str, int]  # ego / behind / other / other-follower -> agent id
    conflict: Optional[dict] = None  # point, s_a, s_b, arrival times
    clock_offset: float = 0.0  # signal-program time at scenario t = 0

    @property
    def ego_id(self) -> int:
        return self.v2x["ego"]

    def agent(self, agent_id: int) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def by_role(self, role: str) -> List[AgentSpec]:
        return [a for a in self.agents if a.role == role]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        for a in self.agents:
            h.update(repr((a.id, a.cls, a.role, a.start_s, a.speed, a.max_speed, a.approach)).encode())
            h.update(np.ascontiguousarray(a.trajectory.points).tobytes())
            h.update(np.ascontiguousarray(a.trajectory.speeds).tobytes())
        h.update(repr((self.infra, self.clock_offset)).encode())
        return h.hexdigest()


def _overlaps(box: OrientedBox, others: Sequence[OrientedBox], margin: float) -> bool:
    big = OrientedBox(box.center, box.length + 2 * margin, box.width + 2 * margin)
    return any(obb_overlap(big, o) for o in others)


def _route_for(map_: IntersectionMap, approach: str, maneuver: str, rotation: int) -> Tuple[str, str]:
    if map_.topology == "four-way":
        order = ["S", "E", "N", "W"]
        approach = order[(order.index(approach) + rotation) % 4]
    return approach, maneuver


def _turn_limited(traj: Trajectory, vmax: float, lat_acc: float = 3.0) -> Trajectory:
    """Speed profile capped by curvature (used for background traffic)."""
    p = traj.points
    h = np.unwrap(np.arctan2(np.diff(p[:, 1]), np.diff(p[:, 0])))
    ds = np.diff(traj.s)
    k = np.abs(np.diff(h)) / np.maximum(ds[1:], 1e-9)
    k = np.concatenate([[0.0], k, [0.0]])
    # spread the cap over a few meters ahead of the curve
    k = np.maximum.reduce([np.roll(k, -i) for i in range(12)])
    cap = np.sqrt(lat_acc / np.maximum(k, 1e-6))
    return traj.with_speed(np.minimum(vmax, cap))


def spawn_scenario(config: ScenarioConfig, map_: IntersectionMap, max_attempts: int = 100) -> SpawnPlan:
    rng = np.random.default_rng([config.seed, 11])
    topo, sig = config.map_layout()
    if (map_.topology, map_.signalized) != (topo, sig):
        raise ScenarioError("map does not match the scenario type")

    for attempt in range(max_attempts):
        try:
            return _spawn_once(config, map_, rng)
        except SpawnError as exc:
            log.debug("spawn attempt %d failed: %s", attempt, exc)
    raise SpawnError(f"no feasible spawn after {max_attempts} attempts (seed {config.seed})")


def _v2x_class(rng) -> str:
    return str(rng.choice(["car", "car", "car", "van", "truck"]))


def _spawn_once(config: ScenarioConfig, map_: IntersectionMap, rng) -> SpawnPlan:
    agents: List[AgentSpec] = []
    boxes: List[OrientedBox] = []
    conflict = None
    clock = float(np.round(rng.uniform(0.0, map_.lights.cycle), 1)) if map_.lights is not None else 0.0
    approaches = list(MANEUVERS[map_.topology])

    if config.is_accident:
        _, _, (ap_a, m_a), (ap_b, m_b), _ = SCENARIO_TYPES[config.scenario_type]
        rotation = int(rng.integers(0, 4)) if map_.topology == "four-way" else 0
        ap_a, m_a = _route_for(map_, ap_a, m_a, rotation)
        ap_b, m_b = _route_for(map_, ap_b, m_b, rotation)
        v_a, v_b = config.max_speeds
        route_a = plan_trajectory(map_, ap_a, m_a, v_a)
        route_b = plan_trajectory(map_, ap_b, m_b, v_b)
        hit = trajectory_intersection(route_a, route_b)
        if hit is None:
            raise ScenarioError("accident routes never meet")
        point, c_a, c_b = hit
        cls_a, cls_b = _v2x_class(rng), _v2x_class(rng)
        cls_fa, cls_fb = _v2x_class(rng), _v2x_class(rng)
        # follower offset: clear the two bodies by >= 1.5 m, stay in [8, 15]
        lo_a = max(8.0, (CLASS_DIMS[cls_a][0] + CLASS_DIMS[cls_fa][0]) / 2 + 1.5)
        lo_b = max(8.0, (CLASS_DIMS[cls_b][0] + CLASS_DIMS[cls_fb][0]) / 2 + 1.5)
        gap_a, gap_b = rng.uniform(lo_a, 15.0), rng.uniform(lo_b, 15.0)
        d_a, d_b = rng.uniform(25.0, 60.0, size=2)
        shift_a, shift_b = sync_arrival(d_a, d_b, v_a, v_b, c_a - d_a - gap_a, c_b - d_b - gap_b)
        d_a, d_b = d_a + shift_a, d_b + shift_b
        t_arr = d_a / v_a
        if not 4.0 <= t_arr <= 8.0:
            raise SpawnError(f"arrival time {t_arr:.2f}s outside [4, 8]")
        if map_.lights is not None:
            # start the scenario at a point of the signal cycle matching the family:
            # red for accident-1 in red-light families, not red otherwise
            want_red = config.scenario_type in RED_LIGHT_TYPES
            grid = np.round(np.arange(0.0, map_.lights.cycle, 0.1), 1)
            ok = [c for c in grid if (map_.light_state(ap_a, t_arr + c) == "red") == want_red]
            clock = float(rng.choice(ok))
        start_a, start_b = c_a - d_a, c_b - d_b
        specs = [
            (1, cls_a, "accident-1", route_a, start_a, v_a, ap_a),
            (2, cls_b, "accident-2", route_b, start_b, v_b, ap_b),
            (3, cls_fa, "follower-1", route_a, start_a - gap_a, v_a, ap_a),
            (4, cls_fb, "follower-2", route_b, start_b - gap_b, v_b, ap_b),
        ]
        conflict = {
            "point": [point[0], point[1]],
            "s_a": c_a,
            "s_b": c_b,
            "start_a": start_a,
            "start_b": start_b,
            "arrival_a": (c_a - start_a) / v_a,
            "arrival_b": (c_b - start_b) / v_b,
        }
    else:
        ap_a, ap_b = [str(x) for x in rng.choice(approaches, size=2, replace=False)]
        m_a = str(rng.choice(MANEUVERS[map_.topology][ap_a]))
        m_b = str(rng.choice(MANEUVERS[map_.topology][ap_b]))
        v_a, v_b = config.max_speeds
        route_a = plan_trajectory(map_, ap_a, m_a, v_a)
        route_b = plan_trajectory(map_, ap_b, m_b, v_b)
        cls_a, cls_b, cls_fa, cls_fb = (_v2x_class(rng) for _ in range(4))
        start_a, start_b = rng.uniform(30.0, 70.0, size=2)
        gap_a = rng.uniform(max(8.0, (CLASS_DIMS[cls_a][0] + CLASS_DIMS[cls_fa][0]) / 2 + 1.5), 15.0)
        gap_b = rng.uniform(max(8.0, (CLASS_DIMS[cls_b][0] + CLASS_DIMS[cls_fb][0]) / 2 + 1.5), 15.0)
        specs = [
            (1, cls_a, "background", route_a, start_a, v_a, ap_a),
            (2, cls_b, "background", route_b, start_b, v_b, ap_b),
            (3, cls_fa, "background", route_a, start_a - gap_a, v_a, ap_a),
            (4, cls_fb, "background", route_b, start_b - gap_b, v_b, ap_b),
        ]

    for aid, cls, role, route, s0, v, ap in specs:
        if s0 < 0:
            raise SpawnError("vehicle would start off the map")
        L, W = CLASS_DIMS[cls]
        spec = AgentSpec(aid, cls, L, W, role, route, float(s0), float(v), float(v), ap)
        box = spec.box()
        if _overlaps(box, boxes, 0.3):
            raise SpawnError("overlapping V2X vehicles")
        agents.append(spec)
        boxes.append(box)

    # lanes ahead of the two designated vehicles are kept clear of background traffic
    guarded = [(a.approach, a.start_s) for a in agents[:2]]
    next_id = 5
    for _ in range(config.n_background_vehicles):
        for _try in range(100):
            ap = str(rng.choice(approaches))
            man = str(rng.choice(MANEUVERS[map_.topology][ap]))
            cls = str(rng.choice(VEHICLE_CLASSES, p=[0.5, 0.15, 0.1, 0.15, 0.1]))
            vmax = rng.uniform(3.0, 6.0) if cls == "cyclist" else rng.uniform(5.0, 11.0)
            s0 = rng.uniform(0.0, map_.stop_s - 5.0)
            if any(ap == g_ap and s0 > g_s for g_ap, g_s in guarded):
                continue
            traj = _turn_limited(plan_trajectory(map_, ap, man, vmax), vmax)
            L, W = CLASS_DIMS[cls]
            spec = AgentSpec(next_id, cls, L, W, "background", traj, float(s0), float(traj.speed_at(s0)), float(vmax), ap)
            box = spec.box()
            if _overlaps(box, boxes, 1.5):
                continue
            agents.append(spec)
            boxes.append(box)
            next_id += 1
            break
        else:
            raise SpawnError("could not place background vehicle")

    # one pedestrian per crosswalk: walkers sharing a centerline would pass through each other
    free_walks = list(range(len(map_.crosswalks)))
    for _ in range(config.n_pedestrians):
        for _try in range(100):
            if not free_walks:
                raise SpawnError("more pedestrians than crosswalks")
            w = free_walks[int(rng.integers(0, len(free_walks)))]
            walk = map_.crosswalks[w]
            if rng.random() < 0.5:
                walk = walk[::-1]
            v = rng.uniform(1.2, 1.8)
            traj = Trajectory.from_polyline(walk, speed=v)
            s0 = rng.uniform(0.0, traj.length * 0.6)
            L, W = CLASS_DIMS["pedestrian"]
            spec = AgentSpec(next_id, "pedestrian", L, W, "pedestrian", traj, float(s0), float(v), float(v))
            box = spec.box()
            if _overlaps(box, boxes, 1.0):
                continue
            agents.append(spec)
            boxes.append(box)
            free_walks.remove(w)
            next_id += 1
            break
        else:
            raise SpawnError("could not place pedestrian")

    corner = int(rng.integers(0, 4))
    c = SIDEWALK_EDGE - 1.0
    ix, iy = (c, c, -c, -c)[corner], (c, -c, -c, c)[corner]
    if map_.topology == "three-way" and iy > 0:
        iy = -iy  # mount on the stem side, facing the through road
    infra = InfraSpec(Pose2(ix, iy, math.atan2(-iy, -ix)), float(rng.uniform(3.0, 5.0)))
    v2x = {"ego": 1, "behind": 3, "other": 2, "other-follower": 4}
    return SpawnPlan(config, tuple(agents), infra, v2x, conflict, clock)


# --------------------------------------------------------------------------- dataset splits


def _apportion(n: int, ratios: Sequence[float]) -> List[int]:
    """Training split by floor, remaining splits by largest remainder (ties -> earlier split)."""
    train = int(math.floor(n * ratios[0] + 1e-9))
    rest = n - train
    tail = list(ratios[1:])
    total = sum(tail)
    quotas = [rest * r / total if total > 0 else 0.0 for r in tail]
    base = [int(math.floor(q + 1e-9)) for q in quotas]
    left = rest - sum(base)
    order = sorted(range(len(tail)), key=lambda k: (-(quotas[k] - base[k]), k))
    for k in order[:left]:
        base[k] += 1
    return [train] + base


def split_dataset(
    ids: Sequence,
    types: Optional[Sequence[int]] = None,
    ratios: Sequence[float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> Tuple[list, list, list]:
    """Disjoint stratified partition of `ids` into (train, val, test)."""
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ScenarioError("ratios must be three numbers summing to 1")
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ScenarioError("scenario ids must be unique")
    types = list(types) if types is not None else [0] * len(ids)
    rng = np.random.default_rng([int(seed), 17])
    target = _apportion(len(ids), ratios)

    groups: Dict[int, list] = {}
    for i, t in zip(ids, types):
        groups.setdefault(t, []).append(i)
    strat, pooled = {}, []
    for t in sorted(groups):
        members = [groups[t][k] for k in rng.permutation(len(groups[t]))]
        if len(members) < 3:
            warnings.warn(f"scenario type {t} has {len(members)} scenarios; left unstratified", stacklevel=2)
            pooled.extend(members)
        else:
            strat[t] = members

    alloc = {}
    for t, members in strat.items():
        a = _apportion(len(members), ratios)
        for k in range(3):
            while a[k] == 0:
                donor = int(np.argmax(a))
                a[donor] -= 1
                a[k] += 1
        alloc[t] = a

    # reconcile per-type allocations with the global target
    free = len(pooled)
    have = [sum(a[k] for a in alloc.values()) for k in range(3)]
    need = [target[k] - have[k] for k in range(3)]
    while any(n < 0 for n in need):
        k_over = int(np.argmin(need))
        k_under = int(np.argmax(need))
        if need[k_under] <= 0:
            break
        # move from the type whose allocation strays most from its own proportions
        t = max(
            (t for t in alloc if alloc[t][k_over] > 1),
            key=lambda t: (
                alloc[t][k_over] - ratios[k_over] * len(strat[t]) - alloc[t][k_under] + ratios[k_under] * len(strat[t]),
                -t,
            ),
        )
        alloc[t][k_over] -= 1
        alloc[t][k_under] += 1
        need[k_over] += 1
        need[k_under] -= 1
    assert sum(need) == free

    splits: Tuple[list, list, list] = ([], [], [])
    for t in sorted(alloc):
        members = strat[t]
        a = alloc[t]
        splits[0].extend(members[: a[0]])
        splits[1].extend(members[a[0] : a[0] + a[1]])
        splits[2].extend(members[a[0] + a[1] :])
    pos = 0
    for k in range(3):
        splits[k].extend(pooled[pos : pos + need[k]])
        pos += need[k]
    return splits
