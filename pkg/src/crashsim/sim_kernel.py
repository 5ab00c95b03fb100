"""10 Hz kinematic simulation with rule-based controllers and first-contact collision detection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import OrientedBox, Pose2, obb_overlap, se2_apply_array, se2_inverse, wrap_angle
from .scenario_gen import AgentSpec, IntersectionMap, ScenarioConfig, SpawnPlan

DT = 0.1
HZ = 10
A_MAX = 3.0
B_MAX = 6.0
HEADWAY = 1.5
STANDSTILL_GAP = 2.0
ACCIDENT_ROLES = ("accident-1", "accident-2")


@dataclass(frozen=True)
class AgentState:
    id: int
    cls: str
    role: str
    pose: Pose2
    speed: float
    length: float
    width: float
    s: float

    @property
    def box(self) -> OrientedBox:
        return OrientedBox(self.pose, self.length, self.width)


@dataclass(frozen=True, eq=False)
class Frame:
    k: int
    agents: Tuple[AgentState, ...]

    @property
    def t(self) -> float:
        return self.k / HZ

    def ids(self) -> List[int]:
        return [a.id for a in self.agents]

    def get(self, agent_id: int) -> Optional[AgentState]:
        return self.by_id.get(agent_id)

    @cached_property
    def by_id(self) -> Dict[int, AgentState]:
        return {a.id: a for a in self.agents}

    @cached_property
    def arrays(self) -> Dict[str, np.ndarray]:
        """Columnar view: id, x, y, yaw, length, width, speed."""
        a = self.agents
        return {
            "id": np.array([s.id for s in a], dtype=int),
            "x": np.array([s.pose.x for s in a]),
            "y": np.array([s.pose.y for s in a]),
            "yaw": np.array([s.pose.yaw for s in a]),
            "length": np.array([s.length for s in a]),
            "width": np.array([s.width for s in a]),
            "speed": np.array([s.speed for s in a]),
        }


@dataclass(frozen=True)
class CollisionRecord:
    ids: Tuple[int, int]
    point: Tuple[float, float]
    t: float


@dataclass(frozen=True, eq=False)
class ScenarioLog:
    config: ScenarioConfig
    frames: Tuple[Frame, ...]
    collision: Optional[CollisionRecord]
    termination_reason: str
    meta: dict = field(default_factory=dict)  # map digest, roles, v2x ids, infrastructure rig

    @property
    def duration(self) -> float:
        return self.frames[-1].t

    @property
    def ego_id(self) -> int:
        return int(self.meta.get("v2x", {}).get("ego", 1))

    def frame_at(self, t: float) -> Frame:
        k = int(round(t * HZ))
        if k < 0 or k >= len(self.frames):
            raise IndexError(f"no frame at t={t}")
        return self.frames[k]


# --------------------------------------------------------------------------- controller


@dataclass(frozen=True)
class ControllerParams:
    a_max: float = A_MAX
    b_max: float = B_MAX
    headway: float = HEADWAY
    standstill: float = STANDSTILL_GAP


def _leader_gap(agent: AgentState, others: Sequence[AgentState], same_direction_only: bool, skip=()) -> float:
    """Bumper gap to the nearest agent in the forward corridor (inf if none)."""
    best = math.inf
    inv = se2_inverse(agent.pose)
    reach = max(30.0, agent.speed * 3.0)
    for o in others:
        if o.id == agent.id or o.id in skip:
            continue
        if same_direction_only and abs(wrap_angle(o.pose.yaw - agent.pose.yaw)) > math.pi / 4:
            continue
        lx, ly = se2_apply_array(inv, np.array([o.pose.x, o.pose.y]))
        if lx <= 0 or lx > reach:
            continue
        if abs(ly) > (agent.width + o.width) / 2 + 0.3:
            continue
        gap = lx - (agent.length + o.length) / 2
        best = min(best, gap)
    return best


def controller_update(
    agent: AgentState,
    world: Sequence[AgentState],
    map_: Optional[IntersectionMap],
    spec: AgentSpec,
    t: float = 0.0,
    params: ControllerParams = ControllerParams(),
) -> Tuple[float, float]:
    """Longitudinal acceleration and pure-pursuit path curvature for one vehicle.

    `t` is the signal-program clock (scenario time plus the plan's clock offset).
    """
    traj = spec.trajectory
    v = agent.speed
    v_target = min(traj.speed_at(agent.s), spec.max_speed)
    if v_target <= 1e-6:
        accel = -params.b_max
    else:
        accel = params.a_max * (1.0 - (v / v_target) ** 4)

    is_accident = agent.role in ACCIDENT_ROLES
    partner = {o.id for o in world if o.role in ACCIDENT_ROLES} if is_accident else set()
    gap = _leader_gap(agent, world, same_direction_only=is_accident, skip=partner)

    if map_ is not None and map_.lights is not None and not is_accident and spec.approach is not None:
        d_line = map_.stop_s - agent.s - agent.length / 2
        state = map_.light_state(spec.approach, t)
        if d_line > 0 and state in ("red", "yellow") and v * v / (2 * params.b_max) < d_line:
            gap = min(gap, d_line)

    if gap < params.standstill + v * params.headway:
        accel = -params.b_max

    lookahead = float(np.clip(0.4 * v + 1.5, 2.5, 6.0))
    tx, ty = traj.point_at(agent.s + lookahead)
    lx, ly = se2_apply_array(se2_inverse(agent.pose), np.array([tx, ty]))
    dist2 = lx * lx + ly * ly
    curvature = 2.0 * ly / dist2 if dist2 > 1e-9 else 0.0
    return float(accel), float(curvature)


def step_agent(agent: AgentState, accel: float, curvature: float, spec: AgentSpec) -> AgentState:
    """Euler step of the point-with-heading model."""
    v = min(max(agent.speed + accel * DT, 0.0), spec.max_speed)
    yaw = agent.pose.yaw
    x = agent.pose.x + v * math.cos(yaw) * DT
    y = agent.pose.y + v * math.sin(yaw) * DT
    yaw = yaw + v * curvature * DT
    s = spec.trajectory.project((x, y), s_hint=agent.s)
    return AgentState(agent.id, agent.cls, agent.role, Pose2(x, y, yaw), v, agent.length, agent.width, s)


def step_pedestrian(agent: AgentState, spec: AgentSpec) -> AgentState:
    s = agent.s + agent.speed * DT
    return AgentState(agent.id, agent.cls, agent.role, spec.trajectory.pose_at(s), agent.speed, agent.length, agent.width, s)


def step(
    frame: Frame,
    specs: Dict[int, AgentSpec],
    map_: Optional[IntersectionMap],
    keep: Sequence[int] = (),
    clock_offset: float = 0.0,
) -> Frame:
    """Advance every agent by one 0.1 s tick.

    Agents reaching the end of their path leave the scene, except those in `keep`.
    """
    t = frame.t + clock_offset
    nxt = []
    for a in frame.agents:
        spec = specs[a.id]
        if a.cls == "pedestrian":
            new = step_pedestrian(a, spec)
        else:
            accel, curv = controller_update(a, frame.agents, map_, spec, t)
            new = step_agent(a, accel, curv, spec)
        if new.s >= spec.trajectory.length - 0.05 and a.id not in keep:
            continue
        nxt.append(new)
    return Frame(frame.k + 1, tuple(nxt))


def detect_collision(frame: Frame) -> Optional[Tuple[Tuple[int, int], Tuple[float, float]]]:
    """Lowest-id overlapping pair and the midpoint of their centers.

    Pedestrian-pedestrian contacts are not traffic collisions and are ignored.
    """
    agents = sorted(frame.agents, key=lambda a: a.id)
    boxes = [a.box for a in agents]
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            if agents[i].cls == "pedestrian" and agents[j].cls == "pedestrian":
                continue
            if obb_overlap(boxes[i], boxes[j]):
                a, b = agents[i].pose, agents[j].pose
                return (agents[i].id, agents[j].id), ((a.x + b.x) / 2, (a.y + b.y) / 2)
    return None


def initial_frame(plan: SpawnPlan) -> Frame:
    agents = []
    for spec in sorted(plan.agents, key=lambda a: a.id):
        agents.append(
            AgentState(spec.id, spec.cls, spec.role, spec.pose, spec.speed, spec.length, spec.width, spec.start_s)
        )
    return Frame(0, tuple(agents))


def plan_meta(plan: SpawnPlan, map_: Optional[IntersectionMap]) -> dict:
    """JSON-native scenario metadata (so file roundtrips are exact)."""
    meta = {
        "map_digest": map_.digest() if map_ is not None else None,
        "v2x": dict(plan.v2x),
        "roles": {str(a.id): a.role for a in plan.agents},
        "infra": {"x": plan.infra.pose.x, "y": plan.infra.pose.y, "yaw": plan.infra.pose.yaw, "height": plan.infra.height},
        "conflict": plan.conflict,
        "clock_offset": plan.clock_offset,
    }
    return json.loads(json.dumps(meta))


def run_scenario(plan: SpawnPlan, config: Optional[ScenarioConfig] = None, map_: Optional[IntersectionMap] = None) -> ScenarioLog:
    """Simulate until first collision, ego path completion, or the 10 s cap."""
    config = config or plan.config
    if map_ is None:
        map_ = config.build_map()
    specs = {a.id: a for a in plan.agents}
    ego = plan.ego_id
    ego_len = specs[ego].trajectory.length
    max_k = int(round(config.duration_cap * HZ))

    frames = [initial_frame(plan)]
    collision = None
    reason = "timeout"
    while True:
        frame = frames[-1]
        hit = detect_collision(frame)
        if hit is not None:
            collision = CollisionRecord(hit[0], hit[1], frame.t)
            reason = "collision"
            break
        ego_state = frame.get(ego)
        if ego_state is not None and ego_state.s >= ego_len - 0.05:
            reason = "trajectory-complete"
            break
        if frame.k >= max_k:
            reason = "timeout"
            break
        frames.append(step(frame, specs, map_, keep=(ego,), clock_offset=plan.clock_offset))
    return ScenarioLog(config, tuple(frames), collision, reason, plan_meta(plan, map_))
