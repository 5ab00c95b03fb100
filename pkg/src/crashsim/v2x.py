"""Cooperative-perception apparatus: rigs, occlusion, pose noise, latency, warping and fusion.

The fused oracle predictor stands in for a learned model: each rig contributes
the true future of the agents it saw, expressed in the ego frame through its
(possibly degraded) pose and stale (possibly delayed) observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .bev_motion import (
    DEFAULT_PARAMS,
    STEP,
    DecodeParams,
    InstanceMap,
    MotionField,
    ObservationWindow,
    encode_boxes,
    frame_index,
    log_frame,
)
from .geometry import MOTION_GRID, GridSpec, OrientedBox, Polygon, Pose2, relative_pose, segments_hit_convex, wrap_angle
from .sim_kernel import HZ, Frame, ScenarioLog

VIEW_RANGE = 70.0
INFRA_ID = 0  # rig id of the roadside unit; never a log agent id
RIG_ROLES = ("ego", "behind", "other-vehicle", "other-follower", "infrastructure")
CONFIGS: Dict[str, Tuple[str, ...]] = {
    "single": ("ego",),
    "ego+behind": ("ego", "behind"),
    "ego+other": ("ego", "other-vehicle"),
    "ego+infra": ("ego", "infrastructure"),
    "ego+behind+other": ("ego", "behind", "other-vehicle"),
    "4vehicles": ("ego", "behind", "other-vehicle", "other-follower"),
    "4vehicles+infra": ("ego", "behind", "other-vehicle", "other-follower", "infrastructure"),
}
_V2X_KEY = {"ego": "ego", "behind": "behind", "other-vehicle": "other", "other-follower": "other-follower"}
DEFAULT_NOISE_STD = 0.02


@dataclass(frozen=True)
class AgentRig:
    agent_id: int
    role: str
    view_range: float = VIEW_RANGE
    noise_mean: float = 0.0
    noise_std: float = 0.0
    latency: float = 0.0
    static_pose: Optional[Pose2] = None  # infrastructure only
    height: Optional[float] = None

    def __post_init__(self):
        if self.role not in RIG_ROLES:
            raise ValueError(f"unknown rig role {self.role!r}")
        if self.noise_mean < 0 or self.noise_std < 0 or self.latency < 0:
            raise ValueError("degradation parameters must be >= 0")
        if self.role == "infrastructure" and self.static_pose is None:
            raise ValueError("infrastructure rig needs a static pose")

    @property
    def is_ego(self) -> bool:
        return self.role == "ego"

    @property
    def is_infra(self) -> bool:
        return self.role == "infrastructure"

    def pose_at(self, frame: Frame) -> Optional[Pose2]:
        if self.static_pose is not None:
            return self.static_pose
        a = frame.get(self.agent_id)
        return None if a is None else a.pose


def config_rigs(
    log: ScenarioLog,
    config: str,
    noise_mean: float = 0.0,
    noise_std: Optional[float] = None,
    latency: float = 0.0,
    view_range: float = VIEW_RANGE,
) -> List[AgentRig]:
    """Rigs of a named configuration; degradation applies to every rig except the ego.

    `noise_std` defaults to 0.02 m whenever the noise mean is positive.
    """
    if config not in CONFIGS:
        raise ValueError(f"unknown configuration {config!r}; choose from {sorted(CONFIGS)}")
    if noise_std is None:
        noise_std = DEFAULT_NOISE_STD if noise_mean > 0 else 0.0
    v2x = log.meta.get("v2x", {"ego": 1, "behind": 3, "other": 2, "other-follower": 4})
    rigs = []
    for role in CONFIGS[config]:
        ego = role == "ego"
        deg = dict(noise_mean=0.0, noise_std=0.0, latency=0.0) if ego else dict(
            noise_mean=noise_mean, noise_std=noise_std, latency=latency
        )
        if role == "infrastructure":
            inf = log.meta["infra"]
            rigs.append(
                AgentRig(INFRA_ID, role, view_range, static_pose=Pose2(inf["x"], inf["y"], inf["yaw"]), height=inf["height"], **deg)
            )
        else:
            rigs.append(AgentRig(int(v2x[_V2X_KEY[role]]), role, view_range, **deg))
    return rigs


# --------------------------------------------------------------------------- visibility


@dataclass(frozen=True)
class VisibilityMask:
    rig_id: int
    visible: Mapping[int, FrozenSet[int]]  # frame index -> agent ids

    def at(self, k: int) -> FrozenSet[int]:
        return self.visible.get(k, frozenset())

    def union(self, frames: Iterable[int]) -> FrozenSet[int]:
        out: set = set()
        for k in frames:
            out |= self.at(k)
        return frozenset(out)


def visible_in_frame(frame: Frame, rig: AgentRig, buildings: Sequence[Polygon]) -> FrozenSet[int]:
    """Agents whose centers the rig can see: in range, with no building or other vehicle on the sight line."""
    pose = rig.pose_at(frame)
    if pose is None:
        return frozenset()
    arr = frame.arrays
    if len(arr["id"]) == 0:
        return frozenset()
    ids = arr["id"]
    pts = np.stack([arr["x"], arr["y"]], axis=1)
    p = np.array([pose.x, pose.y])
    ok = np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1]) <= rig.view_range
    ok &= ids != rig.agent_id if not rig.is_infra else True
    for b in buildings:
        if not ok.any():
            break
        ok &= ~segments_hit_convex(p, pts, b.vertices)
    if not rig.is_infra:
        for a in frame.agents:
            if not ok.any():
                break
            if a.cls == "pedestrian" or a.id == rig.agent_id:
                continue
            blocked = segments_hit_convex(p, pts, a.box.corners())
            blocked &= ids != a.id
            ok &= ~blocked
    seen = set(int(i) for i in ids[ok])
    if not rig.is_infra and frame.get(rig.agent_id) is not None:
        seen.add(rig.agent_id)
    return frozenset(seen)


def compute_visibility(
    log: ScenarioLog, rig: AgentRig, buildings: Sequence[Polygon], frames: Optional[Iterable[int]] = None
) -> VisibilityMask:
    ks = range(len(log.frames)) if frames is None else sorted(set(int(k) for k in frames))
    return VisibilityMask(rig.agent_id, {k: visible_in_frame(log.frames[k], rig, buildings) for k in ks})


def observation_frames(t0: float, latency_offset: int = 0) -> List[int]:
    """10 Hz indices of the three 2 Hz observation frames ending at t0, shifted back by latency."""
    k0 = frame_index(t0)
    return [max(0, k0 - latency_offset - m * int(round(STEP * HZ))) for m in range(3)]


def classify_sample_visibility(mask: VisibilityMask, frames: Sequence[int], accident_ids: Iterable[int]) -> str:
    acc = set(accident_ids)
    if not acc:
        return "visible"
    occluded = sum(1 for k in frames if not acc <= mask.at(k))
    return "invisible" if occluded > len(frames) / 2 else "visible"


# --------------------------------------------------------------------------- degradation


def noise_draw(seed) -> Tuple[float, float]:
    """(direction, standard-normal magnitude) for one rig; reused across noise levels."""
    rng = np.random.default_rng(seed)
    return float(rng.uniform(0.0, 2.0 * math.pi)), float(rng.standard_normal())


def degrade_pose(pose: Pose2, mu: float, sigma: float, seed=None, draw: Optional[Tuple[float, float]] = None) -> Pose2:
    """Shift a pose by N(mu, sigma) meters (clamped at 0) in a uniformly random direction; yaw untouched."""
    if mu < 0 or sigma < 0:
        raise ValueError("mu and sigma must be >= 0")
    theta, z = draw if draw is not None else noise_draw(seed)
    mag = max(0.0, mu + sigma * z)
    return Pose2(pose.x + mag * math.cos(theta), pose.y + mag * math.sin(theta), pose.yaw)


def latency_frames(latency: float) -> int:
    """Whole 10 Hz frames of delay, rounding halves up."""
    if latency < 0:
        raise ValueError("latency must be >= 0")
    return int(math.floor(latency * HZ + 0.5 + 1e-9))


def apply_latency(log: ScenarioLog, rig: AgentRig, latency: Optional[float] = None) -> Dict[int, int]:
    lat = rig.latency if latency is None else latency
    off = 0 if rig.is_ego else latency_frames(lat)
    return {k: max(0, k - off) for k in range(len(log.frames))}


# --------------------------------------------------------------------------- warping and fusion


def _bilinear(arr: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    nx, ny = arr.shape[:2]
    i0 = np.floor(u).astype(int)
    j0 = np.floor(v).astype(int)
    fu = u - i0
    fv = v - j0
    out = 0.0
    for di, wi in ((0, 1 - fu), (1, fu)):
        for dj, wj in ((0, 1 - fv), (1, fv)):
            ii, jj = i0 + di, j0 + dj
            ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
            vals = arr[np.clip(ii, 0, nx - 1), np.clip(jj, 0, ny - 1)]
            w = wi * wj * ok
            if vals.ndim > w.ndim:
                w = w[..., None]
            out = out + vals * w
    return out


def _source_coords(grid: GridSpec, src_pose: Pose2, ego_pose: Pose2):
    rel = relative_pose(src_pose, ego_pose)
    c = grid.cell_centers()
    cs, sn = math.cos(rel.yaw), math.sin(rel.yaw)
    x = rel.x + cs * c[..., 0] - sn * c[..., 1]
    y = rel.y + sn * c[..., 0] + cs * c[..., 1]
    u = (x - grid.x_min) / grid.cell - 0.5
    v = (y - grid.y_min) / grid.cell - 0.5
    return u, v


def warp_coverage(grid: GridSpec, src_pose: Pose2, ego_pose: Pose2) -> np.ndarray:
    """Ego cells whose nearest source cell lies inside the source grid."""
    u, v = _source_coords(grid, src_pose, ego_pose)
    i, j = np.floor(u + 0.5).astype(int), np.floor(v + 0.5).astype(int)
    return grid.in_range(i, j)


def warp_to_ego(field: MotionField, src_pose: Pose2, ego_pose: Pose2) -> MotionField:
    """Resample a field from the source agent's frame onto the ego grid.

    Segmentation uses nearest neighbour, the other channels bilinear
    interpolation; vectors are rotated into the ego frame.
    """
    grid = field.grid
    if src_pose == ego_pose:
        return field.copy()
    u, v = _source_coords(grid, src_pose, ego_pose)
    i, j = np.floor(u + 0.5).astype(int), np.floor(v + 0.5).astype(int)
    inside = grid.in_range(i, j)
    ic, jc = np.clip(i, 0, grid.nx - 1), np.clip(j, 0, grid.ny - 1)
    dyaw = src_pose.yaw - ego_pose.yaw
    rot = np.array([[math.cos(dyaw), -math.sin(dyaw)], [math.sin(dyaw), math.cos(dyaw)]])
    T = field.timesteps
    seg = np.zeros_like(field.segmentation)
    cen = np.zeros_like(field.centerness)
    off = np.zeros_like(field.offset)
    flo = np.zeros_like(field.flow)
    for t in range(T):
        seg[t] = np.where(inside, field.segmentation[t][ic, jc], 0.0)
        cen[t] = _bilinear(field.centerness[t], u, v)
        off[t] = _bilinear(field.offset[t], u, v) @ rot.T
        flo[t] = _bilinear(field.flow[t], u, v) @ rot.T
    return MotionField(grid, seg, cen, off, flo)


def warp_instances(imap: InstanceMap, src_pose: Pose2, ego_pose: Pose2) -> InstanceMap:
    grid = imap.grid
    u, v = _source_coords(grid, src_pose, ego_pose)
    i, j = np.floor(u + 0.5).astype(int), np.floor(v + 0.5).astype(int)
    inside = grid.in_range(i, j)
    ic, jc = np.clip(i, 0, grid.nx - 1), np.clip(j, 0, grid.ny - 1)
    return InstanceMap(grid, np.where(inside[None], imap.ids[:, ic, jc], 0))


def support_mask(field: MotionField) -> np.ndarray:
    """Cells where a field carries content, per timestep."""
    return (field.segmentation > 0) | (field.centerness > 0)


def fuse_average(fields: Sequence[MotionField], masks: Optional[Sequence[np.ndarray]] = None) -> MotionField:
    """Mean over the rigs valid at each cell; cells no rig covers are background.

    The mean is taken relative to the first contributing value, so identical
    inputs fuse to exactly that input.
    """
    if not fields:
        raise ValueError("nothing to fuse")
    g = fields[0].grid
    for f in fields[1:]:
        if not g.compatible(f.grid) or f.timesteps != fields[0].timesteps:
            raise ValueError("fields live on different grids")
    if len(fields) == 1 and masks is None:
        return fields[0]
    if masks is None:
        masks = [np.ones(f.segmentation.shape, dtype=bool) for f in fields]
    shape = fields[0].segmentation.shape
    masks = [np.broadcast_to(np.asarray(m, dtype=bool), shape) for m in masks]
    count = np.sum(masks, axis=0)
    cover = np.nonzero(count)
    cnt = count[cover]
    ms = np.stack([m[cover] for m in masks])  # (R, M)
    first = np.argmax(ms, axis=0)
    cols = np.arange(len(first))

    def fuse(name):
        vals = np.stack([getattr(f, name)[cover] for f in fields])  # (R, M[, 2])
        ref = vals[first, cols]
        w = ms[..., None] if vals.ndim == 3 else ms
        c = cnt[:, None] if vals.ndim == 3 else cnt
        out = np.zeros_like(getattr(fields[0], name))
        # a lone contributor gives ref + 0/1 == ref exactly
        out[cover] = ref + np.where(w, vals - ref[None], 0.0).sum(axis=0) / c
        return out

    return MotionField(g, fuse("segmentation"), fuse("centerness"), fuse("offset"), fuse("flow"))


# --------------------------------------------------------------------------- oracle predictor


@dataclass(frozen=True, eq=False)
class RigView:
    rig: AgentRig
    observed: FrozenSet[int]  # agents seen in any observation frame
    offset: int  # latency, frames
    shift: Tuple[float, float]  # world translation error of the rig's pose
    boxes: Tuple[Dict[int, OrientedBox], ...]  # ego-frame boxes per timestep


@dataclass(frozen=True, eq=False)
class FusedPrediction:
    field: MotionField
    views: Tuple[RigView, ...]

    @property
    def perceived(self) -> FrozenSet[int]:
        out: set = set()
        for v in self.views:
            out |= v.observed
        return frozenset(out)


class VisibilityCache:
    """Memoises per-(rig, frame) visible sets for one log."""

    def __init__(self, log: ScenarioLog, buildings: Sequence[Polygon]):
        self.log = log
        self.buildings = tuple(buildings)
        self._memo: Dict[Tuple, FrozenSet[int]] = {}

    def __call__(self, rig: AgentRig, k: int) -> FrozenSet[int]:
        key = (rig.agent_id, rig.role, rig.view_range, k)
        hit = self._memo.get(key)
        if hit is None:
            hit = visible_in_frame(self.log.frames[k], rig, self.buildings)
            self._memo[key] = hit
        return hit

    def mask(self, rig: AgentRig, frames: Iterable[int]) -> VisibilityMask:
        return VisibilityMask(rig.agent_id, {k: self(rig, k) for k in frames})


def rig_view(
    log: ScenarioLog,
    rig: AgentRig,
    window: ObservationWindow,
    ego_pose: Pose2,
    visibility: VisibilityCache,
    noise_seed=None,
) -> RigView:
    """What one rig reports to the ego for a window: true futures of the agents it saw, displaced by its errors."""
    off = 0 if rig.is_ego else latency_frames(rig.latency)
    obs = observation_frames(window.t0, off)
    observed = visibility.mask(rig, obs).union(obs)
    dx = dy = 0.0
    if not rig.is_ego and (rig.noise_mean > 0 or rig.noise_std > 0):
        anchor = rig.pose_at(log.frames[obs[0]]) or Pose2(0.0, 0.0, 0.0)
        moved = degrade_pose(anchor, rig.noise_mean, rig.noise_std, seed=noise_seed)
        dx, dy = moved.x - anchor.x, moved.y - anchor.y
    k0 = frame_index(window.t0)
    stride = int(round(STEP * HZ))
    boxes = []
    for tau in range(window.future + 1):
        k = max(0, k0 - off + tau * stride)
        frame = log_frame(log, k)
        step_boxes = {}
        for a in frame.agents:
            if a.id not in observed:
                continue
            world = Pose2(a.pose.x + dx, a.pose.y + dy, a.pose.yaw)
            step_boxes[a.id] = OrientedBox(relative_pose(ego_pose, world), a.length, a.width)
        boxes.append(step_boxes)
    return RigView(rig, observed, off, (dx, dy), tuple(boxes))


FUSION_MODES = ("object", "average")


def fuse_boxes(views: Sequence[RigView]) -> Tuple[Dict[int, OrientedBox], ...]:
    """Per agent and timestep, the mean of every rig's box estimate.

    Means are taken relative to the first estimate, so agreeing rigs
    reproduce it exactly; yaw differences are wrapped before averaging.
    """
    T = len(views[0].boxes)
    out = []
    for tau in range(T):
        merged: Dict[int, List[OrientedBox]] = {}
        for v in views:
            for aid, box in v.boxes[tau].items():
                merged.setdefault(aid, []).append(box)
        step = {}
        for aid, boxes in merged.items():
            ref = boxes[0]
            if len(boxes) == 1:
                step[aid] = ref
                continue
            n = len(boxes)
            c = ref.center
            dx = sum(b.center.x - c.x for b in boxes) / n
            dy = sum(b.center.y - c.y for b in boxes) / n
            dyaw = sum(wrap_angle(b.center.yaw - c.yaw) for b in boxes) / n
            step[aid] = OrientedBox(Pose2(c.x + dx, c.y + dy, c.yaw + dyaw), ref.length, ref.width)
        out.append(step)
    return tuple(out)


def fused_oracle_predict(
    log: ScenarioLog,
    rigs: Sequence[AgentRig],
    window: ObservationWindow,
    buildings: Sequence[Polygon] = (),
    seed: int = 0,
    grid: GridSpec = MOTION_GRID,
    params: DecodeParams = DEFAULT_PARAMS,
    visibility: Optional[VisibilityCache] = None,
    fusion: str = "object",
) -> FusedPrediction:
    """Stand-in predictor built from each rig's view of the true future.

    `fusion="object"` averages the rigs' estimates of each agent before
    rasterising once. `fusion="average"` rasterises every rig separately and
    takes the per-cell mean over rigs with content at that cell.
    """
    if fusion not in FUSION_MODES:
        raise ValueError(f"fusion must be one of {FUSION_MODES}")
    egos = [r for r in rigs if r.is_ego]
    if len(egos) != 1:
        raise ValueError("a configuration needs exactly one ego rig")
    visibility = visibility or VisibilityCache(log, buildings)
    k0 = frame_index(window.t0)
    ego_state = log_frame(log, k0).get(egos[0].agent_id)
    if ego_state is None:
        raise ValueError(f"ego {egos[0].agent_id} absent at t={window.t0}")
    grid = grid.with_origin(egos[0].agent_id)
    views = []
    for rig in rigs:
        ns = np.random.SeedSequence([int(seed), int(log.config.seed), k0, int(rig.agent_id)])
        views.append(rig_view(log, rig, window, ego_state.pose, visibility, noise_seed=ns))
    if fusion == "object" or len(views) == 1:
        fused, _ = encode_boxes(fuse_boxes(views), grid, params)
    else:
        fields = [encode_boxes(v.boxes, grid, params)[0] for v in views]
        fused = fuse_average(fields, [support_mask(f) for f in fields])
    return FusedPrediction(fused, tuple(views))


def fused_detections(pred: FusedPrediction, log: ScenarioLog, grid: GridSpec) -> List[Tuple[int, str, float, float, float]]:
    """Current-time boxes (id, class, x, y, score): centers averaged over reporting rigs, score = share of rigs."""
    classes = {a.id: a.cls for f in log.frames[:1] for a in f.agents}
    sums: Dict[int, List[float]] = {}
    for v in pred.views:
        for aid, box in v.boxes[0].items():
            s = sums.setdefault(aid, [0.0, 0.0, 0])
            s[0] += box.center.x
            s[1] += box.center.y
            s[2] += 1
    n = len(pred.views)
    out = []
    for aid in sorted(sums):
        x, y, c = sums[aid]
        x, y = x / c, y / c
        if grid.x_min <= x < grid.x_max and grid.y_min <= y < grid.y_max:
            out.append((aid, classes.get(aid, "car"), x, y, c / n))
    return out
