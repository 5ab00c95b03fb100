"""Shared builders for hand-made logs and instance maps."""

import numpy as np

from crashsim.bev_motion import InstanceMap
from crashsim.geometry import MOTION_GRID, Pose2
from crashsim.scenario_gen import ScenarioConfig
from crashsim.sim_kernel import AgentState, CollisionRecord, Frame, ScenarioLog


def agent(aid, x, y, yaw=0.0, v=0.0, cls="car", length=4.0, width=2.0, role="background"):
    if cls == "pedestrian":
        length = width = 0.8
    return AgentState(aid, cls, role, Pose2(x, y, yaw), v, length, width, 0.0)


def straight_log(tracks, n_frames=101, collision=None, reason=None, meta=None):
    """Log whose agents follow `tracks[aid] = (x0, y0, vx, vy[, cls])` at constant velocity."""
    frames = []
    for k in range(n_frames):
        t = k / 10
        agents = []
        for aid in sorted(tracks):
            x0, y0, vx, vy, *rest = tracks[aid]
            cls = rest[0] if rest else "car"
            yaw = float(np.arctan2(vy, vx)) if (vx or vy) else 0.0
            agents.append(agent(aid, x0 + vx * t, y0 + vy * t, yaw, float(np.hypot(vx, vy)), cls))
        frames.append(Frame(k, tuple(agents)))
    reason = reason or ("collision" if collision else "timeout")
    meta = meta or {"v2x": {"ego": 1, "behind": 3, "other": 2, "other-follower": 4}}
    return ScenarioLog(ScenarioConfig(0, 0), tuple(frames), collision, reason, meta)


def collision(ids, t, point=(0.0, 0.0)):
    return CollisionRecord(tuple(ids), tuple(point), t)


def imap_from_boxes(boxes_per_step, grid=MOTION_GRID):
    """InstanceMap with rectangles given as {id: (i0, i1, j0, j1)} cell ranges per step."""
    ids = np.zeros((len(boxes_per_step),) + grid.shape, dtype=np.int64)
    for tau, boxes in enumerate(boxes_per_step):
        for iid, (i0, i1, j0, j1) in boxes.items():
            ids[tau, i0:i1, j0:j1] = iid
    return InstanceMap(grid, ids)
