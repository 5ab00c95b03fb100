"""BEV motion fields: encode ground-truth windows, decode them back into instances and polygons."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geometry import (
    MOTION_GRID,
    GridSpec,
    OrientedBox,
    Polygon,
    Pose2,
    convex_hull,
    rasterize_box,
    relative_pose,
)
from .sim_kernel import HZ, Frame, ScenarioLog

STEP = 0.5  # seconds between BEV timesteps (2 Hz)
PAST_FRAMES = 3
FUTURE_FRAMES = 4
HORIZON_STEPS = {"2s": 4, "3s": 6, "4s": 8}


@dataclass(frozen=True)
class DecodeParams:
    center_sigma: float = 1.5  # cells
    center_radius: int = 5  # gaussian truncation, cells
    nms_kernel: int = 3
    center_threshold: float = 0.3
    seg_threshold: float = 0.5
    gate: float = 3.0  # meters, id association between timesteps
    orphan_gate: float = 2.0  # meters; votes farther than this from every center form new instances


DEFAULT_PARAMS = DecodeParams()


class WindowError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MotionField:
    """Per-timestep channels on a GridSpec; arrays are indexed [tau, i, j(, xy)]."""

    grid: GridSpec
    segmentation: np.ndarray
    centerness: np.ndarray
    offset: np.ndarray
    flow: np.ndarray

    def __post_init__(self):
        T = self.segmentation.shape[0]
        shape = (T,) + self.grid.shape
        if self.segmentation.shape != shape or self.centerness.shape != shape:
            raise ValueError(f"channel shape mismatch with grid: {self.segmentation.shape} vs {shape}")
        if self.offset.shape != shape + (2,) or self.flow.shape != shape + (2,):
            raise ValueError("vector channels must be (T, nx, ny, 2)")

    @property
    def timesteps(self) -> int:
        return self.segmentation.shape[0]

    @classmethod
    def empty(cls, grid: GridSpec, timesteps: int) -> "MotionField":
        shape = (timesteps,) + grid.shape
        return cls(grid, np.zeros(shape), np.zeros(shape), np.zeros(shape + (2,)), np.zeros(shape + (2,)))

    def copy(self, **changes) -> "MotionField":
        d = dict(
            grid=self.grid,
            segmentation=self.segmentation.copy(),
            centerness=self.centerness.copy(),
            offset=self.offset.copy(),
            flow=self.flow.copy(),
        )
        d.update(changes)
        return MotionField(**d)

    def equals(self, other: "MotionField") -> bool:
        return (
            self.grid.compatible(other.grid)
            and np.array_equal(self.segmentation, other.segmentation)
            and np.array_equal(self.centerness, other.centerness)
            and np.array_equal(self.offset, other.offset)
            and np.array_equal(self.flow, other.flow)
        )


@dataclass(frozen=True, eq=False)
class InstanceMap:
    grid: GridSpec
    ids: np.ndarray  # (T, nx, ny) int, 0 = background

    @property
    def timesteps(self) -> int:
        return self.ids.shape[0]

    def instance_ids(self, tau: Optional[int] = None) -> List[int]:
        a = self.ids if tau is None else self.ids[tau]
        return [int(v) for v in np.unique(a) if v != 0]

    def mask(self, tau: Optional[int] = None) -> np.ndarray:
        return (self.ids if tau is None else self.ids[tau]) != 0


@dataclass(frozen=True)
class ObservationWindow:
    t0: float
    future: int = FUTURE_FRAMES
    past: int = PAST_FRAMES
    step: float = STEP

    def __post_init__(self):
        if self.past != PAST_FRAMES:
            raise WindowError("observation uses 3 past frames including the current one")
        if self.future < 1:
            raise WindowError("need at least one future frame")

    @property
    def past_times(self) -> List[float]:
        return [self.t0 - k * self.step for k in range(self.past - 1, -1, -1)]

    @property
    def times(self) -> List[float]:
        """Current and future timestamps (tau = 0..future)."""
        return [self.t0 + k * self.step for k in range(self.future + 1)]

    @property
    def horizon_s(self) -> float:
        return self.future * self.step


def frame_index(t: float) -> int:
    return int(round(t * HZ))


def log_frame(log: ScenarioLog, k: int, hold_after_collision: bool = True) -> Frame:
    """Frame k of the log; past a collision the terminal frame is held (agents frozen at contact)."""
    if k < 0:
        raise WindowError(f"frame index {k} before log start")
    if k < len(log.frames):
        return log.frames[k]
    if hold_after_collision and log.termination_reason == "collision":
        return log.frames[-1]
    raise WindowError(f"frame {k} beyond log end ({len(log.frames) - 1}) and log did not end in collision")


def window_frames(log: ScenarioLog, window: ObservationWindow, hold_after_collision: bool = True) -> List[Frame]:
    return [log_frame(log, frame_index(t), hold_after_collision) for t in window.times]


def evaluation_windows(
    log: ScenarioLog, future: int = FUTURE_FRAMES, stride: float = STEP, hold_after_collision: bool = True
) -> List[ObservationWindow]:
    """Windows anchored on the final frame, stepping back by `stride`.

    Non-collision logs keep the whole horizon inside the log. Collision logs
    admit any current time before contact; frames past contact are held.
    """
    end = log.duration
    first = (PAST_FRAMES - 1) * STEP
    out = []
    if log.termination_reason == "collision" and hold_after_collision:
        last = end - stride
    else:
        last = end - future * STEP
    k = 0
    while True:
        t0 = round(last - k * stride, 6)
        if t0 < first - 1e-9:
            break
        out.append(ObservationWindow(t0, future))
        k += 1
    return out[::-1]


# --------------------------------------------------------------------------- encoding


def _center_patch(grid: GridSpec, cx: float, cy: float, params: DecodeParams):
    i0, j0 = grid.index_of(cx, cy)
    r = params.center_radius
    ia, ib = max(int(i0) - r, 0), min(int(i0) + r, grid.nx - 1)
    ja, jb = max(int(j0) - r, 0), min(int(j0) + r, grid.ny - 1)
    if ia > ib or ja > jb:
        return None
    dx = (grid.x_min + (np.arange(ia, ib + 1) + 0.5) * grid.cell - cx) / grid.cell
    dy = (grid.y_min + (np.arange(ja, jb + 1) + 0.5) * grid.cell - cy) / grid.cell
    d2 = dx[:, None] ** 2 + dy[None, :] ** 2
    g = np.exp(-d2 / (2 * params.center_sigma**2))
    g[d2 > r * r] = 0.0
    return slice(ia, ib + 1), slice(ja, jb + 1), g


def encode_boxes(
    boxes_per_step: Sequence[Dict[int, OrientedBox]],
    grid: GridSpec = MOTION_GRID,
    params: DecodeParams = DEFAULT_PARAMS,
) -> Tuple[MotionField, InstanceMap]:
    """Rasterise per-timestep ego-frame boxes into a motion field and instance map.

    Where boxes overlap the smaller box keeps the cell (lower id on equal area),
    so a pedestrian in contact with a truck stays visible. A box too small to
    contain any cell center still marks the cell holding its center.
    """
    T = len(boxes_per_step)
    field = MotionField.empty(grid, T)
    seg, cen, off, flo = field.segmentation, field.centerness, field.offset, field.flow
    ids = np.zeros((T,) + grid.shape, dtype=np.int64)
    for tau, boxes in enumerate(boxes_per_step):
        for aid in sorted(boxes, key=lambda a: (-boxes[a].length * boxes[a].width, -a)):
            box = boxes[aid]
            cells = rasterize_box(box, grid)
            if len(cells) == 0:
                i, j = grid.index_of(box.center.x, box.center.y)
                if not grid.in_range(i, j):
                    continue
                cells = np.array([[int(i), int(j)]])
            ci, cj = cells[:, 0], cells[:, 1]
            ids[tau, ci, cj] = aid
            seg[tau, ci, cj] = 1.0
            off[tau, ci, cj, 0] = box.center.x - (grid.x_min + (ci + 0.5) * grid.cell)
            off[tau, ci, cj, 1] = box.center.y - (grid.y_min + (cj + 0.5) * grid.cell)
            if tau + 1 < T and aid in boxes_per_step[tau + 1]:
                nxt = boxes_per_step[tau + 1][aid].center
                flo[tau, ci, cj, 0] = nxt.x - box.center.x
                flo[tau, ci, cj, 1] = nxt.y - box.center.y
            else:
                flo[tau, ci, cj] = 0.0
            patch = _center_patch(grid, box.center.x, box.center.y, params)
            if patch is not None:
                si, sj, g = patch
                np.maximum(cen[tau, si, sj], g, out=cen[tau, si, sj])
    return field, InstanceMap(grid, ids)


def boxes_in_frame(frame: Frame, ego_pose: Pose2, agent_ids: Optional[Iterable[int]] = None) -> Dict[int, OrientedBox]:
    keep = None if agent_ids is None else set(agent_ids)
    out = {}
    for a in frame.agents:
        if keep is not None and a.id not in keep:
            continue
        out[a.id] = OrientedBox(relative_pose(ego_pose, a.pose), a.length, a.width)
    return out


def encode_motion(
    log: ScenarioLog,
    t0: float,
    ego_id: Optional[int] = None,
    grid: GridSpec = MOTION_GRID,
    horizon: int = FUTURE_FRAMES,
    params: DecodeParams = DEFAULT_PARAMS,
    hold_after_collision: bool = True,
) -> Tuple[MotionField, InstanceMap]:
    """Ground-truth motion field for the window starting at `t0`, in the ego frame at t0."""
    ego_id = log.ego_id if ego_id is None else ego_id
    window = ObservationWindow(t0, horizon)
    frames = window_frames(log, window, hold_after_collision)
    ego = frames[0].get(ego_id)
    if ego is None:
        raise WindowError(f"ego {ego_id} absent at t={t0}")
    grid = grid.with_origin(ego_id)
    return encode_boxes([boxes_in_frame(f, ego.pose) for f in frames], grid, params)


# --------------------------------------------------------------------------- decoding


@lru_cache(maxsize=8)
def _cell_centers(grid: GridSpec) -> np.ndarray:
    c = grid.cell_centers()
    c.setflags(write=False)
    return c


def _find_centers(cen: np.ndarray, grid: GridSpec, params: DecodeParams) -> List[Tuple[int, int]]:
    pooled = ndimage.maximum_filter(cen, size=params.nms_kernel, mode="constant", cval=0.0)
    cand = np.argwhere((cen > params.center_threshold) & (cen >= pooled))
    if len(cand) == 0:
        return []
    vals = cen[cand[:, 0], cand[:, 1]]
    order = np.lexsort((cand[:, 1], cand[:, 0], -vals))
    r = params.nms_kernel // 2
    kept: List[Tuple[int, int]] = []
    for k in order:
        i, j = int(cand[k, 0]), int(cand[k, 1])
        if all(max(abs(i - a), abs(j - b)) > r for a, b in kept):
            kept.append((i, j))
    return kept


def _segment_step(field: MotionField, tau: int, params: DecodeParams):
    """Instance partition of one timestep: (labels array with 1..n, metric centers (n, 2))."""
    grid = field.grid
    seg = field.segmentation[tau] > params.seg_threshold
    peaks = _find_centers(field.centerness[tau], grid, params)
    cc = _cell_centers(grid.with_origin(None))
    centers = []
    for i, j in peaks:
        c = cc[i, j]
        if seg[i, j]:
            c = c + field.offset[tau, i, j]
        centers.append(c)
    labels = np.zeros(grid.shape, dtype=np.int64)
    cells = np.argwhere(seg)
    if len(cells) == 0:
        return labels, np.zeros((0, 2))
    votes = cc[cells[:, 0], cells[:, 1]] + field.offset[tau, cells[:, 0], cells[:, 1]]
    centers_arr = np.array(centers).reshape(-1, 2)
    if len(centers_arr):
        d = np.linalg.norm(votes[:, None, :] - centers_arr[None], axis=-1)
        assign = np.argmin(d, axis=1)
        dmin = d[np.arange(len(votes)), assign]
    else:
        assign = np.full(len(votes), -1)
        dmin = np.full(len(votes), np.inf)
    # votes far from every peak (e.g. object centers beyond the grid edge) seed new instances
    orphan = np.nonzero(dmin > params.orphan_gate)[0]
    extra: List[np.ndarray] = []
    for k in orphan:
        v = votes[k]
        for m, c in enumerate(extra):
            if np.linalg.norm(v - c) <= params.orphan_gate:
                assign[k] = len(centers_arr) + m
                break
        else:
            extra.append(v)
            assign[k] = len(centers_arr) + len(extra) - 1
    n = len(centers_arr) + len(extra)
    labels[cells[:, 0], cells[:, 1]] = assign + 1
    # refined centers: mean vote per instance; drop peaks that won no cells
    present = np.unique(assign)
    cnt = np.bincount(assign, minlength=n)
    refined = np.zeros((n, 2))
    nz = cnt > 0
    for c in range(2):
        refined[nz, c] = np.bincount(assign, weights=votes[:, c], minlength=n)[nz] / cnt[nz]
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[present + 1] = np.arange(1, len(present) + 1)
    return remap[labels], refined[present]


def segment_field(field: MotionField, params: DecodeParams = DEFAULT_PARAMS):
    """Per-timestep instance partitions (labels, centers) before id tracking."""
    return [_segment_step(field, tau, params) for tau in range(field.timesteps)]


def decode_instances(
    field: MotionField,
    grid: Optional[GridSpec] = None,
    params: DecodeParams = DEFAULT_PARAMS,
    partitions=None,
) -> InstanceMap:
    """Group segmented cells around centerness peaks and track ids through the future steps.

    `partitions` may carry a precomputed `segment_field` result; it depends only
    on segmentation, centerness and offset, so flow variants can share it.
    """
    grid = grid or field.grid
    T = field.timesteps
    partitions = partitions if partitions is not None else segment_field(field, params)
    out = np.zeros((T,) + grid.shape, dtype=np.int64)
    next_id = 1
    prev_ids: List[int] = []
    prev_pred = np.zeros((0, 2))
    for tau in range(T):
        labels, centers = partitions[tau]
        n = len(centers)
        ids = [0] * n
        if tau == 0 or len(prev_ids) == 0:
            for m in range(n):
                ids[m] = next_id
                next_id += 1
        else:
            pairs = []
            if n and len(prev_pred):
                d = np.linalg.norm(centers[:, None, :] - prev_pred[None], axis=-1)
                pairs = sorted(
                    ((d[a, b], a, b) for a in range(n) for b in range(len(prev_pred)) if d[a, b] <= params.gate)
                )
            used_a, used_b = set(), set()
            for _, a, b in pairs:
                if a in used_a or b in used_b:
                    continue
                ids[a] = prev_ids[b]
                used_a.add(a)
                used_b.add(b)
            for m in range(n):
                if m not in used_a:
                    ids[m] = next_id
                    next_id += 1
        lut = np.array([0] + ids, dtype=np.int64)
        out[tau] = lut[labels]
        # predict next-step centers with mean instance flow
        pred = centers.copy()
        if n:
            occ = labels > 0
            lab = labels[occ] - 1
            cnt = np.maximum(np.bincount(lab, minlength=n), 1)
            for c in range(2):
                pred[:, c] += np.bincount(lab, weights=field.flow[tau][..., c][occ], minlength=n) / cnt
        prev_ids, prev_pred = ids, pred
    return InstanceMap(grid, out)


def decode_variants(fields: Sequence[MotionField], params: DecodeParams = DEFAULT_PARAMS) -> List[InstanceMap]:
    """Decode several fields, reusing partitions when fields share their non-flow channels."""
    out = []
    cache: List[Tuple[MotionField, list]] = []
    for f in fields:
        parts = None
        for g, p in cache:
            if f.segmentation is g.segmentation and f.centerness is g.centerness and f.offset is g.offset:
                parts = p
                break
        if parts is None:
            parts = segment_field(f, params)
            cache.append((f, parts))
        out.append(decode_instances(f, params=params, partitions=parts))
    return out


def instance_points(imap: InstanceMap, tau: int) -> List[Tuple[int, np.ndarray]]:
    """Metric cell centers of every instance at one timestep, sorted by id."""
    layer = imap.ids[tau]
    nz = np.nonzero(layer)
    if len(nz[0]) == 0:
        return []
    labels = layer[nz]
    order = np.argsort(labels, kind="stable")
    labels = labels[order]
    pts_all = imap.grid.center_of(nz[0][order], nz[1][order])
    bounds = np.flatnonzero(np.diff(labels)) + 1
    return [(int(chunk[0]), pts) for chunk, pts in zip(np.split(labels, bounds), np.split(pts_all, bounds))]


def cells_polygon(pts: np.ndarray, cell: float) -> Polygon:
    """Convex hull of the cells' squares (not of their centers), so a box
    rasterised to n x m cells maps back to an n*cell x m*cell footprint."""
    h = cell / 2
    hull = convex_hull(pts) if len(pts) > 2 else np.asarray(pts, dtype=float)
    corners = (hull[:, None, :] + np.array([[-h, -h], [h, -h], [h, h], [-h, h]])[None]).reshape(-1, 2)
    return Polygon.from_convex_ccw(convex_hull(corners))


def instances_to_polygons(imap: InstanceMap, tau: int) -> List[Tuple[int, Polygon]]:
    """(id, polygon) for each instance at timestep `tau`, in ego-frame meters."""
    return [(iid, cells_polygon(pts, imap.grid.cell)) for iid, pts in instance_points(imap, tau)]


def sample_field_variants(field: MotionField, n: int, seed: int = 0, sigma: float = 0.5) -> List[MotionField]:
    """The field itself followed by `n` copies with Gaussian-jittered flow on occupied cells."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    out = [field]
    occupied = np.nonzero(field.segmentation > 0)
    m = len(occupied[0])
    for _ in range(n):
        flow = field.flow.copy()
        if sigma > 0 and m:
            flow[occupied] += rng.normal(0.0, sigma, size=(m, 2))
        # other channels are shared, not copied: fields are treated as immutable
        out.append(MotionField(field.grid, field.segmentation, field.centerness, field.offset, flow))
    return out


def relabel_to_reference(pred: InstanceMap, ref: InstanceMap, min_iou: float = 0.5, unmatched_base: int = 1_000_000) -> InstanceMap:
    """Rename predicted instance tubes after the reference tube they overlap best.

    Matching is greedy on sequence-level IoU above `min_iou`; unmatched
    predictions get ids from `unmatched_base` upward so they never collide
    with reference ids.
    """
    p, r = pred.ids, ref.ids
    pnz, rnz = p != 0, r != 0
    both = pnz & rnz
    code = p[both] * (int(r.max()) + 1) + r[both]
    codes, inter = np.unique(code, return_counts=True)
    p_ids, p_cnt = np.unique(p[pnz], return_counts=True)
    r_ids, r_cnt = np.unique(r[rnz], return_counts=True)
    p_size = dict(zip(p_ids.tolist(), p_cnt.tolist()))
    r_size = dict(zip(r_ids.tolist(), r_cnt.tolist()))
    cands = []
    base = int(r.max()) + 1
    for c, n in zip(codes.tolist(), inter.tolist()):
        pi, ri = divmod(c, base)
        iou = n / (p_size[pi] + r_size[ri] - n)
        if iou > min_iou:
            cands.append((-iou, pi, ri))
    cands.sort()
    mapping: Dict[int, int] = {}
    used = set()
    for _, pi, ri in cands:
        if pi in mapping or ri in used:
            continue
        mapping[pi] = ri
        used.add(ri)
    lut_keys = np.array([0] + list(p_size), dtype=np.int64)
    lut_vals = np.array(
        [0] + [mapping.get(pi, unmatched_base + pi) for pi in p_size],
        dtype=np.int64,
    )
    out = np.zeros_like(p)
    idx = np.searchsorted(lut_keys[1:], p[pnz]) + 1 if len(p_size) else np.zeros(0, dtype=int)
    out[pnz] = lut_vals[idx]
    return InstanceMap(pred.grid, out)


def horizon_steps(horizon) -> int:
    """'2s' / '3s' / '4s' or a number of seconds -> number of 2 Hz future frames."""
    if isinstance(horizon, str):
        if horizon not in HORIZON_STEPS:
            raise ValueError(f"unknown horizon {horizon!r}")
        return HORIZON_STEPS[horizon]
    return int(round(float(horizon) / STEP))
