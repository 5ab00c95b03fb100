"""2D geometric primitives shared by the simulator, BEV rasterization and accident detection.

Coordinate convention used project-wide: x forward, y left, yaw counter-clockwise from +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

Point = Tuple[float, float]

_EPS = 1e-12


class GeometryError(ValueError):
    pass


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise GeometryError(f"non-finite pose {self.x}, {self.y}, {self.yaw}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def xy(self) -> Point:
        return (self.x, self.y)

    def inverse(self) -> "Pose2":
        return se2_inverse(self)

    def compose(self, other: "Pose2") -> "Pose2":
        """Pose of `other` (expressed in this frame) in the parent frame."""
        x, y = se2_apply(self, other.xy)
        return Pose2(x, y, self.yaw + other.yaw)


IDENTITY = Pose2(0.0, 0.0, 0.0)


def se2_apply(pose: Pose2, point: Sequence[float]) -> Point:
    """Map a point expressed in `pose`'s local frame into the parent frame."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    px, py = float(point[0]), float(point[1])
    return (pose.x + c * px - s * py, pose.y + s * px + c * py)


def se2_inverse(pose: Pose2) -> Pose2:
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return Pose2(-(c * pose.x + s * pose.y), s * pose.x - c * pose.y, -pose.yaw)


def se2_apply_array(pose: Pose2, pts: np.ndarray) -> np.ndarray:
    """Vectorised `se2_apply` over an (..., 2) array."""
    pts = np.asarray(pts, dtype=float)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    out = np.empty_like(pts)
    out[..., 0] = pose.x + c * pts[..., 0] - s * pts[..., 1]
    out[..., 1] = pose.y + s * pts[..., 0] + c * pts[..., 1]
    return out


def relative_pose(frame: Pose2, pose: Pose2) -> Pose2:
    """Express world `pose` in the local coordinates of world `frame`."""
    return se2_inverse(frame).compose(pose)


@dataclass(frozen=True)
class OrientedBox:
    center: Pose2
    length: float
    width: float

    def __post_init__(self):
        if not (self.width > 0 and self.length >= self.width):
            raise GeometryError(f"invalid box dims length={self.length} width={self.width}")

    def corners(self) -> np.ndarray:
        """Corners in CCW order, starting front-right."""
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
        return se2_apply_array(self.center, local)

    def polygon(self) -> "Polygon":
        return Polygon(self.corners())

    @property
    def radius(self) -> float:
        return math.hypot(self.length, self.width) / 2.0

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        local = se2_apply_array(se2_inverse(self.center), pts)
        return (np.abs(local[..., 0]) <= self.length / 2.0 + 1e-9) & (
            np.abs(local[..., 1]) <= self.width / 2.0 + 1e-9
        )


def signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12 and min(
            a[1], b[1]
        ) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    if abs(d1) <= _EPS and on_seg(q1, q2, p1):
        return True
    if abs(d2) <= _EPS and on_seg(q1, q2, p2):
        return True
    if abs(d3) <= _EPS and on_seg(p1, p2, q1):
        return True
    if abs(d4) <= _EPS and on_seg(p1, p2, q2):
        return True
    return False


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon; vertices are stored counter-clockwise.

    Clockwise input is reversed. Fewer than three vertices, zero area or
    self-intersection raise `GeometryError`.
    """

    vertices: np.ndarray
    _area: float = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) < 3 or not np.all(np.isfinite(v)):
            raise GeometryError("polygon needs at least 3 finite vertices")
        a = signed_area(v)
        if abs(a) < 1e-12:
            raise GeometryError("degenerate polygon (zero area)")
        if a < 0:
            v = v[::-1].copy()
            a = -a
        n = len(v)
        if n > 3:
            for i in range(n):
                for j in range(i + 2, n):
                    if i == 0 and j == n - 1:
                        continue
                    if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                        raise GeometryError("self-intersecting polygon")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "_area", a)

    @property
    def area(self) -> float:
        return self._area

    def centroid(self) -> Point:
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a6 = 3.0 * float(cross.sum())
        return (float(((x + xn) * cross).sum() / a6), float(((y + yn) * cross).sum() / a6))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Even-odd point-in-polygon test (boundary counts as inside for convex use)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        v = self.vertices
        x, y = pts[:, 0:1], pts[:, 1:2]
        x1, y1 = v[:, 0], v[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        cond = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside = np.logical_and(cond, x < xint).sum(axis=1) % 2 == 1
        on_edge = _point_segment_dist(pts, v, np.roll(v, -1, axis=0)).min(axis=1) <= 1e-9
        return inside | on_edge

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    @classmethod
    def from_convex_ccw(cls, vertices: np.ndarray) -> "Polygon":
        """Skip validation for vertices already known to be a CCW convex hull."""
        v = np.asarray(vertices, dtype=float)
        a = signed_area(v)
        if len(v) < 3 or a <= 1e-12:
            raise GeometryError("degenerate polygon (zero area)")
        poly = object.__new__(cls)
        v.setflags(write=False)
        object.__setattr__(poly, "vertices", v)
        object.__setattr__(poly, "_area", a)
        return poly


def square(cx: float, cy: float, side: float) -> Polygon:
    h = side / 2.0
    return Polygon(np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]]))


def _point_segment_dist(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from every point (P,2) to every segment a->b (S,2) -> (P,S)."""
    ab = b - a
    ap = pts[:, None, :] - a[None, :, :]
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom < _EPS, 1.0, denom)
    t = np.clip(np.einsum("psk,sk->ps", ap, ab) / denom, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(pts[:, None, :] - closest, axis=-1)


def _any_edge_crossing(a0, a1, b0, b1) -> bool:
    """True if any edge of A (a0->a1) intersects any edge of B, vectorised."""
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (
            r[..., 0] - p[..., 0]
        )

    P1, P2 = a0[:, None, :], a1[:, None, :]
    Q1, Q2 = b0[None, :, :], b1[None, :, :]
    d1, d2 = orient(Q1, Q2, P1), orient(Q1, Q2, P2)
    d3, d4 = orient(P1, P2, Q1), orient(P1, P2, Q2)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)
    return bool(proper.any())


def polygon_min_distance(a: Polygon, b: Polygon) -> float:
    """Minimum Euclidean distance between two polygons; 0 when they touch or overlap."""
    if not isinstance(a, Polygon) or not isinstance(b, Polygon):
        raise GeometryError("polygon_min_distance expects Polygon instances")
    a0, a1 = a.edges()
    b0, b1 = b.edges()
    d = min(
        float(_point_segment_dist(a0, b0, b1).min()),
        float(_point_segment_dist(b0, a0, a1).min()),
    )
    if d <= 1e-12:
        return 0.0
    if _any_edge_crossing(a0, a1, b0, b1):
        return 0.0
    # one polygon entirely inside the other
    if a.contains(b0[:1])[0] or b.contains(a0[:1])[0]:
        return 0.0
    return d


def convex_overlap_area(a: Polygon, b: Polygon) -> float:
    """Area of the intersection of two convex polygons (Sutherland-Hodgman clip of a by b)."""
    out = [tuple(v) for v in a.vertices]
    bv = b.vertices
    for k in range(len(bv)):
        if not out:
            return 0.0
        e0, e1 = bv[k], bv[(k + 1) % len(bv)]
        ex, ey = e1[0] - e0[0], e1[1] - e0[1]
        side = [ex * (p[1] - e0[1]) - ey * (p[0] - e0[0]) for p in out]
        clipped = []
        for i in range(len(out)):
            p, q = out[i], out[(i + 1) % len(out)]
            sp, sq = side[i], side[(i + 1) % len(out)]
            if sp >= 0:
                clipped.append(p)
            if (sp >= 0) != (sq >= 0):
                r = sp / (sp - sq)
                clipped.append((p[0] + r * (q[0] - p[0]), p[1] + r * (q[1] - p[1])))
        out = clipped
    if len(out) < 3:
        return 0.0
    return abs(signed_area(np.array(out)))


def obb_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test for two rotated rectangles (touching counts as overlap)."""
    dx, dy = b.center.x - a.center.x, b.center.y - a.center.y
    if dx * dx + dy * dy > (a.radius + b.radius) ** 2:
        return False
    ca, cb = a.corners(), b.corners()
    for yaw in (a.center.yaw, b.center.yaw):
        for axis in ((math.cos(yaw), math.sin(yaw)), (-math.sin(yaw), math.cos(yaw))):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns CCW hull vertices without collinear points."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(tuple(p))
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(tuple(p))
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def segment_intersects_polygon(p: Sequence[float], q: Sequence[float], poly: Polygon) -> bool:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    v0, v1 = poly.edges()
    for i in range(len(v0)):
        if _segments_intersect(p, q, v0[i], v1[i]):
            return True
    return bool(poly.contains(p[None, :])[0] or poly.contains(q[None, :])[0])


def segment_intersects_box(p: Sequence[float], q: Sequence[float], box: OrientedBox) -> bool:
    """Liang-Barsky clip of segment p->q against the box in its local frame."""
    inv = se2_inverse(box.center)
    lp = se2_apply(inv, p)
    lq = se2_apply(inv, q)
    hl, hw = box.length / 2.0, box.width / 2.0
    t0, t1 = 0.0, 1.0
    d = (lq[0] - lp[0], lq[1] - lp[1])
    for pk, qk in (
        (-d[0], lp[0] + hl),
        (d[0], hl - lp[0]),
        (-d[1], lp[1] + hw),
        (d[1], hw - lp[1]),
    ):
        if abs(pk) < _EPS:
            if qk < 0:
                return False
            continue
        r = qk / pk
        if pk < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return False
    return True


@dataclass(frozen=True)
class GridSpec:
    """Square BEV grid; cell (i, j) has center (x_min + (i + .5) cell, y_min + (j + .5) cell).

    Arrays indexed [i, j] are x-major (row i spans y).
    """

    x_min: float = -50.0
    x_max: float = 50.0
    y_min: float = -50.0
    y_max: float = 50.0
    cell: float = 0.5
    origin_id: Optional[int] = None

    def __post_init__(self):
        if self.cell <= 0 or self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise GeometryError(f"invalid grid {self}")

    @property
    def nx(self) -> int:
        return int(round((self.x_max - self.x_min) / self.cell))

    @property
    def ny(self) -> int:
        return int(round((self.y_max - self.y_min) / self.cell))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    def cell_centers(self) -> np.ndarray:
        xs = self.x_min + (np.arange(self.nx) + 0.5) * self.cell
        ys = self.y_min + (np.arange(self.ny) + 0.5) * self.cell
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def center_of(self, i, j) -> np.ndarray:
        return np.stack(
            [self.x_min + (np.asarray(i) + 0.5) * self.cell, self.y_min + (np.asarray(j) + 0.5) * self.cell],
            axis=-1,
        )

    def index_of(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        """Continuous -> integer cell index (may be out of range)."""
        i = np.floor((np.asarray(x) - self.x_min) / self.cell).astype(int)
        j = np.floor((np.asarray(y) - self.y_min) / self.cell).astype(int)
        return i, j

    def in_range(self, i, j) -> np.ndarray:
        i, j = np.asarray(i), np.asarray(j)
        return (i >= 0) & (i < self.nx) & (j >= 0) & (j < self.ny)

    def with_origin(self, agent_id: Optional[int]) -> "GridSpec":
        return GridSpec(self.x_min, self.x_max, self.y_min, self.y_max, self.cell, agent_id)

    def compatible(self, other: "GridSpec") -> bool:
        return (self.x_min, self.x_max, self.y_min, self.y_max, self.cell) == (
            other.x_min,
            other.x_max,
            other.y_min,
            other.y_max,
            other.cell,
        )

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "cell": self.cell,
            "origin_id": self.origin_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(d["x_min"], d["x_max"], d["y_min"], d["y_max"], d["cell"], d.get("origin_id"))


MOTION_GRID = GridSpec(-50.0, 50.0, -50.0, 50.0, 0.5)
DETECTION_GRID = GridSpec(-51.2, 51.2, -51.2, 51.2, 0.8)


def rasterize_box(box: OrientedBox, grid: GridSpec) -> np.ndarray:
    """Indices (N, 2) of cells whose centers lie inside `box` (boundary inclusive)."""
    c = box.center
    r = box.radius
    lo_i, lo_j = grid.index_of(c.x - r, c.y - r)
    hi_i, hi_j = grid.index_of(c.x + r, c.y + r)
    lo_i, lo_j = max(int(lo_i), 0), max(int(lo_j), 0)
    hi_i, hi_j = min(int(hi_i), grid.nx - 1), min(int(hi_j), grid.ny - 1)
    if lo_i > hi_i or lo_j > hi_j:
        return np.zeros((0, 2), dtype=int)
    ii = np.arange(lo_i, hi_i + 1)
    jj = np.arange(lo_j, hi_j + 1)
    dx = (grid.x_min + (ii + 0.5) * grid.cell - c.x)[:, None]
    dy = (grid.y_min + (jj + 0.5) * grid.cell - c.y)[None, :]
    cs, sn = math.cos(c.yaw), math.sin(c.yaw)
    lx = cs * dx + sn * dy
    ly = -sn * dx + cs * dy
    inside = (np.abs(lx) <= box.length / 2.0 + 1e-9) & (np.abs(ly) <= box.width / 2.0 + 1e-9)
    a, b = np.nonzero(inside)
    return np.stack([ii[a], jj[b]], axis=1)


def segments_hit_convex(p: Sequence[float], qs: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Which segments p->q[k] touch a convex CCW polygon (Cyrus-Beck clip, vectorised over q)."""
    p = np.asarray(p, dtype=float)
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    v = np.asarray(vertices, dtype=float)
    e = np.roll(v, -1, axis=0) - v  # (E, 2)
    d = qs - p  # (M, 2)
    num = e[:, 0] * (p[1] - v[:, 1]) - e[:, 1] * (p[0] - v[:, 0])  # (E,)
    den = e[None, :, 0] * d[:, None, 1] - e[None, :, 1] * d[:, None, 0]  # (M, E)
    t_in = np.zeros(len(qs))
    t_out = np.ones(len(qs))
    hit = np.ones(len(qs), dtype=bool)
    for k in range(len(v)):
        dk = den[:, k]
        par = np.abs(dk) < _EPS
        hit &= ~(par & (num[k] < -1e-12))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = -num[k] / dk
        t_in = np.where(~par & (dk > 0), np.maximum(t_in, r), t_in)
        t_out = np.where(~par & (dk < 0), np.minimum(t_out, r), t_out)
    return hit & (t_in <= t_out + 1e-12)
