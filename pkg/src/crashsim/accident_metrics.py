"""Accident detection on decoded instances, accident matching and scores, and motion/detection metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .bev_motion import STEP, InstanceMap, cells_polygon, instance_points
from .geometry import Polygon, convex_overlap_area, polygon_min_distance

DANGER_DISTANCE = 1.0
THRESHOLDS = (5.0, 10.0, 15.0)
TP_THRESHOLD = 10.0
DETECTION_THRESHOLDS = (1.0, 2.0, 4.0)
_TIE = 1e-9


@dataclass(frozen=True)
class AccidentReport:
    occurred: bool
    ids: Optional[Tuple[int, int]] = None
    positions: Optional[Tuple[Tuple[float, float], Tuple[float, float]]] = None
    time: Optional[float] = None
    distance: Optional[float] = None  # polygon distance behind an occurred report

    def __post_init__(self):
        present = (self.ids is not None, self.positions is not None, self.time is not None)
        if self.occurred and not all(present):
            raise ValueError("an occurred report needs ids, positions and time")
        if not self.occurred and any(present):
            raise ValueError("a not-occurred report carries no ids, positions or time")
        if self.ids is not None and self.ids[0] > self.ids[1]:
            raise ValueError("ids must be sorted ascending")

    @classmethod
    def none(cls, distance: Optional[float] = None) -> "AccidentReport":
        return cls(False, distance=distance)

    def to_dict(self) -> dict:
        return {
            "occurred": self.occurred,
            "ids": list(self.ids) if self.ids else None,
            "positions": [list(p) for p in self.positions] if self.positions else None,
            "time": self.time,
            "distance": self.distance,
        }


# --------------------------------------------------------------------------- detection


def detect_accident(
    imap: InstanceMap,
    grid=None,
    danger_threshold: float = DANGER_DISTANCE,
    step: float = STEP,
) -> AccidentReport:
    """Closest instance pair over all timesteps; an accident if that distance is within the threshold.

    Touching or overlapping pairs all sit at distance 0; among those the larger
    overlap area wins. Remaining ties go to the earliest timestep, then the
    lowest id pair. Pairs whose
    bounding circles are already farther apart than the threshold are never
    turned into polygons; `distance` is therefore only reported for hits.
    """
    cell = imap.grid.cell
    pad = cell * math.sqrt(0.5)  # covers the square used for tiny instances
    best = None  # (distance, -overlap, tau, i, j, poly_i, poly_j)
    for tau in range(imap.timesteps):
        inst = instance_points(imap, tau)
        if len(inst) < 2:
            continue
        ids = [i for i, _ in inst]
        cents = np.array([p.mean(axis=0) for _, p in inst])
        radii = np.array([np.sqrt(((p - c) ** 2).sum(axis=1).max()) for (_, p), c in zip(inst, cents)]) + pad
        gap = np.linalg.norm(cents[:, None] - cents[None], axis=-1) - radii[:, None] - radii[None]
        a, b = np.nonzero(np.triu(gap <= danger_threshold + _TIE, k=1))
        if len(a) == 0:
            continue
        polys: Dict[int, Polygon] = {}
        for x, y in zip(a.tolist(), b.tolist()):
            for m in (x, y):
                if m not in polys:
                    polys[m] = cells_polygon(inst[m][1], cell)
            d = polygon_min_distance(polys[x], polys[y])
            if d > danger_threshold:
                continue
            overlap = convex_overlap_area(polys[x], polys[y]) if d == 0.0 else 0.0
            key = (d, -overlap, tau, ids[x], ids[y])
            if best is None or _better(key, best[:5]):
                best = key + (polys[x], polys[y])
    if best is None:
        return AccidentReport.none()
    d, _, tau, i, j, pi, pj = best
    return AccidentReport(True, (i, j), (pi.centroid(), pj.centroid()), tau * step, d)


def _better(a, b) -> bool:
    """Lexicographic (distance, -overlap, tau, id, id) with a tolerance on the two float keys."""
    for x, y in zip(a[:2], b[:2]):
        if x < y - _TIE:
            return True
        if x > y + _TIE:
            return False
    return a[2:] < b[2:]


def declare_any(reports: Sequence[AccidentReport]) -> AccidentReport:
    """Safety-first aggregation: any occurred report wins, closest distance first, then earliest."""
    if not reports:
        raise ValueError("declare_any needs at least one report")
    hits = [r for r in reports if r.occurred]
    if not hits:
        dists = [r.distance for r in reports if r.distance is not None]
        return AccidentReport.none(min(dists) if dists else None)
    return min(hits, key=lambda r: (r.distance, r.time))


# --------------------------------------------------------------------------- matching and scores


def position_difference(pred: AccidentReport, gt: AccidentReport) -> float:
    """Total distance between the two colliding agents of each report.

    Shared ids are paired first; what remains is paired greedily by position.
    """
    pp = dict(zip(pred.ids, pred.positions))
    gp = dict(zip(gt.ids, gt.positions))
    total = 0.0
    shared = set(pp) & set(gp)
    for i in shared:
        total += math.dist(pp[i], gp[i])
    rest_p = [pp[i] for i in pred.ids if i not in shared]
    rest_g = [gp[i] for i in gt.ids if i not in shared]
    while rest_p:
        pairs = [(math.dist(p, g), a, b) for a, p in enumerate(rest_p) for b, g in enumerate(rest_g)]
        d, a, b = min(pairs)
        total += d
        rest_p.pop(a)
        rest_g.pop(b)
    return total


@dataclass
class MatchCounts:
    thresholds: Tuple[float, ...] = THRESHOLDS
    tp: Dict[float, int] = field(default_factory=dict)
    fp: Dict[float, int] = field(default_factory=dict)
    fn: Dict[float, int] = field(default_factory=dict)

    def __post_init__(self):
        for d in self.thresholds:
            self.tp.setdefault(d, 0)
            self.fp.setdefault(d, 0)
            self.fn.setdefault(d, 0)

    def add(self, other: "MatchCounts") -> "MatchCounts":
        if tuple(other.thresholds) != tuple(self.thresholds):
            raise ValueError("threshold sets differ")
        for d in self.thresholds:
            self.tp[d] += other.tp[d]
            self.fp[d] += other.fp[d]
            self.fn[d] += other.fn[d]
        return self

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.thresholds, dict(self.tp), dict(self.fp), dict(self.fn)).add(other)

    @property
    def empty(self) -> bool:
        return all(self.tp[d] + self.fp[d] + self.fn[d] == 0 for d in self.thresholds)

    def to_dict(self) -> dict:
        return {str(d): {"tp": self.tp[d], "fp": self.fp[d], "fn": self.fn[d]} for d in self.thresholds}


def match_accident(pred: AccidentReport, gt: AccidentReport, thresholds: Sequence[float] = THRESHOLDS) -> MatchCounts:
    """One window's TP/FP/FN at each threshold; a mismatched double hit counts as both FP and FN."""
    counts = MatchCounts(tuple(thresholds))
    diff = position_difference(pred, gt) if pred.occurred and gt.occurred else None
    for d in counts.thresholds:
        if diff is not None and diff < d:
            counts.tp[d] += 1
            continue
        if pred.occurred:
            counts.fp[d] += 1
        if gt.occurred:
            counts.fn[d] += 1
    return counts


def apa(counts: MatchCounts, vacuous_one: bool = True) -> float:
    """Mean over thresholds of TP / (TP + FP/2 + FN/2).

    A threshold with no counts scores 1.0 when `vacuous_one` is set, else 0.0.
    """
    vals = []
    for d in counts.thresholds:
        tp, fp, fn = counts.tp[d], counts.fp[d], counts.fn[d]
        den = tp + 0.5 * fp + 0.5 * fn
        vals.append(tp / den if den > 0 else (1.0 if vacuous_one else 0.0))
    return sum(vals) / len(vals)


@dataclass(frozen=True)
class TpErrorStats:
    id_err: float
    pos_err: float
    time_err: float
    count: int

    def to_dict(self) -> dict:
        f = lambda v: None if v is None or (isinstance(v, float) and math.isnan(v)) else v  # noqa: E731
        return {"id_err": f(self.id_err), "pos_err": f(self.pos_err), "time_err": f(self.time_err), "count": self.count}


def tp_metrics(pairs: Sequence[Tuple[AccidentReport, AccidentReport]]) -> TpErrorStats:
    if not pairs:
        return TpErrorStats(math.nan, math.nan, math.nan, 0)
    ids = [0.0 if p.ids == g.ids else 1.0 for p, g in pairs]
    pos = [position_difference(p, g) for p, g in pairs]
    tim = [abs(p.time - g.time) for p, g in pairs]
    n = len(pairs)
    return TpErrorStats(sum(ids) / n, sum(pos) / n, sum(tim) / n, n)


# --------------------------------------------------------------------------- motion metrics


def iou_counts(pred_seg: np.ndarray, gt_seg: np.ndarray, threshold: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Per-timestep intersection and union counts of thresholded masks."""
    pred_seg, gt_seg = np.asarray(pred_seg), np.asarray(gt_seg)
    if pred_seg.shape != gt_seg.shape:
        raise ValueError(f"shape mismatch {pred_seg.shape} vs {gt_seg.shape}")
    p = pred_seg > threshold if pred_seg.dtype != bool else pred_seg
    g = gt_seg > threshold if gt_seg.dtype != bool else gt_seg
    axes = tuple(range(1, p.ndim))
    return (p & g).sum(axis=axes), (p | g).sum(axis=axes)


def miou(pred_seg: np.ndarray, gt_seg: np.ndarray, threshold: float = 0.5) -> float:
    """IoU per timestep averaged over timesteps; steps where both masks are empty are skipped.

    Arrays are (T, nx, ny); a single 2-D mask is treated as one timestep.
    """
    pred_seg, gt_seg = np.asarray(pred_seg), np.asarray(gt_seg)
    if pred_seg.ndim == 2:
        pred_seg, gt_seg = pred_seg[None], gt_seg[None]
    inter, union = iou_counts(pred_seg, gt_seg, threshold)
    valid = union > 0
    if not valid.any():
        return 1.0
    return float(np.mean(inter[valid] / union[valid]))


@dataclass
class VpqStats:
    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, o: "VpqStats") -> "VpqStats":
        self.iou_sum += o.iou_sum
        self.tp += o.tp
        self.fp += o.fp
        self.fn += o.fn
        return self

    @property
    def value(self) -> float:
        den = self.tp + 0.5 * self.fp + 0.5 * self.fn
        return self.iou_sum / den if den > 0 else 1.0


def vpq_stats(pred: InstanceMap, gt: InstanceMap) -> VpqStats:
    """Tube-level panoptic counts.

    A predicted and a ground-truth id match when their IoU exceeds 0.5 at
    every timestep where either exists; the tube IoU is the per-step mean.
    """
    p, g = np.asarray(pred.ids), np.asarray(gt.ids)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    T = p.shape[0]
    pids = [int(v) for v in np.unique(p) if v != 0]
    gids = [int(v) for v in np.unique(g) if v != 0]
    area_p = {i: (p == i).reshape(T, -1).sum(axis=1) for i in pids}
    area_g = {i: (g == i).reshape(T, -1).sum(axis=1) for i in gids}
    both = (p != 0) & (g != 0)
    inter: Dict[Tuple[int, int], np.ndarray] = {}
    for t in range(T):
        m = both[t]
        if not m.any():
            continue
        pairs, cnt = np.unique(np.stack([p[t][m], g[t][m]]), axis=1, return_counts=True)
        for (a, b), c in zip(pairs.T.tolist(), cnt.tolist()):
            inter.setdefault((a, b), np.zeros(T))[t] = c
    cands = []
    for (a, b), it in inter.items():
        union = area_p[a] + area_g[b] - it
        alive = union > 0
        ious = it[alive] / union[alive]
        if np.all(ious > 0.5):
            cands.append((-float(ious.mean()), a, b))
    cands.sort()
    used_p, used_g = set(), set()
    s = VpqStats()
    for neg, a, b in cands:
        if a in used_p or b in used_g:
            continue
        used_p.add(a)
        used_g.add(b)
        s.iou_sum += -neg
        s.tp += 1
    s.fp = len(pids) - s.tp
    s.fn = len(gids) - s.tp
    return s


def vpq(pred: InstanceMap, gt: InstanceMap) -> float:
    return vpq_stats(pred, gt).value


# --------------------------------------------------------------------------- detection mAP


class Detection(NamedTuple):
    sample: object
    cls: str
    x: float
    y: float
    score: float


class GroundTruthBox(NamedTuple):
    sample: object
    cls: str
    x: float
    y: float


def _ap11(tp_flags: List[bool], n_gt: int) -> float:
    if n_gt == 0:
        return 0.0
    tp = np.cumsum(np.array(tp_flags, dtype=float))
    fp = np.cumsum(1.0 - np.array(tp_flags, dtype=float))
    if len(tp) == 0:
        return 0.0
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        m = precision[recall >= r - 1e-12]
        ap += float(m.max()) if len(m) else 0.0
    return ap / 11.0


def average_precision(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], threshold: float) -> float:
    """11-point AP for one class: greedy score-ordered matching by center distance < threshold."""
    order = sorted(range(len(dets)), key=lambda k: (-dets[k].score, k))
    by_sample: Dict[object, List[int]] = {}
    for k, g in enumerate(gts):
        by_sample.setdefault(g.sample, []).append(k)
    taken = set()
    flags = []
    for k in order:
        d = dets[k]
        best, best_dist = None, threshold
        for gi in by_sample.get(d.sample, ()):
            if gi in taken:
                continue
            dist = math.hypot(gts[gi].x - d.x, gts[gi].y - d.y)
            if dist < best_dist:
                best, best_dist = gi, dist
        if best is not None:
            taken.add(best)
        flags.append(best is not None)
    return _ap11(flags, len(gts))


def detection_map(
    dets: Iterable[Detection], gts: Iterable[GroundTruthBox], thresholds: Sequence[float] = DETECTION_THRESHOLDS
) -> float:
    """Mean AP over thresholds and over the classes present in the ground truth."""
    dets, gts = list(dets), list(gts)
    classes = sorted({g.cls for g in gts})
    if not classes:
        return 0.0
    aps = []
    for c in classes:
        dc = [d for d in dets if d.cls == c]
        gc = [g for g in gts if g.cls == c]
        aps.append(sum(average_precision(dc, gc, t) for t in thresholds) / len(thresholds))
    return float(np.mean(aps))
