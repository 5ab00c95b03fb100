"""Hand-computed metric fixtures: (name, thunk, expected value)."""

import numpy as np

from conftest import imap_from_boxes
from crashsim.accident_metrics import (
    AccidentReport,
    Detection,
    GroundTruthBox,
    MatchCounts,
    apa,
    detection_map,
    match_accident,
    miou,
    tp_metrics,
    vpq,
)
from crashsim.geometry import GridSpec

SMALL = GridSpec(0.0, 10.0, 0.0, 10.0, 0.5)


def counts(tp, fp, fn):
    c = MatchCounts()
    for d in c.thresholds:
        c.tp[d], c.fp[d], c.fn[d] = tp, fp, fn
    return c


def per_threshold(values):
    c = MatchCounts()
    for d, (tp, fp, fn) in zip(c.thresholds, values):
        c.tp[d], c.fp[d], c.fn[d] = tp, fp, fn
    return c


def report(ids, positions, time=1.0):
    return AccidentReport(True, tuple(ids), tuple(tuple(p) for p in positions), time)


GT = report((1, 2), ((0.0, 0.0), (4.0, 0.0)))
OFF7 = report((1, 2), ((3.5, 0.0), (7.5, 0.0)))  # both agents 3.5 m off: total 7 m


def _single_7m_window():
    return apa(match_accident(OFF7, GT))


def _masks(a, b):
    pa = np.zeros((1, 20, 20))
    pb = np.zeros((1, 20, 20))
    pa[0][a] = 1
    pb[0][b] = 1
    return miou(pa, pb)


def _vpq_extra():
    gt = imap_from_boxes([{1: (2, 6, 2, 4)}] * 3, SMALL)
    pred = imap_from_boxes([{1: (2, 6, 2, 4), 2: (12, 14, 12, 14)}] * 3, SMALL)
    return vpq(pred, gt)


def _vpq_perfect():
    gt = imap_from_boxes([{1: (2, 6, 2, 4), 2: (10, 14, 10, 12)}] * 3, SMALL)
    pred = imap_from_boxes([{7: (2, 6, 2, 4), 9: (10, 14, 10, 12)}] * 3, SMALL)
    return vpq(pred, gt)


def _vpq_empty_pred():
    gt = imap_from_boxes([{1: (2, 6, 2, 4), 2: (10, 14, 10, 12)}] * 2, SMALL)
    return vpq(imap_from_boxes([{}] * 2, SMALL), gt)


def _vpq_half_iou():
    # 2x4 vs 2x6 overlapping on 2x4 -> IoU 8/12 at both steps
    gt = imap_from_boxes([{1: (2, 4, 2, 8)}] * 2, SMALL)
    pred = imap_from_boxes([{5: (2, 4, 2, 6)}] * 2, SMALL)
    return vpq(pred, gt)


def _map_offset():
    d = [Detection(0, "car", 1.5, 0.0, 0.9)]
    g = [GroundTruthBox(0, "car", 0.0, 0.0)]
    return detection_map(d, g)


def _map_perfect():
    g = [GroundTruthBox(0, "car", 0.0, 0.0), GroundTruthBox(0, "pedestrian", 5.0, 5.0), GroundTruthBox(1, "car", 2, 2)]
    d = [Detection(x.sample, x.cls, x.x, x.y, 1.0) for x in g]
    return detection_map(d, g)


def _map_none():
    return detection_map([], [GroundTruthBox(0, "car", 0.0, 0.0)])


def _map_fp_first():
    # a high-scoring false positive ranks ahead of the true hit:
    # precision (0, 1/2) at recall (0, 1) -> every 11-point sample takes 0.5
    g = [GroundTruthBox(0, "car", 0.0, 0.0)]
    d = [Detection(0, "car", 30.0, 0.0, 0.9), Detection(0, "car", 0.1, 0.0, 0.5)]
    return detection_map(d, g)


def _map_half_recall():
    # one of two objects found, ranked first: precision 1 up to recall 0.5 -> 6/11
    g = [GroundTruthBox(0, "car", 0.0, 0.0), GroundTruthBox(0, "car", 20.0, 0.0)]
    return detection_map([Detection(0, "car", 0.0, 0.0, 0.8)], g)


def _tp_mean():
    gt = report((1, 2), ((0, 0), (4, 0)), 2.0)
    p1 = report((1, 2), ((1, 0), (5, 0)), 2.0)  # 2 m total
    p2 = report((1, 2), ((2, 0), (6, 0)), 2.5)  # 4 m total
    return tp_metrics([(p1, gt), (p2, gt)]).pos_err


def _time_err():
    return tp_metrics([(report((1, 2), ((0, 0), (4, 0)), 3.0), report((1, 2), ((0, 0), (4, 0)), 2.5))]).time_err


def _id_err():
    gt = report((1, 2), ((0, 0), (4, 0)))
    return tp_metrics([(report((1, 3), ((0, 0), (4, 0))), gt), (gt, gt)]).id_err


def _greedy_position_pairing():
    # no shared ids: pairing by position, total = 1 + 1
    pred = report((5, 6), ((4.0, 1.0), (0.0, 1.0)))
    return apa(match_accident(pred, GT, thresholds=(1.5, 2.5, 3.0)))


FIXTURES = [
    ("apa perfect", lambda: apa(counts(1, 0, 0)), 1.0),
    ("apa per-threshold (0,1,1)", _single_7m_window, 2 / 3),
    ("apa tp3 fp1 fn2", lambda: apa(counts(3, 1, 2)), 3 / 4.5),
    ("apa explicit (0,1,1)", lambda: apa(per_threshold([(0, 1, 1), (1, 0, 0), (1, 0, 0)])), 2 / 3),
    ("apa vacuous threshold", lambda: apa(per_threshold([(0, 0, 0), (1, 1, 0), (2, 0, 0)])), (1 + 1 / 1.5 + 1) / 3),
    ("apa vacuous zero", lambda: apa(per_threshold([(0, 0, 0), (1, 1, 0), (2, 0, 0)]), vacuous_one=False), (0 + 1 / 1.5 + 1) / 3),
    ("apa scaled counts", lambda: apa(counts(9, 3, 6)), 3 / 4.5),
    ("match 7 m at d=5 is fp+fn", lambda: match_accident(OFF7, GT).fp[5.0] + match_accident(OFF7, GT).fn[5.0], 2),
    ("match 7 m at d=10 is tp", lambda: match_accident(OFF7, GT).tp[10.0], 1),
    ("match missed accident", lambda: match_accident(AccidentReport.none(), GT).fn[15.0], 1),
    ("match false alarm", lambda: match_accident(GT, AccidentReport.none()).fp[5.0], 1),
    ("greedy position pairing", _greedy_position_pairing, (0 + 1 + 1) / 3),
    ("tp mean position error", _tp_mean, 3.0),
    ("tp time error", _time_err, 0.5),
    ("tp id error", _id_err, 0.5),
    ("miou identical", lambda: _masks(np.s_[2:6, 2:6], np.s_[2:6, 2:6]), 1.0),
    ("miou disjoint", lambda: _masks(np.s_[0:4, 0:4], np.s_[10:14, 10:14]), 0.0),
    ("miou half overlap", lambda: _masks(np.s_[0:4, 0:4], np.s_[2:6, 0:4]), 1 / 3),
    ("miou both empty", lambda: _masks(np.s_[0:0, 0:0], np.s_[0:0, 0:0]), 1.0),
    ("vpq perfect up to relabel", _vpq_perfect, 1.0),
    ("vpq one extra instance", _vpq_extra, 1 / 1.5),
    ("vpq empty prediction", _vpq_empty_pred, 0.0),
    ("vpq partial iou", _vpq_half_iou, 8 / 12),
    ("map 1.5 m offset", _map_offset, 2 / 3),
    ("map perfect", _map_perfect, 1.0),
    ("map no predictions", _map_none, 0.0),
    ("map false positive first", _map_fp_first, 0.5),
    ("map half recall", _map_half_recall, 6 / 11),
]
