import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import imap_from_boxes
from metric_fixtures import FIXTURES, GT, SMALL, counts, report
from oracles import brute_force_detect, random_instance_sequence
from crashsim.accident_metrics import (
    AccidentReport,
    MatchCounts,
    apa,
    declare_any,
    detect_accident,
    iou_counts,
    match_accident,
    miou,
    tp_metrics,
    vpq,
    vpq_stats,
)
from crashsim.bev_motion import InstanceMap
from crashsim.geometry import GridSpec


@pytest.mark.parametrize("name,thunk,expected", FIXTURES, ids=[f[0] for f in FIXTURES])
def test_fixture(name, thunk, expected):
    assert abs(thunk() - expected) <= 1e-9


def test_report_invariants():
    with pytest.raises(ValueError):
        AccidentReport(True, (1, 2))
    with pytest.raises(ValueError):
        AccidentReport(False, (1, 2), ((0, 0), (1, 1)), 1.0)
    with pytest.raises(ValueError):
        AccidentReport(True, (2, 1), ((0, 0), (1, 1)), 1.0)


# --------------------------------------------------------------------------- detect_accident


def _two_instances(gap_cells_by_step):
    """Two 2x2-cell instances whose gap (in 0.5 m cells) varies per step."""
    steps = []
    for g in gap_cells_by_step:
        steps.append({1: (4, 6, 4, 6), 2: (6 + g, 8 + g, 4, 6)})
    return imap_from_boxes(steps, SMALL)


def test_single_instance_never_an_accident():
    assert not detect_accident(imap_from_boxes([{1: (2, 6, 2, 4)}] * 5, SMALL)).occurred


def test_closest_step_reported():
    # gaps 3.0, 2.0, 1.5, 0.5 (cells 6, 4, 3, 1) -> only step 3 is dangerous... plus 0.8-style check
    imap = _two_instances([6, 4, 3, 1, 5])
    r = detect_accident(imap)
    assert r.occurred and r.ids == (1, 2) and r.time == pytest.approx(1.5)
    assert r.distance == pytest.approx(0.5)


def test_min_distance_above_threshold():
    r = detect_accident(_two_instances([3, 3, 3, 3, 4]))  # 1.5 m everywhere
    assert not r.occurred and r.distance is None


def test_deep_overlap_beats_earlier_graze():
    ids = np.zeros((2,) + SMALL.shape, dtype=np.int64)
    ids[0, 4:8, 4:6] = 1
    ids[0, 8:12, 6:8] = 2  # corners touch: distance 0, no overlap
    ids[1, 4:8, 4:6] = 1
    ids[1, 7, 5] = 2  # instance 2 bites into 1, so their hulls interpenetrate
    ids[1, 8:11, 5:7] = 2
    r = detect_accident(InstanceMap(SMALL, ids))
    assert r.distance == 0.0 and r.time == 0.5


def test_tie_goes_to_lowest_pair():
    steps = [{1: (0, 2, 0, 2), 2: (3, 5, 0, 2), 3: (10, 12, 0, 2), 4: (13, 15, 0, 2)}]
    assert detect_accident(imap_from_boxes(steps, SMALL)).ids == (1, 2)


def test_positions_are_centroids():
    r = detect_accident(_two_instances([1]))
    assert r.positions[0] == pytest.approx((2.5, 2.5))
    assert r.positions[1] == pytest.approx((4.0, 2.5))


def test_detect_matches_bruteforce_oracle():
    grid = GridSpec(-8, 8, -8, 8, 0.5)
    rng = np.random.default_rng(11)
    for _ in range(120):
        imap = random_instance_sequence(rng, grid)
        r = detect_accident(imap)
        o = brute_force_detect(imap)
        assert (r.ids, round(r.time / 0.5)) == o if r.occurred else o is None


def test_declare_any():
    far = AccidentReport(True, (1, 2), ((0, 0), (1, 0)), 1.0, 0.9)
    near = AccidentReport(True, (3, 4), ((0, 0), (1, 0)), 1.5, 0.4)
    none = AccidentReport.none()
    assert declare_any([none, none]) == none
    assert declare_any([none, far, none]) is far
    assert declare_any([far, near]) is near
    with pytest.raises(ValueError):
        declare_any([])


# --------------------------------------------------------------------------- matching and apa


def test_match_thresholds_nested():
    for shift in np.linspace(0, 10, 21):
        p = report((1, 2), ((shift, 0), (4 + shift, 0)))
        c = match_accident(p, GT)
        tps = [c.tp[d] for d in c.thresholds]
        assert tps == sorted(tps)


def test_counts_aggregate_associatively():
    a, b, c = counts(1, 0, 2), counts(0, 3, 1), counts(4, 1, 0)
    assert ((a + b) + c).to_dict() == (a + (b + c)).to_dict() == ((c + a) + b).to_dict()
    assert MatchCounts().empty and not a.empty


small = st.integers(0, 50)


@given(small, small, small, st.integers(1, 7))
def test_apa_scale_invariant(tp, fp, fn, k):
    assert math.isclose(apa(counts(tp, fp, fn)), apa(counts(k * tp, k * fp, k * fn)))


@given(small, small, small)
def test_apa_monotone(tp, fp, fn):
    base = apa(counts(tp, fp, fn))
    assert apa(counts(tp + 1, fp, fn)) >= base - 1e-12
    assert apa(counts(tp, fp + 1, fn)) <= base + 1e-12
    assert apa(counts(tp, fp, fn + 1)) <= base + 1e-12
    assert 0.0 <= base <= 1.0


def test_tp_metrics_empty():
    s = tp_metrics([])
    assert s.count == 0 and math.isnan(s.pos_err)
    same = tp_metrics([(GT, GT)])
    assert (same.id_err, same.pos_err, same.time_err) == (0, 0.0, 0.0)


# --------------------------------------------------------------------------- miou and vpq


def test_iou_shape_mismatch():
    with pytest.raises(ValueError):
        iou_counts(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))
    with pytest.raises(ValueError):
        miou(np.zeros((1, 4, 4)), np.zeros((2, 4, 4)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_vpq_and_miou_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    a = random_instance_sequence(rng, SMALL, timesteps=3)
    b = random_instance_sequence(rng, SMALL, timesteps=3)
    assert 0.0 <= vpq(a, b) <= 1.0
    assert 0.0 <= miou(a.ids > 0, b.ids > 0) <= 1.0
    assert vpq(a, a) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_vpq_one_iff_equal_up_to_relabel(seed):
    rng = np.random.default_rng(seed)
    a = random_instance_sequence(rng, SMALL, timesteps=3, max_instances=3)
    perm = rng.permutation(50) + 1
    relabelled = InstanceMap(SMALL, np.where(a.ids > 0, perm[a.ids], 0))
    assert vpq(relabelled, a) == 1.0
    moved = np.roll(a.ids, 1, axis=1)
    if not np.array_equal(moved, a.ids):
        assert vpq(InstanceMap(SMALL, moved), a) < 1.0


def test_vpq_stats_shape_mismatch():
    a = imap_from_boxes([{1: (0, 1, 0, 1)}], SMALL)
    b = InstanceMap(SMALL, np.zeros((2,) + SMALL.shape, dtype=np.int64))
    with pytest.raises(ValueError):
        vpq_stats(a, b)
