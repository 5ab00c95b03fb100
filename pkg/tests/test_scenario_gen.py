import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crashsim.geometry import obb_overlap
from crashsim.scenario_gen import (
    CLASSES,
    MANEUVERS,
    NORMAL,
    SCENARIO_TYPES,
    ScenarioConfig,
    ScenarioError,
    SpawnError,
    Trajectory,
    build_map,
    plan_trajectory,
    spawn_scenario,
    split_dataset,
    sync_arrival,
    trajectory_intersection,
)


def test_four_way_signalized_map_has_twelve_routes():
    m = build_map("four-way", True, 4)
    assert len(m.routes) == 12
    assert m.lights is not None


def test_unsignalized_map_has_no_light_program():
    m = build_map("three-way", False, 4)
    assert m.lights is None
    assert m.light_state("S", 3.0) is None


def test_map_is_deterministic():
    a, b = build_map("four-way", True, 11), build_map("four-way", True, 11)
    assert a.digest() == b.digest()


def test_buildings_stay_off_the_roads():
    for seed in range(30):
        m = build_map("four-way", True, seed)
        assert len(m.buildings) <= 4
        for route in m.routes.values():
            for b in m.buildings:
                assert not b.contains(route.points).any()


def test_straight_route_is_straight():
    t = plan_trajectory(build_map("four-way", False, 0), "S", "straight")
    d = np.diff(t.points, axis=0)
    heading = np.arctan2(d[:, 1], d[:, 0])
    assert np.ptp(heading) < 1e-9


def _min_turn_radius(traj: Trajectory) -> float:
    p = traj.points
    a, b, c = p[:-2], p[1:-1], p[2:]
    ab, bc, ca = (np.linalg.norm(x, axis=1) for x in (b - a, c - b, a - c))
    cross = np.abs((b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0])
    with np.errstate(divide="ignore"):
        r = ab * bc * ca / (2 * cross)
    return float(np.min(r[np.isfinite(r)]))


def test_left_turn_radius_at_least_five_metres():
    t = plan_trajectory(build_map("four-way", False, 0), "S", "left")
    assert _min_turn_radius(t) >= 5.0 - 1e-6


def test_three_way_stem_right_turn_ends_on_exit_lane():
    m = build_map("three-way", False, 0)
    stem = next(ap for ap, mans in MANEUVERS["three-way"].items() if "straight" not in mans)
    t = plan_trajectory(m, stem, "right")
    exits = [r.points[-1] for r in m.routes.values()]
    assert any(np.allclose(t.points[-1], e) for e in exits)
    assert t.points[-1] @ t.points[-1] > 50.0**2  # leaves the junction


def test_invalid_maneuver_rejected():
    m = build_map("three-way", False, 0)
    with pytest.raises(ScenarioError):
        plan_trajectory(m, "N", "straight")


@settings(deadline=None, max_examples=50)
@given(st.sampled_from(list(MANEUVERS["four-way"])), st.integers(0, 50))
def test_trajectory_waypoint_invariants(ap, seed):
    m = build_map("four-way", True, seed)
    for man in MANEUVERS["four-way"][ap]:
        t = plan_trajectory(m, ap, man)
        assert np.all(np.diff(t.s) > 0)
        assert np.all(np.linalg.norm(np.diff(t.points, axis=0), axis=1) <= 2.0)


def test_perpendicular_straights_cross_at_origin():
    a = Trajectory.from_polyline(np.array([[-20.0, 0.0], [20.0, 0.0]]))
    b = Trajectory.from_polyline(np.array([[0.0, -30.0], [0.0, 30.0]]))
    point, s_a, s_b = trajectory_intersection(a, b)
    assert point == pytest.approx((0, 0), abs=1e-9)
    assert (s_a, s_b) == pytest.approx((20.0, 30.0))


def test_parallel_lanes_never_meet():
    a = Trajectory.from_polyline(np.array([[-20.0, 0.0], [20.0, 0.0]]))
    b = Trajectory.from_polyline(np.array([[-20.0, 3.5], [20.0, 3.5]]))
    assert trajectory_intersection(a, b) is None


def test_left_turn_against_oncoming_matches_bruteforce():
    m = build_map("four-way", False, 0)
    a, b = plan_trajectory(m, "S", "left"), plan_trajectory(m, "N", "straight")
    point, s_a, _ = trajectory_intersection(a, b)

    def cross(p1, p2, q1, q2):
        d = lambda o, x, y: (x[0] - o[0]) * (y[1] - o[1]) - (x[1] - o[1]) * (y[0] - o[0])  # noqa: E731
        return d(p1, p2, q1) * d(p1, p2, q2) <= 0 and d(q1, q2, p1) * d(q1, q2, p2) <= 0

    first = None
    for i in range(len(a.points) - 1):
        for j in range(len(b.points) - 1):
            if cross(a.points[i], a.points[i + 1], b.points[j], b.points[j + 1]):
                first = i
                break
        if first is not None:
            break
    assert first is not None
    assert a.s[first] - 1e-9 <= s_a <= a.s[first + 1] + 1e-9
    assert np.linalg.norm(np.array(point) - a.point_at(s_a)) < 1e-6


def test_sync_arrival_examples():
    assert sync_arrival(40, 45, 10, 15) == pytest.approx((0.0, 15.0))
    assert sync_arrival(30, 30, 10, 10) == (0.0, 0.0)
    assert sync_arrival(20, 80, 10, 10) == pytest.approx((60.0, 0.0))
    with pytest.raises(SpawnError):
        sync_arrival(20, 80, 10, 10, max_shift_a=10.0)


@given(st.floats(1, 100), st.floats(1, 100), st.floats(1, 20), st.floats(1, 20))
def test_sync_arrival_equalises_times(s_a, s_b, v_a, v_b):
    da, db = sync_arrival(s_a, s_b, v_a, v_b)
    assert min(da, db) == 0.0
    assert (s_a + da) / v_a == pytest.approx((s_b + db) / v_b)


def test_config_validation():
    with pytest.raises(ScenarioError):
        ScenarioConfig(13, 0)
    with pytest.raises(ScenarioError):
        ScenarioConfig(1, 0, duration_cap=12.0)
    with pytest.raises(ScenarioError):
        ScenarioConfig(1, 0, max_speeds=(0.0, 5.0))
    c = ScenarioConfig.sample(3, 9)
    assert ScenarioConfig.from_dict(c.to_dict()) == c


def test_type_topologies():
    for t, (topo, *_rest) in SCENARIO_TYPES.items():
        assert topo == ("four-way" if (t - 1) % 6 < 4 else "three-way")
        assert ScenarioConfig(t, 0).build_map().topology == topo


def test_normal_plan_has_no_accident_roles():
    cfg = ScenarioConfig(NORMAL, 5)
    plan = spawn_scenario(cfg, cfg.build_map())
    assert not plan.by_role("accident-1") and not plan.by_role("accident-2")


@pytest.mark.parametrize("scenario_type", sorted(SCENARIO_TYPES))
def test_accident_plans(scenario_type):
    for seed in range(5):
        cfg = ScenarioConfig.sample(scenario_type, seed)
        m = cfg.build_map()
        plan = spawn_scenario(cfg, m)
        a1, a2 = plan.by_role("accident-1"), plan.by_role("accident-2")
        assert len(a1) == 1 and len(a2) == 1
        a, b = a1[0], a2[0]
        hit = trajectory_intersection(a.trajectory, b.trajectory)
        assert hit is not None
        _, c_a, c_b = hit
        assert abs((c_a - a.start_s) / a.speed - (c_b - b.start_s) / b.speed) <= 0.1
        for acc, fol in ((a, plan.by_role("follower-1")[0]), (b, plan.by_role("follower-2")[0])):
            assert np.array_equal(acc.trajectory.points, fol.trajectory.points)
            assert 8.0 - 1e-9 <= acc.start_s - fol.start_s <= 15.0 + 1e-9
        assert {x.cls for x in plan.agents} <= set(CLASSES)
        boxes = [x.box() for x in plan.agents]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                assert not obb_overlap(boxes[i], boxes[j])


def test_spawn_is_deterministic():
    cfg = ScenarioConfig.sample(4, 21)
    m = cfg.build_map()
    assert spawn_scenario(cfg, m).fingerprint() == spawn_scenario(cfg, cfg.build_map()).fingerprint()


def test_split_ten_of_one_type():
    train, val, test = split_dataset(list(range(10)), [1] * 10, seed=0)
    assert len(train) == 7 and len(val) in (1, 2) and len(test) == 10 - 7 - len(val)
    assert val and test


def test_split_is_seeded_partition():
    ids = [f"s{i}" for i in range(100)]
    types = [i % 13 for i in range(100)]
    a = split_dataset(ids, types, seed=5)
    assert a == split_dataset(ids, types, seed=5)
    assert sorted(sum(a, [])) == sorted(ids)


def test_split_small_type_warns():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        split_dataset(list(range(12)), [1] * 10 + [2] * 2, seed=0)
    assert any("unstratified" in str(x.message) for x in w)


@pytest.mark.parametrize("types", [range(1, 13), range(0, 13)])
def test_split_691(types):
    types = list(types)
    tv = [types[i % len(types)] for i in range(691)]
    train, val, test = split_dataset(list(range(691)), tv, seed=0)
    assert (len(train), len(val), len(test)) == (483, 104, 104)
    # every type is split in proportion, to within one scenario
    for t in set(tv):
        n = tv.count(t)
        for part, r in zip((train, val, test), (0.7, 0.15, 0.15)):
            assert abs(sum(tv[i] == t for i in part) - r * n) < 1
