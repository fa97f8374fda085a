"""Car-following rule and sweep-window tests."""

import math

import pytest
from hypothesis import given, settings, strategies as st

from oracles import euler_lane_follow, euler_lane_follow_batch
from routegrid.errors import InvalidKinematics
from routegrid.follow import (
    find_leader,
    footprint_cells,
    lane_follow,
    swept_cells,
    swept_points,
)
from routegrid.model import GridCoord, Vehicle, WorldMap, register_route

from test_model import chain, hcells

speeds = st.floats(min_value=0.0, max_value=30.0, allow_nan=False)
gaps = st.floats(min_value=0.0, max_value=50.0, allow_nan=False)
horizons = st.sampled_from([0.5, 1.0, 2.0])


class TestLaneFollow:
    def test_catches_leader_mid_horizon(self):
        # closing at 6 m/s over a 3 m gap: catch at t=0.5, then ride at 4
        dec = lane_follow(10.0, (3.0, 4.0), 1.0)
        assert dec.advance == pytest.approx(7.0)
        assert dec.new_speed == pytest.approx(4.0)

    def test_cruises_without_leader(self):
        dec = lane_follow(5.0, None, 1.0)
        assert (dec.advance, dec.new_speed) == (5.0, 5.0)

    def test_ignores_non_closing_leader(self):
        dec = lane_follow(8.0, (4.0, 8.0), 1.0)
        assert (dec.advance, dec.new_speed) == (8.0, 8.0)
        dec = lane_follow(3.0, (1.0, 9.0), 1.0)
        assert (dec.advance, dec.new_speed) == (3.0, 3.0)

    def test_ignores_catch_beyond_horizon(self):
        # catch time 5/4 s is past the 1 s horizon
        dec = lane_follow(6.0, (5.0, 2.0), 1.0)
        assert (dec.advance, dec.new_speed) == (6.0, 6.0)

    def test_catch_exactly_at_horizon_cruises(self):
        dec = lane_follow(10.0, (6.0, 4.0), 1.0)
        assert (dec.advance, dec.new_speed) == (10.0, 10.0)

    def test_zero_gap_adopts_leader_speed(self):
        dec = lane_follow(10.0, (0.0, 4.0), 1.0)
        assert (dec.advance, dec.new_speed) == (4.0, 4.0)

    def test_zero_gap_stopped_leader_pins(self):
        dec = lane_follow(10.0, (0.0, 0.0), 1.0)
        assert (dec.advance, dec.new_speed) == (0.0, 0.0)

    @pytest.mark.parametrize("my,leader,h", [
        (-1.0, None, 1.0),
        (5.0, (-0.1, 3.0), 1.0),
        (5.0, (3.0, -2.0), 1.0),
        (5.0, None, 0.0),
        (5.0, None, -1.0),
    ])
    def test_invalid_inputs_rejected(self, my, leader, h):
        with pytest.raises(InvalidKinematics):
            lane_follow(my, leader, h)

    @given(speeds, speeds, gaps, horizons)
    def test_never_outruns_own_cruise(self, my, front, dist, h):
        dec = lane_follow(my, (dist, front), h)
        assert dec.advance <= my * h + 1e-9

    @given(speeds, speeds, gaps, horizons)
    def test_never_passes_leader_rear(self, my, front, dist, h):
        dec = lane_follow(my, (dist, front), h)
        assert dec.advance <= dist + front * h + 1e-9

    @given(speeds, speeds, gaps, horizons)
    def test_new_speed_is_own_or_leaders(self, my, front, dist, h):
        dec = lane_follow(my, (dist, front), h)
        assert dec.new_speed in (my, front)

    @given(speeds, speeds, gaps, horizons)
    def test_slower_leader_still_lower_bounds_advance(self, my, front, dist, h):
        dec = lane_follow(my, (dist, front), h)
        assert dec.advance >= min(my, front) * h - 1e-9

    @given(speeds, speeds, gaps)
    @settings(max_examples=50, deadline=None)
    def test_matches_fine_step_integration(self, my, front, dist):
        dec = lane_follow(my, (dist, front), 1.0)
        pos, spd = euler_lane_follow(my, (dist, front), 1.0, substep=1e-3)
        assert dec.advance == pytest.approx(pos, abs=1e-7)
        # skip the speed check when the catch lands exactly on the horizon
        if abs(dist - (my - front) * 1.0) >= 1e-9:
            assert dec.new_speed == pytest.approx(spd, abs=1e-9)

    def test_matches_batch_integration_on_grid(self):
        import numpy as np

        my, front, dist = np.meshgrid(
            np.linspace(0.0, 30.0, 7),
            np.linspace(0.0, 30.0, 7),
            np.linspace(0.0, 50.0, 9),
        )
        my, front, dist = my.ravel(), front.ravel(), dist.ravel()
        pos, spd = euler_lane_follow_batch(my, front, dist, 1.0, substep=1e-3)
        for k in range(my.size):
            dec = lane_follow(float(my[k]), (float(dist[k]), float(front[k])), 1.0)
            assert abs(dec.advance - pos[k]) < 1e-7
            # a catch landing exactly on the horizon leaves the closing speed
            # ambiguous at that one instant; positions still must agree
            dv = my[k] - front[k]
            if abs(dist[k] - dv * 1.0) < 1e-9:
                continue
            assert abs(dec.new_speed - spd[k]) < 1e-9


def make_straight_world(n_cells=100, rho=0.5):
    world = WorldMap(resolution=rho)
    register_route(world, chain(0, hcells(0, 0, n_cells - 1), rho=rho), priority_rank=0)
    return world


def car(vid, arc, speed, route_id=0, active=True, flen=4.0):
    return Vehicle(
        id=vid, vclass="car", route_id=route_id, arc_pos=arc, speed=speed,
        desired_speed=speed, active=active, footprint_length=flen,
    )


class TestFindLeader:
    def test_picks_nearest_ahead(self):
        me = car(0, 10.0, 5.0)
        vs = [me, car(1, 30.0, 3.0), car(2, 20.0, 7.0)]
        assert find_leader(vs, me, 50.0) == (20.0 - 4.0 - 10.0, 7.0)

    def test_ignores_other_routes_and_inactive(self):
        me = car(0, 10.0, 5.0)
        vs = [me, car(1, 20.0, 3.0, route_id=1), car(2, 15.0, 2.0, active=False)]
        assert find_leader(vs, me, 50.0) is None

    def test_ignores_vehicles_behind_or_level(self):
        me = car(0, 10.0, 5.0)
        vs = [me, car(1, 10.0, 3.0), car(2, 4.0, 2.0)]
        assert find_leader(vs, me, 50.0) is None

    def test_gap_floors_at_zero_when_overlapping(self):
        me = car(0, 10.0, 5.0)
        vs = [me, car(1, 12.0, 3.0)]
        assert find_leader(vs, me, 50.0) == (0.0, 3.0)

    def test_out_of_range_is_none(self):
        me = car(0, 0.0, 5.0)
        vs = [me, car(1, 30.0, 3.0)]
        assert find_leader(vs, me, 10.0) is None
        assert find_leader(vs, me, 26.0) == (26.0, 3.0)

    @given(st.lists(
        st.tuples(
            st.floats(min_value=0.0, max_value=100.0, allow_nan=False),
            st.floats(min_value=0.0, max_value=20.0, allow_nan=False),
            st.booleans(),
            st.integers(min_value=0, max_value=1),
        ),
        max_size=8,
    ))
    def test_matches_exhaustive_scan(self, rows):
        vs = [car(0, 50.0, 5.0)]
        for n, (arc, speed, active, rid) in enumerate(rows):
            vs.append(car(n + 1, arc, speed, route_id=rid, active=active))
        me = vs[0]
        got = find_leader(vs, me, 30.0)

        ahead = [
            u for u in vs[1:]
            if u.active and u.route_id == 0 and u.arc_pos > me.arc_pos
        ]
        if not ahead:
            assert got is None
            return
        best = min(ahead, key=lambda u: (u.arc_pos, u.id))
        gap = max((best.arc_pos - best.footprint_length) - me.arc_pos, 0.0)
        if gap > 30.0:
            assert got is None
        else:
            assert got == (gap, best.speed)


class TestCellWindows:
    def test_sweep_from_rest_covers_body(self):
        assert swept_cells(0.0, 0.0, 4.0, 1.0, 0.5, 100) == (0, 8)

    def test_sweep_extends_with_speed(self):
        # 12 m/s over 2 s plus a 4 m body reaches arc 28
        assert swept_cells(0.0, 12.0, 4.0, 2.0, 0.5, 100) == (0, 56)

    def test_sweep_starts_at_next_cell_sample(self):
        assert swept_cells(0.25, 0.0, 4.0, 1.0, 0.5, 100) == (1, 8)

    def test_sweep_clips_to_route(self):
        assert swept_cells(48.0, 10.0, 4.0, 1.0, 0.5, 100) == (96, 99)

    def test_sweep_can_be_empty(self):
        lo, hi = swept_cells(0.3, 0.0, 0.0, 1.0, 0.5, 100)
        assert lo > hi

    def test_footprint_half_open_at_rear(self):
        # body (1.0, 2.0]: the cell at arc 1.0 belongs to the vehicle behind
        assert footprint_cells(2.0, 1.0, 0.5, 100) == (3, 4)

    def test_footprint_at_entry(self):
        assert footprint_cells(0.0, 4.0, 0.5, 100) == (0, 0)

    def test_touching_vehicles_share_no_cell(self):
        leader_lo, _ = footprint_cells(10.0, 4.0, 0.5, 100)
        _, follower_hi = footprint_cells(6.0, 4.0, 0.5, 100)
        assert follower_hi < leader_lo

    @given(
        st.integers(min_value=0, max_value=400),
        st.integers(min_value=0, max_value=120),
        st.sampled_from([4.0, 10.0, 4.8]),
        st.sampled_from([0.25, 0.5, 1.0]),
    )
    def test_sweep_window_matches_interval(self, arcq, speedq, flen, rho):
        # quarter-cell arcs and speeds keep the arithmetic exact in binary
        arc = arcq * rho / 4.0
        speed = speedq * 0.25
        n = 500
        lo, hi = swept_cells(arc, speed, flen, 1.0, rho, n)
        end = arc + speed * 1.0 + flen
        for k in range(max(lo - 2, 0), min(hi + 3, n)):
            inside = arc <= k * rho <= end
            assert (lo <= k <= hi) == inside

    @given(
        st.integers(min_value=0, max_value=400),
        st.sampled_from([4.0, 10.0, 4.8]),
        st.sampled_from([0.25, 0.5, 1.0]),
    )
    def test_footprint_window_matches_interval(self, arcq, flen, rho):
        arc = arcq * rho / 4.0
        n = 500
        lo, hi = footprint_cells(arc, flen, rho, n)
        for k in range(max(lo - 2, 0), min(hi + 3, n)):
            inside = arc - flen < k * rho <= arc
            assert (lo <= k <= hi) == inside

    def test_swept_points_follow_route_order(self):
        world = make_straight_world()
        v = car(0, 3.0, 2.0)
        pts = swept_points(world, v, 1.0)
        # interval [3, 3+2+4]: cells 6..18
        assert pts == [GridCoord(i, 0) for i in range(6, 19)]
