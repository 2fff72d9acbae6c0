import math

import numpy as np
import pytest

from resectsim import planner, surface
from resectsim.errors import (
    ComparisonError,
    ContractViolation,
    EstimationError,
    PlanningError,
)
from resectsim.geometry import Point3, PointCloud
from resectsim.planner import (
    CutPlan,
    PitchTable,
    PlanConfig,
    Waypoint,
    estimate_pitch,
    plan_consistency_rmse,
    plan_cuts,
    summarize_pitch,
)

# The sixteen demonstration pitch angles (four cuts in four demonstrations).
DEMO_PITCH_TABLE = PitchTable(
    [
        [21.7, 20.4, 24.7, 29.1],
        [20.8, 29.4, 34.1, 36.5],
        [28.7, 27.9, 28.2, 29.2],
        [32.0, 27.0, 31.6, 31.4],
    ]
)


def flat_surface(z=5.0, span=40.0):
    xs = np.linspace(-span, span, 12)
    gx, gy = np.meshgrid(xs, xs)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])
    return surface.fit_poly(PointCloud(pts), 1, 1)


def tool_cloud(angle_deg, n=50, rng=None, sigma=0.0, scale=1.0):
    x = np.linspace(0, 20, n) * scale
    z = np.tan(math.radians(angle_deg)) * x
    if rng is not None and sigma:
        z = z + rng.normal(0, sigma, n)
    y = np.zeros(n)
    return PointCloud(np.column_stack([x, y, z]))


class TestEstimatePitch:
    def test_exact_30_degrees(self):
        assert abs(estimate_pitch(tool_cloud(30.0)) - 30.0) < 1e-9

    def test_horizontal_tool_returns_zero(self):
        # 0 degrees is outside the Waypoint pitch range; the boundary value is
        # reported here and rejected downstream by the Waypoint invariant.
        got = estimate_pitch(tool_cloud(0.0))
        assert got == 0.0
        with pytest.raises(ContractViolation):
            Waypoint(Point3(0, 0, 0), got, "+x")

    def test_noisy_monte_carlo(self):
        # Oracle: mean over 500 noisy trials stays within 0.3 deg of truth.
        rng = np.random.default_rng(123)
        vals = [
            estimate_pitch(tool_cloud(28.3, rng=rng, sigma=0.2)) for _ in range(500)
        ]
        assert abs(np.mean(vals) - 28.3) < 0.3

    def test_degenerate_vertical_rejected(self):
        pts = PointCloud(np.column_stack([np.zeros(10), np.zeros(10), np.arange(10.0)]))
        with pytest.raises(EstimationError):
            estimate_pitch(pts)

    def test_single_point_rejected(self):
        with pytest.raises(EstimationError):
            estimate_pitch(PointCloud([[1.0, 0.0, 1.0]]))

    def test_scale_invariance(self):
        a = estimate_pitch(tool_cloud(33.0))
        b = estimate_pitch(tool_cloud(33.0, scale=17.0))
        assert abs(a - b) < 1e-9


class TestSummarizePitch:
    def test_reproduces_demo_statistics(self):
        # Direct-summation oracle, then the one-decimal rounding check.
        vals = DEMO_PITCH_TABLE.flat()
        mean_oracle = sum(vals) / len(vals)
        var_oracle = sum((v - mean_oracle) ** 2 for v in vals) / (len(vals) - 1)
        mean, std = summarize_pitch(DEMO_PITCH_TABLE)
        assert abs(mean - mean_oracle) < 1e-12
        assert abs(std - math.sqrt(var_oracle)) < 1e-12
        assert round(mean, 1) == 28.3
        assert round(std, 1) == 4.6

    def test_identical_entries_zero_std(self):
        t = PitchTable([[30.0, 30.0], [30.0, 30.0]])
        mean, std = summarize_pitch(t)
        assert mean == 30.0
        assert std == 0.0

    def test_two_entries_mean(self):
        t = PitchTable([[10.0, 20.0]])
        mean, _ = summarize_pitch(t)
        assert mean == 15.0

    def test_pitch_range_validated(self):
        with pytest.raises(ContractViolation):
            PitchTable([[95.0]])


class TestPlanCuts:
    def tumor_cloud(self, y0=10.0, y1=40.0, x0=-8.0, x1=8.0, n=300):
        rng = np.random.default_rng(1)
        pts = np.column_stack(
            [
                np.concatenate([[x0, x1], rng.uniform(x0, x1, n - 2)]),
                np.concatenate([[y0, y1], rng.uniform(y0, y1, n - 2)]),
                rng.uniform(6, 12, n),
            ]
        )
        return PointCloud(pts)

    def test_flat_surface_clearance(self):
        plan = plan_cuts(flat_surface(z=5.0), self.tumor_cloud(), PlanConfig())
        for path in plan.paths:
            for wp in path:
                assert abs(wp.position.z - 6.0) < 1e-9

    def test_station_schedule(self):
        plan = plan_cuts(flat_surface(), self.tumor_cloud(y0=10.0, y1=40.0))
        assert abs(plan.tumor_extent_mm - 30.0) < 1e-9
        np.testing.assert_allclose(
            plan.stations_mm, [12.5, 17.5, 22.5, 27.5, 32.5, 37.5], atol=1e-9
        )
        diffs = np.diff(plan.stations_mm)
        np.testing.assert_allclose(diffs, 30.0 / 6, atol=1e-9)

    def test_timestamps_at_constant_speed(self):
        plan = plan_cuts(flat_surface(), self.tumor_cloud())
        path = plan.paths[0]
        # flat surface: arc length is twice the x extent (forward + retrace)
        arc = 2 * (path[len(path) // 2 - 1].position.x - path[0].position.x)
        assert abs(path[-1].t_s - arc / 2.0) < 1e-9

    def test_sixty_mm_path_takes_thirty_seconds(self):
        cloud = self.tumor_cloud(x0=-12.0, x1=12.0)
        cfg = PlanConfig(lateral_margin_mm=3.0)
        plan = plan_cuts(flat_surface(), cloud, cfg)
        # x sweep 30 mm, forward + retrace = 60 mm at 2 mm/s
        assert abs(plan.paths[0][-1].t_s - 30.0) < 1e-9

    def test_retrace_symmetry(self):
        plan = plan_cuts(flat_surface(), self.tumor_cloud())
        for path in plan.paths:
            n = len(path) // 2
            fwd = [wp.position for wp in path[:n]]
            back = [wp.position for wp in path[n:]]
            assert fwd == list(reversed(back))
            assert all(wp.direction == "+x" for wp in path[:n])
            assert all(wp.direction == "-x" for wp in path[n:])

    def test_degenerate_extent_rejected(self):
        tiny = PointCloud(np.array([[0.0, 0.0, 5.0], [0.1, 0.4, 5.0]]))
        with pytest.raises(PlanningError):
            plan_cuts(flat_surface(), tiny)

    def test_empty_cloud_rejected(self):
        with pytest.raises(PlanningError):
            plan_cuts(flat_surface(), PointCloud.empty())

    def test_frozen_frame_reused(self):
        plan1 = plan_cuts(flat_surface(z=5.0), self.tumor_cloud())
        smaller = self.tumor_cloud(y0=20.0, y1=40.0)
        plan2 = plan_cuts(flat_surface(z=7.0), smaller, frame=plan1.frame)
        assert plan2.stations_mm == plan1.stations_mm
        assert abs(plan2.paths[0][0].position.z - 8.0) < 1e-9

    def test_band_for_extends_outer_edges(self):
        plan = plan_cuts(flat_surface(), self.tumor_cloud())
        lo0, hi0 = plan.band_for(0)
        lo5, hi5 = plan.band_for(5)
        assert lo0 < -1e8 and hi5 > 1e8
        assert abs(hi0 - (plan.stations_mm[0] + plan.station_band_halfwidth)) < 1e-9
        assert abs(lo5 - (plan.stations_mm[5] - plan.station_band_halfwidth)) < 1e-9

    def test_serialization_round_trip(self):
        plan = plan_cuts(flat_surface(), self.tumor_cloud())
        doc = plan.to_dict()
        assert set(doc) == {
            "clearance_mm", "pitch_deg", "speed_mm_s", "L_mm",
            "stations_mm", "paths", "home",
        }
        back = CutPlan.from_dict(doc)
        assert back.stations_mm == plan.stations_mm
        assert len(back.paths) == len(plan.paths)
        assert back.paths[2][5].position == plan.paths[2][5].position


class TestPlanConsistency:
    def make_plan(self, z):
        cloud = TestPlanCuts().tumor_cloud()
        return plan_cuts(flat_surface(z=z), cloud)

    def test_identical_plans_zero(self):
        p = self.make_plan(5.0)
        assert plan_consistency_rmse(p, p, 3) == 0.0

    def test_uniform_offset_exact(self):
        a = self.make_plan(5.0)
        b = self.make_plan(5.5)
        assert abs(plan_consistency_rmse(a, b, 2) - 0.5) < 1e-9

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(5)
        xs = np.linspace(-30, 30, 15)
        gx, gy = np.meshgrid(xs, xs)

        def bumpy(seed):
            r = np.random.default_rng(seed)
            z = 5 + 0.2 * np.sin(gx / 7) + r.normal(0, 0.05, gx.shape)
            return surface.fit_poly(
                PointCloud(np.column_stack([gx.ravel(), gy.ravel(), z.ravel()])), 3, 3
            )

        cloud = TestPlanCuts().tumor_cloud()
        pa = plan_cuts(bumpy(1), cloud)
        pb = plan_cuts(bumpy(2), cloud, frame=pa.frame)
        got = plan_consistency_rmse(pa, pb, 4)
        # direct summation oracle over the shared forward profile
        n = len(pa.paths[4]) // 2
        za = np.array([wp.position.z for wp in pa.paths[4][:n]])
        zb = np.array([wp.position.z for wp in pb.paths[4][:n]])
        oracle = math.sqrt(float(np.mean((za - zb) ** 2)))
        assert abs(got - oracle) < 1e-9

    def test_disjoint_x_ranges_raise(self):
        a = plan_cuts(flat_surface(), TestPlanCuts().tumor_cloud(x0=-8, x1=8))
        b = plan_cuts(flat_surface(), TestPlanCuts().tumor_cloud(x0=40, x1=60))
        with pytest.raises(ComparisonError):
            plan_consistency_rmse(a, b, 0)


class TestWaypoint:
    def test_pitch_bounds(self):
        with pytest.raises(ContractViolation):
            Waypoint(Point3(0, 0, 0), 0.0, "+x")
        with pytest.raises(ContractViolation):
            Waypoint(Point3(0, 0, 0), 90.0, "+x")

    def test_direction_values(self):
        with pytest.raises(ContractViolation):
            Waypoint(Point3(0, 0, 0), 28.3, "up")
