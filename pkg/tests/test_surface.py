import time

import numpy as np
import pytest

from resectsim import surface
from resectsim.errors import ContractViolation, FitError, SelectionError
from resectsim.geometry import PointCloud
from resectsim.surface import (
    FitReport,
    basis_exponents,
    evaluate,
    fit_poly,
    pareto_front,
    rmse,
    select_default,
    sweep_models,
)


def grid_cloud(f, n=25, span=20.0, rng=None, noise=0.0):
    xs = np.linspace(-span, span, n)
    ys = np.linspace(-span, span, n)
    gx, gy = np.meshgrid(xs, ys)
    z = f(gx, gy).ravel()
    if noise and rng is not None:
        z = z + rng.normal(0, noise, z.size)
    return PointCloud(np.column_stack([gx.ravel(), gy.ravel(), z]))


class TestFitPoly:
    def test_plane_recovered_exactly(self):
        cloud = grid_cloud(lambda x, y: 1 + 2 * x + 3 * y)
        surf = fit_poly(cloud, 1, 1)
        xn, yn = surf.x_scale, surf.y_scale
        # recover raw-coordinate coefficients from the normalized ones
        assert abs(evaluate(surf, 0.0, 0.0) - 1.0) < 1e-9
        assert abs((evaluate(surf, 1.0, 0.0) - evaluate(surf, 0.0, 0.0)) - 2.0) < 1e-9
        assert abs((evaluate(surf, 0.0, 1.0) - evaluate(surf, 0.0, 0.0)) - 3.0) < 1e-9
        assert surf.rmse < 1e-9

    def test_quadratic_bowl_exact(self):
        cloud = grid_cloud(lambda x, y: x**2 + y**2)
        surf = fit_poly(cloud, 2, 2)
        assert surf.rmse < 1e-9

    def test_phantom_cloud_with_point_noise(self, seed1_snapshot):
        from resectsim import geometry

        scene, snap, pose, intr = seed1_snapshot
        mask = geometry.BinaryMask.from_grid(snap.labels == geometry.CLASS_TRACHEA)
        cloud = geometry.transform_cloud(
            geometry.project_depth_to_cloud(snap.depth, mask, intr), pose
        )
        rng = np.random.default_rng(0)
        noisy = cloud.points.copy()
        noisy[:, 2] += rng.normal(0, 0.2, len(cloud))
        surf = fit_poly(PointCloud(noisy), 5, 5, cap=5)
        assert 0.2 <= surf.rmse <= 1.0

    def test_underdetermined_raises(self):
        cloud = PointCloud(np.random.default_rng(0).normal(size=(5, 3)))
        with pytest.raises(FitError) as err:
            fit_poly(cloud, 2, 2)
        assert err.value.basis_size == 9
        assert err.value.point_count == 5

    def test_rank_deficiency_raises(self):
        # all points on a line in x: y basis columns are degenerate
        x = np.linspace(-1, 1, 50)
        cloud = PointCloud(np.column_stack([x, np.zeros(50), x**2]))
        with pytest.raises(FitError):
            fit_poly(cloud, 2, 2)

    def test_degree_bounds(self):
        cloud = grid_cloud(lambda x, y: x + y)
        with pytest.raises(ContractViolation):
            fit_poly(cloud, 0, 1)
        with pytest.raises(ContractViolation):
            fit_poly(cloud, 1, 11)

    def test_capped_basis_count(self):
        assert len(basis_exponents(5, 5, cap=5)) == 21
        assert len(basis_exponents(5, 5)) == 36
        cloud = grid_cloud(lambda x, y: x * y + x**2)
        surf = fit_poly(cloud, 5, 5, cap=5)
        assert surf.coefficient_count == 21


class TestEvaluate:
    def test_constant_surface(self):
        cloud = grid_cloud(lambda x, y: np.full_like(x, 4.25))
        surf = fit_poly(cloud, 1, 1)
        for x, y in [(-30, 12), (0, 0), (55, -7)]:
            assert abs(evaluate(surf, x, y) - 4.25) < 1e-9

    def test_plane_matches_closed_form(self):
        cloud = grid_cloud(lambda x, y: 0.5 - 1.5 * x + 0.25 * y)
        surf = fit_poly(cloud, 1, 1)
        rng = np.random.default_rng(8)
        pts = rng.uniform(-20, 20, (100, 2))
        expected = 0.5 - 1.5 * pts[:, 0] + 0.25 * pts[:, 1]
        got = evaluate(surf, pts[:, 0], pts[:, 1])
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_residual_rms_equals_report(self):
        rng = np.random.default_rng(4)
        cloud = grid_cloud(lambda x, y: np.sin(x / 8) + 0.1 * y, rng=rng, noise=0.3)
        surf = fit_poly(cloud, 5, 5)
        pred = evaluate(surf, cloud.points[:, 0], cloud.points[:, 1])
        direct = np.sqrt(np.mean((cloud.points[:, 2] - pred) ** 2))
        assert abs(direct - surf.rmse) < 1e-9

    def test_in_domain_flagging(self):
        cloud = grid_cloud(lambda x, y: x + y, span=10.0)
        surf = fit_poly(cloud, 1, 1)
        assert surf.in_domain(0.0, 0.0)
        assert not surf.in_domain(11.0, 0.0)


class TestRmse:
    def test_cloud_on_surface_is_zero(self):
        cloud = grid_cloud(lambda x, y: 2 * x - y)
        surf = fit_poly(cloud, 1, 1)
        assert rmse(surf, cloud) < 1e-10

    def test_uniform_offset_is_exact(self):
        cloud = grid_cloud(lambda x, y: 2 * x - y)
        surf = fit_poly(cloud, 1, 1)
        shifted = PointCloud(cloud.points + [0, 0, 1.0])
        assert abs(rmse(surf, shifted) - 1.0) < 1e-12

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(12)
        cloud = grid_cloud(lambda x, y: 0.3 * x + 0.1 * y, rng=rng, noise=1.0)
        surf = fit_poly(cloud, 1, 1)
        pred = evaluate(surf, cloud.points[:, 0], cloud.points[:, 1])
        total = 0.0
        for zk, pk in zip(cloud.points[:, 2], pred):
            total += (zk - pk) ** 2
        assert abs(np.sqrt(total / len(cloud)) - rmse(surf, cloud)) < 1e-12

    def test_empty_cloud_rejected(self):
        cloud = grid_cloud(lambda x, y: x)
        surf = fit_poly(cloud, 1, 1)
        with pytest.raises(ContractViolation):
            rmse(surf, PointCloud.empty())


class TestSweep:
    def test_report_count(self):
        cloud = grid_cloud(lambda x, y: x * y)
        reports = sweep_models(cloud, 2, timing_repeats=1)
        assert len(reports) == 4
        assert [r.model_id for r in reports] == ["poly11", "poly12", "poly21", "poly22"]

    def test_nested_model_monotonicity(self):
        rng = np.random.default_rng(1)
        cloud = grid_cloud(
            lambda x, y: np.cos(x / 9) * np.sin(y / 11) * 3, n=40, rng=rng, noise=0.2
        )
        reports = {
            (r.degree_x, r.degree_y): r.rmse
            for r in sweep_models(cloud, 6, timing_repeats=1)
        }
        for (dx, dy), v in reports.items():
            for (dx2, dy2), v2 in reports.items():
                if dx <= dx2 and dy <= dy2:
                    assert v2 <= v + 1e-9

    def test_sweep_time_budget(self, seed1_snapshot):
        # degree-10 sweep on a ~5k-point cloud finishes under 10 s
        from resectsim import geometry

        scene, snap, pose, intr = seed1_snapshot
        mask = geometry.BinaryMask.from_grid(snap.labels == geometry.CLASS_TRACHEA)
        cloud = geometry.transform_cloud(
            geometry.project_depth_to_cloud(snap.depth, mask, intr), pose
        )
        pts = cloud.points[:: max(1, len(cloud) // 5000)]
        sub = PointCloud(pts)
        t0 = time.perf_counter()
        reports = sweep_models(sub, 10)
        elapsed = time.perf_counter() - t0
        assert len(reports) == 100
        assert all(r.ok for r in reports)
        assert elapsed < 10.0


class TestPareto:
    def report(self, rmse_v, t, name="m"):
        return FitReport(name, 1, 1, 4, rmse_v, t)

    def test_single_report(self):
        r = self.report(0.5, 0.1)
        assert pareto_front([r]) == [r]

    def test_dominated_pair(self):
        a = self.report(0.5, 0.1, "a")
        b = self.report(0.6, 0.2, "b")
        assert pareto_front([a, b]) == [a]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(10)
        reports = [
            self.report(float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.01, 1.0)), f"m{i}")
            for i in range(100)
        ]
        front = pareto_front(reports)
        brute = []
        for r in reports:
            dominated = False
            for o in reports:
                if o is r:
                    continue
                if (
                    o.rmse <= r.rmse
                    and o.fit_time_s <= r.fit_time_s
                    and (o.rmse < r.rmse or o.fit_time_s < r.fit_time_s)
                ):
                    dominated = True
                    break
            if not dominated:
                brute.append(r)
        assert {r.model_id for r in front} == {r.model_id for r in brute}

    def test_front_mutual_nondomination_and_coverage(self):
        rng = np.random.default_rng(20)
        reports = [
            self.report(float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.01, 1.0)), f"m{i}")
            for i in range(60)
        ]
        front = pareto_front(reports)
        for a in front:
            for b in front:
                if a is b:
                    continue
                assert not (
                    b.rmse <= a.rmse
                    and b.fit_time_s <= a.fit_time_s
                    and (b.rmse < a.rmse or b.fit_time_s < a.fit_time_s)
                )
        front_ids = {r.model_id for r in front}
        for r in reports:
            if r.model_id in front_ids:
                continue
            assert any(
                o.rmse <= r.rmse
                and o.fit_time_s <= r.fit_time_s
                and (o.rmse < r.rmse or o.fit_time_s < r.fit_time_s)
                for o in front
            )


class TestSelectDefault:
    def test_poly55_when_cheapest_submillimeter(self):
        reports = [
            FitReport("poly11", 1, 1, 4, 3.5, 0.001),
            FitReport("poly33", 3, 3, 16, 1.2, 0.004),
            FitReport("poly55", 5, 5, 36, 0.6, 0.008),
            FitReport("poly77", 7, 7, 64, 0.58, 0.05),
            FitReport("poly1010", 10, 10, 121, 0.55, 0.4),
        ]
        assert select_default(reports, 1.0) == "poly55"

    def test_single_qualifier(self):
        reports = [FitReport("poly22", 2, 2, 9, 0.4, 0.01)]
        assert select_default(reports) == "poly22"

    def test_matches_filter_argmin_oracle(self):
        rng = np.random.default_rng(30)
        reports = [
            FitReport(f"m{i}", 1, 1, int(rng.integers(4, 40)),
                      float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.001, 0.5)))
            for i in range(50)
        ]
        ceiling = 1.0
        try:
            got = select_default(reports, ceiling)
        except SelectionError:
            got = None
        front = pareto_front(reports)
        cands = [r for r in front if r.rmse < ceiling]
        expected = (
            min(cands, key=lambda r: (r.fit_time_s, r.coeff_count, r.model_id)).model_id
            if cands
            else None
        )
        assert got == expected

    def test_nothing_qualifies(self):
        reports = [FitReport("poly11", 1, 1, 4, 5.0, 0.001)]
        with pytest.raises(SelectionError):
            select_default(reports, 1.0)


class TestInvariants:
    def test_translation_equivariance(self):
        rng = np.random.default_rng(2)
        cloud = grid_cloud(lambda x, y: 0.02 * x**2 - 0.01 * x * y, rng=rng, noise=0.05)
        surf = fit_poly(cloud, 3, 3)
        dx, dy, dz = 7.0, -4.0, 2.5
        shifted = PointCloud(cloud.points + [dx, dy, dz])
        surf2 = fit_poly(shifted, 3, 3)
        probe = np.array([[0.0, 0.0], [5.0, 5.0], [-8.0, 3.0]])
        a = evaluate(surf, probe[:, 0], probe[:, 1])
        b = evaluate(surf2, probe[:, 0] + dx, probe[:, 1] + dy)
        np.testing.assert_allclose(b, a + dz, atol=1e-6)

    def test_least_squares_optimality(self):
        # fitted coefficients beat 20 random same-basis perturbations
        rng = np.random.default_rng(77)
        cloud = grid_cloud(lambda x, y: x * 0.3 + y * y * 0.01, rng=rng, noise=0.5)
        surf = fit_poly(cloud, 2, 2)
        base = rmse(surf, cloud)
        for _ in range(20):
            perturbed = surf.__class__(
                degree_x=surf.degree_x,
                degree_y=surf.degree_y,
                cap=surf.cap,
                coeffs=surf.coeffs + rng.normal(0, 0.01, surf.coeffs.shape),
                x_center=surf.x_center,
                x_scale=surf.x_scale,
                y_center=surf.y_center,
                y_scale=surf.y_scale,
                domain=surf.domain,
            )
            assert rmse(perturbed, cloud) >= base - 1e-12

    def test_csv_serialization(self):
        reports = [
            FitReport("poly11", 1, 1, 4, 1.5, 0.001),
            FitReport("poly22", 2, 2, 9, 0.5, 0.002),
        ]
        csv = surface.reports_to_csv(reports)
        lines = csv.strip().splitlines()
        assert lines[0] == "model_id,degree_x,degree_y,coeff_count,rmse_mm,fit_time_s,pareto"
        assert len(lines) == 3
        assert lines[1].startswith("poly11,1,1,4,")
