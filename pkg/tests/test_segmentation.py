import numpy as np
import pytest

from resectsim import segmentation
from resectsim.errors import ContractViolation, SegmentationFailed
from resectsim.geometry import (
    CLASS_TRACHEA,
    CLASS_TUMOR,
    BoundingBox2D,
    bbox_iou,
)
from resectsim.segmentation import (
    DetectorConfig,
    corrupt_boxes_with_shift,
    detect,
    ground_truth_boxes,
    mask_from_box,
    require_trachea,
    segment,
    segment_with_mask_override,
)


class TestDetect:
    def test_zero_jitter_matches_ground_truth(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        cfg = DetectorConfig(jitter_sigma_px=0.0, seed=1)
        boxes = detect(snap, cfg)
        gt = ground_truth_boxes(snap)
        assert len(boxes) == 2
        for b in boxes:
            assert bbox_iou(b, gt[b.cls]) == 1.0

    def test_forced_failure_scores_below_threshold(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        cfg = DetectorConfig(
            jitter_sigma_px=0.0,
            failure_prob={"trachea": 1.0, "tumor": 0.0},
            seed=5,
        )
        boxes = detect(snap, cfg)
        by_cls = {b.cls: b for b in boxes}
        assert by_cls["trachea"].cls_score < 0.70
        gt = ground_truth_boxes(snap)
        # grossly wrong: shifted at least 25% of the image width
        shift = abs(by_cls["trachea"].u_min - gt["trachea"].u_min)
        assert shift >= 0.25 * snap.depth.width - 1e-9 or by_cls["trachea"].u_min == 0.0
        result = segment(snap, boxes)
        assert result.needs_human

    def test_deterministic_for_fixed_seed(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        cfg = DetectorConfig(jitter_sigma_px=3.0, seed=9)
        a = detect(snap, cfg)
        b = detect(snap, cfg)
        assert [x.to_dict() for x in a] == [y.to_dict() for y in b]

    def test_jitter_mean_iou_matches_monte_carlo_oracle(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        sigma = 5.0
        cfg = DetectorConfig(jitter_sigma_px=sigma, seed=100)
        rng = np.random.default_rng(100)
        vals = []
        for _ in range(500):
            boxes = detect(snap, cfg, rng)
            gt = ground_truth_boxes(snap)
            vals.append(np.mean([bbox_iou(b, gt[b.cls]) for b in boxes]))
        observed = float(np.mean(vals))

        # independent re-simulation of the jitter-and-clip process
        oracle_rng = np.random.default_rng(4242)
        gt = ground_truth_boxes(snap)
        w, h = snap.depth.width, snap.depth.height
        sims = []
        for _ in range(4000):
            per_box = []
            for b in gt.values():
                du, dv = oracle_rng.normal(0, sigma, 2)
                du2, dv2 = oracle_rng.normal(0, sigma, 2)
                u0 = min(max(b.u_min + du, 0.0), w - 2.0)
                v0 = min(max(b.v_min + dv, 0.0), h - 2.0)
                u1 = max(min(b.u_max + du2, float(w)), u0 + 1.0)
                v1 = max(min(b.v_max + dv2, float(h)), v0 + 1.0)
                iw = max(0.0, min(u1, b.u_max) - max(u0, b.u_min))
                ih = max(0.0, min(v1, b.v_max) - max(v0, b.v_min))
                inter = iw * ih
                union = (u1 - u0) * (v1 - v0) + b.area - inter
                per_box.append(inter / union)
            sims.append(np.mean(per_box))
        assert abs(observed - float(np.mean(sims))) < 0.02


class TestMaskFromBox:
    def test_full_image_box_equals_class_footprint(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        w, h = snap.depth.width, snap.depth.height
        box = BoundingBox2D(0, 0, w, h, cls="tumor", cls_score=1.0)
        mask = mask_from_box(snap, box)
        np.testing.assert_array_equal(mask.bits, snap.labels == CLASS_TUMOR)

    def test_background_region_box_is_empty(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        box = BoundingBox2D(0, 0, 4, 4, cls="tumor", cls_score=1.0)
        assert mask_from_box(snap, box).bits.sum() == 0

    def test_half_box_matches_pixel_scan(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        gt = ground_truth_boxes(snap)["tumor"]
        half = BoundingBox2D(
            gt.u_min, gt.v_min, (gt.u_min + gt.u_max) / 2, gt.v_max,
            cls="tumor", cls_score=1.0,
        )
        mask = mask_from_box(snap, half)
        expected = np.zeros_like(mask.bits)
        for v in range(snap.depth.height):
            for u in range(snap.depth.width):
                if (
                    half.u_min <= u < half.u_max
                    and half.v_min <= v < half.v_max
                    and snap.labels[v, u] == CLASS_TUMOR
                ):
                    expected[v, u] = True
        np.testing.assert_array_equal(mask.bits, expected)

    def test_out_of_bounds_box_rejected(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        box = BoundingBox2D(-5, 0, 10, 10, cls="tumor", cls_score=1.0)
        with pytest.raises(ContractViolation):
            mask_from_box(snap, box)


class TestSegment:
    def test_point_counts_match_pixel_oracle(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        gt = list(ground_truth_boxes(snap).values())
        result = segment(snap, gt, subtraction_radius=0.5)
        # pixel-scan oracle + brute-force subtraction casualties
        tumor_px = int(np.count_nonzero(snap.labels == CLASS_TUMOR))
        assert len(result.tumor_cloud) == tumor_px
        trachea_px = int(np.count_nonzero(snap.labels == CLASS_TRACHEA))
        tr = result.tumor_cloud.points
        mask = snap.labels == CLASS_TRACHEA
        vs, us = np.nonzero(mask)
        z = snap.depth.depth[vs, us]
        x = (us - snap.intrinsics.c_x) * z / snap.intrinsics.f_x
        y = (vs - snap.intrinsics.c_y) * z / snap.intrinsics.f_y
        pts = np.column_stack([x, y, z])
        casualties = 0
        for i in range(0, len(pts), 4096):
            block = pts[i : i + 4096]
            d2 = ((block[:, None, :] - tr[None, :, :]) ** 2).sum(axis=2)
            casualties += int((d2.min(axis=1) <= 0.25).sum())
        assert len(result.trachea_cloud) == trachea_px - casualties
        assert not result.needs_human

    def test_missing_tumor_box_needs_human(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        gt = ground_truth_boxes(snap)
        result = segment(snap, [gt["trachea"]])
        assert result.needs_human

    def test_human_boxes_bypass_score_gate(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        gt = ground_truth_boxes(snap)
        low = [
            BoundingBox2D(b.u_min, b.v_min, b.u_max, b.v_max, cls=b.cls,
                          cls_score=0.1, source="human")
            for b in gt.values()
        ]
        result = segment(snap, low)
        assert not result.needs_human
        assert result.source == "human"

    def test_score_gating_exact(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        gt = ground_truth_boxes(snap)

        def with_scores(s_tr, s_tu):
            return [
                BoundingBox2D(b.u_min, b.v_min, b.u_max, b.v_max, cls=b.cls,
                              cls_score=s_tr if b.cls == "trachea" else s_tu)
                for b in gt.values()
            ]

        assert not segment(snap, with_scores(0.70, 0.70)).needs_human
        assert segment(snap, with_scores(0.699, 0.9)).needs_human
        assert segment(snap, with_scores(0.9, 0.699)).needs_human

    def test_subtraction_safety_invariant(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        gt = list(ground_truth_boxes(snap).values())
        radius = 0.5
        result = segment(snap, gt, subtraction_radius=radius)
        tr = result.trachea_cloud.points
        tu = result.tumor_cloud.points
        for i in range(0, len(tr), 4096):
            block = tr[i : i + 4096]
            d2 = ((block[:, None, :] - tu[None, :, :]) ** 2).sum(axis=2)
            assert np.all(np.sqrt(d2.min(axis=1)) > radius)

    def test_duplicate_class_keeps_highest_score(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        gt = ground_truth_boxes(snap)
        dup = [
            gt["trachea"],
            BoundingBox2D(2, 2, 30, 30, cls="trachea", cls_score=0.2),
            gt["tumor"],
        ]
        result = segment(snap, dup)
        used = {b.cls: b for b in result.boxes_used}
        assert used["trachea"].cls_score == 1.0

    def test_require_trachea(self, seed1_snapshot):
        _, snap, _, _ = seed1_snapshot
        gt = ground_truth_boxes(snap)
        result = segment(snap, [gt["tumor"]])
        with pytest.raises(SegmentationFailed):
            require_trachea(result)


class TestCorruption:
    def test_shift_injects_off_surface_points(self, seed1_snapshot):
        scene, snap, pose, intr = seed1_snapshot
        gt = list(ground_truth_boxes(snap).values())
        boxes, mask = corrupt_boxes_with_shift(snap, gt, 10.0, 320.0)
        assert mask is not None
        result = segment_with_mask_override(snap, boxes, mask)
        from resectsim.geometry import transform_cloud

        world = transform_cloud(result.trachea_cloud, pose)
        s = scene.surface_height(world.points[:, 0], world.points[:, 1])
        dev = world.points[:, 2] - s
        # the corrupted cloud carries tumor-height outliers the clean one never has
        assert dev.max() > 2.0
