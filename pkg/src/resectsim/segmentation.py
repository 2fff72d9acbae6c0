"""Synthetic detector and mask/cloud segmentation with the human-override path.

A configurable stand-in replaces the neural detector: it jitters ground-truth
boxes, draws classification scores from a simple score model, and can inject
gross failures (box shifted by >= 25% of the image width with a score below
the 0.70 threshold). Masks come from the phantom's per-pixel class labels
restricted to a box, so clean detections always yield exact-subset masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractViolation, SegmentationFailed
from .geometry import (
    CLASS_CHAR,
    CLASS_IDS,
    CLASS_TRACHEA,
    CLASS_TUMOR,
    BinaryMask,
    BoundingBox2D,
    PointCloud,
    project_depth_to_cloud,
)
from .phantom import Snapshot

DEFAULT_SCORE_THRESHOLD = 0.70
DEFAULT_SUBTRACTION_RADIUS_MM = 0.5
GROSS_SHIFT_FRACTION = 0.25


@dataclass
class DetectorConfig:
    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    jitter_sigma_px: float = 2.0
    score_mu: float = 0.92
    score_sigma: float = 0.04
    fail_score_mu: float = 0.45
    fail_score_sigma: float = 0.08
    failure_prob: dict = field(default_factory=lambda: {"trachea": 0.0, "tumor": 0.0})
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.score_threshold <= 1.0:
            raise ContractViolation("score threshold must lie in (0, 1]")
        if self.jitter_sigma_px < 0:
            raise ContractViolation("jitter sigma must be >= 0")


@dataclass
class SegmentationResult:
    trachea_cloud: PointCloud
    tumor_cloud: PointCloud
    boxes_used: list[BoundingBox2D]
    needs_human: bool
    source: str  # "auto" | "human"


def ground_truth_boxes(snapshot: Snapshot) -> dict[str, BoundingBox2D]:
    """Tight boxes of the trachea/tumor label footprints; score 1.0."""
    out = {}
    for name in ("trachea", "tumor"):
        cid = CLASS_IDS[name]
        rows, cols = np.nonzero(snapshot.labels == cid)
        if rows.size == 0:
            continue
        out[name] = BoundingBox2D(
            u_min=float(cols.min()),
            v_min=float(rows.min()),
            u_max=float(cols.max() + 1),
            v_max=float(rows.max() + 1),
            cls=name,
            cls_score=1.0,
        )
    return out


def _clip_box(b: BoundingBox2D, width: int, height: int) -> BoundingBox2D:
    u0 = min(max(b.u_min, 0.0), width - 2.0)
    v0 = min(max(b.v_min, 0.0), height - 2.0)
    u1 = max(min(b.u_max, float(width)), u0 + 1.0)
    v1 = max(min(b.v_max, float(height)), v0 + 1.0)
    return BoundingBox2D(u0, v0, u1, v1, b.cls, b.cls_score, b.source)


def detect(snapshot: Snapshot, config: DetectorConfig,
           rng: np.random.Generator | None = None) -> list[BoundingBox2D]:
    """Jittered ground-truth boxes with synthetic classification scores.

    Deterministic for a fixed seed; pass a per-cycle generator for runs. With
    the configured per-class failure probability a box is grossly wrong
    (shifted by >= 25% of the image width) and scored below the threshold.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    w, h = snapshot.depth.width, snapshot.depth.height
    boxes = []
    for name, gt in ground_truth_boxes(snapshot).items():
        fail = rng.random() < config.failure_prob.get(name, 0.0)
        du, dv = rng.normal(0.0, config.jitter_sigma_px, 2) if config.jitter_sigma_px > 0 else (0.0, 0.0)
        du2, dv2 = rng.normal(0.0, config.jitter_sigma_px, 2) if config.jitter_sigma_px > 0 else (0.0, 0.0)
        if fail:
            shift = GROSS_SHIFT_FRACTION * w + abs(rng.normal(0.0, 0.05 * w))
            direction = rng.choice([-1.0, 1.0])
            du += direction * shift
            du2 += direction * shift
            score = float(np.clip(rng.normal(config.fail_score_mu, config.fail_score_sigma), 0.01, config.score_threshold - 0.01))
        else:
            score = float(np.clip(rng.normal(config.score_mu, config.score_sigma), 0.01, 1.0))
        box = BoundingBox2D(
            gt.u_min + du, gt.v_min + dv, gt.u_max + du2, gt.v_max + dv2,
            cls=name, cls_score=score,
        ) if gt.u_min + du < gt.u_max + du2 and gt.v_min + dv < gt.v_max + dv2 else gt
        boxes.append(_clip_box(box, w, h))
    return boxes


def mask_from_box(snapshot: Snapshot, box: BoundingBox2D) -> BinaryMask:
    """Pixels inside the box whose label equals the box class."""
    w, h = snapshot.depth.width, snapshot.depth.height
    if box.u_min < 0 or box.v_min < 0 or box.u_max > w or box.v_max > h:
        raise ContractViolation("box extends past the image bounds")
    cid = CLASS_IDS[box.cls]
    bits = np.zeros((h, w), dtype=bool)
    r0, r1 = int(np.floor(box.v_min)), int(np.ceil(box.v_max))
    c0, c1 = int(np.floor(box.u_min)), int(np.ceil(box.u_max))
    window = snapshot.labels[r0:r1, c0:c1] == cid
    bits[r0:r1, c0:c1] = window
    return BinaryMask(w, h, bits)


def _dedupe(boxes: list[BoundingBox2D]) -> dict[str, BoundingBox2D]:
    """Keep the highest-scoring box per class (detector NMS behavior)."""
    by_class: dict[str, BoundingBox2D] = {}
    for b in boxes:
        cur = by_class.get(b.cls)
        if cur is None or b.cls_score > cur.cls_score:
            by_class[b.cls] = b
    return by_class


def segment(
    snapshot: Snapshot,
    boxes: list[BoundingBox2D],
    subtraction_radius: float = DEFAULT_SUBTRACTION_RADIUS_MM,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
) -> SegmentationResult:
    """Masked-depth projection per class plus tumor-from-trachea subtraction.

    needs_human is true exactly when an auto box scores below the threshold or
    a class is missing; human-drawn boxes bypass the score check entirely.
    """
    by_class = _dedupe(boxes)
    needs_human = False
    for name in ("trachea", "tumor"):
        b = by_class.get(name)
        if b is None:
            needs_human = True
        elif b.source != "human" and b.cls_score < score_threshold:
            needs_human = True

    clouds = {}
    for name, b in by_class.items():
        mask = mask_from_box(snapshot, b)
        clouds[name] = project_depth_to_cloud(snapshot.depth, mask, snapshot.intrinsics)

    trachea = clouds.get("trachea", PointCloud.empty())
    tumor = clouds.get("tumor", PointCloud.empty())
    if len(trachea) and len(tumor):
        tree = cKDTree(tumor.points)
        dist, _ = tree.query(trachea.points, k=1)
        trachea = trachea.select(dist > subtraction_radius)

    source = "human" if by_class and all(b.source == "human" for b in by_class.values()) else "auto"
    return SegmentationResult(
        trachea_cloud=trachea,
        tumor_cloud=tumor,
        boxes_used=list(by_class.values()),
        needs_human=needs_human,
        source=source,
    )


def require_trachea(result: SegmentationResult) -> None:
    if len(result.trachea_cloud) == 0:
        raise SegmentationFailed("no trachea points available and no human override")


def corrupt_boxes_with_shift(
    snapshot: Snapshot, boxes: list[BoundingBox2D], shift_mm: float, depth_hint_mm: float
) -> tuple[list[BoundingBox2D], BinaryMask | None]:
    """Fault injection for gate tests: shift both boxes and emulate the
    resulting mis-segmentation.

    A globally mislocalized detection shifts every box prompt, and a shifted
    prompt makes the mask model absorb whatever tissue is prominent inside it;
    tumor/char pixels inside the shifted trachea box are misattributed to the
    trachea mask, while the shifted tumor box no longer covers the tumor strip
    that would have shielded them via subtraction. Returns the corrupted
    boxes and the replacement trachea mask. Scores are left untouched: the
    fault is subtle enough to slip past the score gate, which is exactly what
    the RMSE gate exists to catch.
    """
    intr = snapshot.intrinsics
    shift_px = shift_mm * intr.f_y / max(depth_hint_mm, 1e-6)
    w, h = snapshot.depth.width, snapshot.depth.height
    out = []
    mask = None
    for b in boxes:
        shifted = _clip_box(
            BoundingBox2D(
                b.u_min, b.v_min + shift_px, b.u_max, b.v_max + shift_px,
                cls=b.cls, cls_score=b.cls_score, source=b.source,
            ),
            w, h,
        )
        out.append(shifted)
        if b.cls == "trachea":
            bits = np.zeros((h, w), dtype=bool)
            r0, r1 = int(np.floor(shifted.v_min)), int(np.ceil(shifted.v_max))
            c0, c1 = int(np.floor(shifted.u_min)), int(np.ceil(shifted.u_max))
            window = snapshot.labels[r0:r1, c0:c1]
            bits[r0:r1, c0:c1] = (
                (window == CLASS_TRACHEA) | (window == CLASS_TUMOR) | (window == CLASS_CHAR)
            )
            mask = BinaryMask(w, h, bits)
    return out, mask


def segment_with_mask_override(
    snapshot: Snapshot,
    boxes: list[BoundingBox2D],
    trachea_mask: BinaryMask,
    subtraction_radius: float = DEFAULT_SUBTRACTION_RADIUS_MM,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
) -> SegmentationResult:
    """segment() but with an explicit (corrupted) trachea mask."""
    result = segment(snapshot, boxes, subtraction_radius, score_threshold)
    trachea = project_depth_to_cloud(snapshot.depth, trachea_mask, snapshot.intrinsics)
    tumor = result.tumor_cloud
    if len(trachea) and len(tumor):
        tree = cKDTree(tumor.points)
        dist, _ = tree.query(trachea.points, k=1)
        trachea = trachea.select(dist > subtraction_radius)
    return SegmentationResult(
        trachea_cloud=trachea,
        tumor_cloud=tumor,
        boxes_used=result.boxes_used,
        needs_human=result.needs_human,
        source=result.source,
    )
