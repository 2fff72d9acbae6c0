"""Post-run metrics: removal percentage, post-cut RMSE, lumen reopening, IoU stats."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, MetricUndefined
from .phantom import SceneState
from .surface import PolySurface, evaluate

DEFAULT_NOMINAL_DIAMETER_MM = 20.0
SUCCESS_THRESHOLD_PCT = 50.0


@dataclass
class IouStat:
    mean: float
    std: float
    n: int

    @property
    def degenerate(self) -> bool:
        return self.n < 2


@dataclass
class ProcedureMetrics:
    removal_pct: float
    postcut_rmse_mm: float | None
    lumen_pct: float
    perforated: bool
    success: bool
    iou: dict[str, IouStat]

    def to_dict(self) -> dict:
        return {
            "removal_pct": self.removal_pct,
            "postcut_rmse_mm": self.postcut_rmse_mm,
            "lumen_pct": self.lumen_pct,
            "perforated": self.perforated,
            "success": self.success,
            "iou": {
                name: {"mean": s.mean, "std": s.std} for name, s in self.iou.items()
            },
        }


def removal_percent(initial_volume: float, removed_volume: float) -> float:
    """100 * removed / initial; over-resection of trachea material can exceed 100."""
    if initial_volume <= 0:
        raise ContractViolation("initial volume must be positive")
    return 100.0 * removed_volume / initial_volume


def postcut_rmse_points(char_points: np.ndarray, goal_surface: PolySurface,
                        clearance: float) -> float:
    """RMS of char z against the goal surface (fit raised by the clearance)."""
    pts = np.asarray(char_points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise MetricUndefined("no char points: post-cut RMSE undefined")
    goal = evaluate(goal_surface, pts[:, 0], pts[:, 1]) + clearance
    return float(np.sqrt(np.mean((pts[:, 2] - goal) ** 2)))


def postcut_rmse(scene: SceneState, goal_surface: PolySurface, clearance: float) -> float:
    """Post-cut RMSE over remaining char-voxel centroids."""
    char = scene.tumor.char & scene.tumor.occupancy
    if not char.any():
        raise MetricUndefined("scene has no char voxels")
    return postcut_rmse_points(scene.tumor.occupied_centers(char), goal_surface, clearance)


def lumen_reopening(scene: SceneState, nominal_diameter: float = DEFAULT_NOMINAL_DIAMETER_MM) -> float:
    """Minimum free vertical aperture across Y stations as % of nominal diameter.

    Aperture at a station is the nominal diameter minus the tallest remaining
    obstruction above the trachea surface, sampled on the voxel grid.
    """
    if nominal_diameter <= 0:
        raise ContractViolation("nominal diameter must be positive")
    grid = scene.tumor
    occ = grid.occupancy
    if not occ.any():
        return 100.0
    xs = grid.axis_centers(0)
    ys = grid.axis_centers(1)
    zs = grid.axis_centers(2)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    s_vals = scene.surface_height(gx, gy)
    zeta = zs[None, None, :] - s_vals[:, :, None]
    obstruction = np.where(occ, zeta, 0.0)
    per_station = obstruction.max(axis=(0, 2))  # tallest obstruction per Y row
    aperture = np.clip(nominal_diameter - per_station, 0.0, nominal_diameter)
    return float(100.0 * aperture.min() / nominal_diameter)


def _events_of(run) -> list[dict]:
    return run.events if hasattr(run, "events") else list(run)


def iou_stats(run) -> dict[str, IouStat]:
    """Per-class mean and sample std of detection IoU across cycles.

    A single sample has an undefined sample std; it is reported as 0 with the
    stat flagged degenerate.
    """
    events = _events_of(run)
    per_class: dict[str, list[float]] = {}
    for ev in events:
        if ev["kind"] != "detection":
            continue
        for name, value in ev["payload"].get("iou", {}).items():
            per_class.setdefault(name, []).append(float(value))
    if not per_class:
        raise ContractViolation("run contains no detection events")
    out = {}
    for name, vals in per_class.items():
        arr = np.array(vals)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out[name] = IouStat(mean=float(arr.mean()), std=std, n=arr.size)
    return out


def compute_metrics(
    scene: SceneState,
    goal_surface: PolySurface | None,
    events: list[dict],
    clearance: float = 1.0,
    nominal_diameter: float = DEFAULT_NOMINAL_DIAMETER_MM,
) -> dict:
    """Assemble the metrics.json document for a finished run."""
    removal = removal_percent(scene.initial_tumor_volume, scene.cumulative_removed_volume)
    perforated = any(
        ev["kind"] == "cut" and ev["payload"].get("perforated") for ev in events
    )
    rmse_val = None
    if goal_surface is not None:
        try:
            rmse_val = postcut_rmse(scene, goal_surface, clearance)
        except MetricUndefined:
            rmse_val = None
    lumen = lumen_reopening(scene, nominal_diameter)
    try:
        iou = iou_stats(events)
    except ContractViolation:
        iou = {}
    metrics = ProcedureMetrics(
        removal_pct=removal,
        postcut_rmse_mm=rmse_val,
        lumen_pct=lumen,
        perforated=perforated,
        success=lumen > SUCCESS_THRESHOLD_PCT,
        iou=iou,
    )
    doc = metrics.to_dict()
    for name in ("trachea", "tumor"):
        doc["iou"].setdefault(name, {"mean": 0.0, "std": 0.0})
    return doc


def format_metrics_table(doc: dict) -> str:
    """Fixed-order human-readable table for the eval CLI."""
    lines = [
        f"{'removal_pct':<18} {doc['removal_pct']:.2f}",
        f"{'postcut_rmse_mm':<18} "
        + (f"{doc['postcut_rmse_mm']:.3f}" if doc["postcut_rmse_mm"] is not None else "n/a"),
        f"{'lumen_pct':<18} {doc['lumen_pct']:.2f}",
        f"{'perforated':<18} {doc['perforated']}",
        f"{'success':<18} {doc['success']}",
    ]
    for name in ("trachea", "tumor"):
        s = doc["iou"].get(name, {"mean": 0.0, "std": 0.0})
        lines.append(f"{'iou_' + name:<18} {s['mean']:.3f} +/- {s['std']:.3f}")
    return "\n".join(lines)
