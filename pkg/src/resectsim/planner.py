"""Electrocautery pitch estimation and clearance-offset cut trajectory planning.

Cut paths run along X at fixed Y stations, riding a fixed clearance above the
fitted trachea surface. Stations use cell-center spacing: for a tumor spanning
L along Y, path k sits at y_min + (k + 0.5) * L / cut_count. Each path is the
forward sweep plus its exact reverse (retrace); the pulled-back home position
is stored on the plan, not appended to the paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ComparisonError, ContractViolation, EstimationError, PlanningError
from .geometry import Point3, PointCloud
from .surface import PolySurface, evaluate

DEFAULT_PITCH_DEG = 28.3
DEFAULT_CLEARANCE_MM = 1.0
DEFAULT_SPEED_MM_S = 2.0
DEFAULT_CUT_COUNT = 6
DEFAULT_WAYPOINT_SPACING_MM = 0.5
DEFAULT_LATERAL_MARGIN_MM = 3.0


@dataclass(frozen=True)
class Waypoint:
    position: Point3
    pitch_deg: float
    direction: str  # "+x" | "-x"
    t_s: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.pitch_deg < 90.0:
            raise ContractViolation(f"pitch {self.pitch_deg} outside (0, 90) degrees")
        if self.direction not in ("+x", "-x"):
            raise ContractViolation(f"bad travel direction {self.direction!r}")


@dataclass
class PitchTable:
    """Per-demonstration, per-cut pitch angles in degrees."""

    angles: list[list[float]]

    def __post_init__(self):
        for row in self.angles:
            for a in row:
                if not 0.0 < a < 90.0:
                    raise ContractViolation(f"pitch entry {a} outside (0, 90)")

    def flat(self) -> np.ndarray:
        return np.array([a for row in self.angles for a in row], dtype=float)


@dataclass
class PlanConfig:
    cut_count: int = DEFAULT_CUT_COUNT
    clearance_mm: float = DEFAULT_CLEARANCE_MM
    pitch_deg: float = DEFAULT_PITCH_DEG
    speed_mm_s: float = DEFAULT_SPEED_MM_S
    lateral_margin_mm: float = DEFAULT_LATERAL_MARGIN_MM
    waypoint_spacing_mm: float = DEFAULT_WAYPOINT_SPACING_MM
    power_w: float = 24.0  # inert; carried for log fidelity only


@dataclass(frozen=True)
class PlanFrame:
    """Frozen station/x-extent frame so successive plans stay comparable."""

    y_min: float
    tumor_extent: float
    x_lo: float
    x_hi: float

    def stations(self, cut_count: int) -> np.ndarray:
        step = self.tumor_extent / cut_count
        return self.y_min + (np.arange(cut_count) + 0.5) * step


@dataclass
class CutPlan:
    paths: list[list[Waypoint]]
    clearance_mm: float
    pitch_deg: float
    speed_mm_s: float
    tumor_extent_mm: float
    stations_mm: list[float]
    home: Point3
    frame: PlanFrame

    @property
    def station_band_halfwidth(self) -> float:
        return self.tumor_extent_mm / (2 * len(self.paths))

    def band_for(self, index: int) -> tuple[float, float]:
        """Y interval a cut is responsible for. The outermost bands extend past
        the measured tumor extent: the camera under-measures the footprint rim
        by a sliver, and the first/last blade pass sweeps through it."""
        s = self.stations_mm[index]
        bhw = self.station_band_halfwidth
        lo = -1e9 if index == 0 else s - bhw
        hi = 1e9 if index == len(self.paths) - 1 else s + bhw
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "clearance_mm": self.clearance_mm,
            "pitch_deg": self.pitch_deg,
            "speed_mm_s": self.speed_mm_s,
            "L_mm": self.tumor_extent_mm,
            "stations_mm": list(self.stations_mm),
            "paths": [
                [
                    {
                        "x": wp.position.x,
                        "y": wp.position.y,
                        "z": wp.position.z,
                        "t_s": wp.t_s,
                        "dir": wp.direction,
                    }
                    for wp in path
                ]
                for path in self.paths
            ],
            "home": {"x": self.home.x, "y": self.home.y, "z": self.home.z},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CutPlan":
        paths = []
        for raw in d["paths"]:
            paths.append(
                [
                    Waypoint(
                        Point3(w["x"], w["y"], w["z"]),
                        d["pitch_deg"],
                        w["dir"],
                        w["t_s"],
                    )
                    for w in raw
                ]
            )
        stations = list(d["stations_mm"])
        xs = [w["x"] for path in d["paths"] for w in path]
        frame = PlanFrame(
            y_min=stations[0] - d["L_mm"] / (2 * len(paths)) if paths else 0.0,
            tumor_extent=d["L_mm"],
            x_lo=min(xs) if xs else 0.0,
            x_hi=max(xs) if xs else 0.0,
        )
        return cls(
            paths=paths,
            clearance_mm=d["clearance_mm"],
            pitch_deg=d["pitch_deg"],
            speed_mm_s=d["speed_mm_s"],
            tumor_extent_mm=d["L_mm"],
            stations_mm=stations,
            home=Point3(d["home"]["x"], d["home"]["y"], d["home"]["z"]),
            frame=frame,
        )


def estimate_pitch(demo_cloud: PointCloud) -> float:
    """Tool pitch from a demonstration cloud: slope of the z-vs-x line fit.

    Returns atan(|slope|) in degrees. Degenerate point sets (fewer than two
    distinct x, or a vertical tool) raise EstimationError.
    """
    pts = demo_cloud.points
    if pts.shape[0] < 2:
        raise EstimationError("need at least 2 points to fit the tool line")
    x, z = pts[:, 0], pts[:, 2]
    x_span = x.max() - x.min()
    if x_span < 1e-9:
        raise EstimationError("tool points have no x extent (vertical/degenerate)")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, _), *_ = np.linalg.lstsq(A, z, rcond=None)
    return math.degrees(math.atan(abs(slope)))


def summarize_pitch(table: PitchTable) -> tuple[float, float]:
    """Arithmetic mean and sample (n-1) standard deviation of all entries."""
    vals = table.flat()
    if vals.size < 2:
        raise ContractViolation("pitch summary needs at least 2 entries")
    return float(vals.mean()), float(vals.std(ddof=1))


def plan_cuts(
    surface: PolySurface,
    tumor_cloud: PointCloud,
    config: PlanConfig | None = None,
    frame: PlanFrame | None = None,
) -> CutPlan:
    """Generate the cut-path schedule over the fitted surface.

    Without a frame, stations and the x sweep extent are measured from the
    tumor cloud; passing the frame of an earlier plan freezes the schedule so
    only the z profile (from the fresh surface fit) changes between cycles.
    """
    cfg = config or PlanConfig()
    if frame is None:
        if len(tumor_cloud) == 0:
            raise PlanningError("tumor cloud is empty")
        pts = tumor_cloud.points
        L = float(pts[:, 1].max() - pts[:, 1].min())
        x_lo = float(pts[:, 0].min() - cfg.lateral_margin_mm)
        x_hi = float(pts[:, 0].max() + cfg.lateral_margin_mm)
        frame = PlanFrame(float(pts[:, 1].min()), L, x_lo, x_hi)
    if frame.tumor_extent < 2 * cfg.waypoint_spacing_mm:
        raise PlanningError(
            f"tumor extent {frame.tumor_extent:.3f} mm below 2x waypoint spacing"
        )
    if frame.x_hi - frame.x_lo < 2 * cfg.waypoint_spacing_mm:
        raise PlanningError("tumor x extent below 2x waypoint spacing")

    stations = frame.stations(cfg.cut_count)
    n_wp = max(2, int(round((frame.x_hi - frame.x_lo) / cfg.waypoint_spacing_mm)) + 1)
    xs = np.linspace(frame.x_lo, frame.x_hi, n_wp)

    paths: list[list[Waypoint]] = []
    max_z = -np.inf
    for station in stations:
        zs = evaluate(surface, xs, np.full_like(xs, station)) + cfg.clearance_mm
        max_z = max(max_z, float(zs.max()))
        forward = [
            (float(x), float(station), float(z), "+x") for x, z in zip(xs, zs)
        ]
        retrace = [(x, y, z, "-x") for (x, y, z, _) in reversed(forward)]
        seq = forward + retrace
        # Cumulative arc length at constant speed drives the timestamps.
        path = []
        t = 0.0
        prev = None
        for x, y, z, d in seq:
            if prev is not None:
                t += math.dist(prev, (x, y, z)) / cfg.speed_mm_s
            path.append(Waypoint(Point3(x, y, z), cfg.pitch_deg, d, t))
            prev = (x, y, z)
        paths.append(path)

    home = Point3(frame.x_lo - 15.0, float(np.mean(stations)), max_z + 25.0)
    return CutPlan(
        paths=paths,
        clearance_mm=cfg.clearance_mm,
        pitch_deg=cfg.pitch_deg,
        speed_mm_s=cfg.speed_mm_s,
        tumor_extent_mm=frame.tumor_extent,
        stations_mm=[float(s) for s in stations],
        home=home,
        frame=frame,
    )


def _path_profile(plan: CutPlan, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward-half (x, z) profile of one path, sorted by x."""
    if not 0 <= index < len(plan.paths):
        raise ComparisonError(f"plan has no path index {index}")
    path = plan.paths[index]
    half = path[: len(path) // 2] if len(path) >= 2 else path
    xs = np.array([wp.position.x for wp in half])
    zs = np.array([wp.position.z for wp in half])
    order = np.argsort(xs)
    return xs[order], zs[order]


def plan_consistency_rmse(
    plan_prev_prediction: CutPlan, plan_current: CutPlan, station_index: int
) -> float:
    """RMS z difference of the shared cut path, resampled onto common x.

    Both plans must carry the given station schedule index; non-overlapping
    x ranges raise ComparisonError (treated as gate-triggering upstream).
    """
    xa, za = _path_profile(plan_prev_prediction, station_index)
    xb, zb = _path_profile(plan_current, station_index)
    lo = max(xa.min(), xb.min())
    hi = min(xa.max(), xb.max())
    if hi <= lo:
        raise ComparisonError("cut paths share no x overlap")
    # Common stations = the current plan's waypoints inside the overlap, so
    # identically-gridded plans compare waypoint-for-waypoint exactly.
    sel = (xb >= lo) & (xb <= hi)
    xs = xb[sel]
    za_i = np.interp(xs, xa, za)
    return float(np.sqrt(np.mean((za_i - zb[sel]) ** 2)))
