"""Procedural trachea/tumor phantom, camera rendering, and voxel cut simulation.

The trachea is a convex-up half-pipe segment: z = sqrt(R^2 - x^2) plus smooth
low-amplitude undulation, clipped to a +/-62 degree sector (the extreme edges
of a glued-down half-pipe are neither visible nor cuttable) with a short
linear apron down to the z=0 ground plane so ray casting sees a continuous
world. The tumor is a half-superellipsoid draped vertically onto the surface
and voxelized; draping shears columns vertically, so analytic volumes carry
over exactly.

A cut deletes a kerf-thick, surface-parallel ribbon of voxels along the blade
tip's swept path, optionally extended across the cut's station band (the
region the tensioned flap frees as the blade passes). After each cut, any
connected component of remaining material that no longer touches the
trachea-adjacent glue layer is carried away by the gripper: its volume joins
the removed total, and a component bigger than a few percent of the initial
tumor marks detachment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ContractViolation, EmptySnapshot
from .geometry import (
    CLASS_BACKGROUND,
    CLASS_CHAR,
    CLASS_TRACHEA,
    CLASS_TUMOR,
    CameraIntrinsics,
    DepthImage,
    RigidTransform,
)

ARC_HALF_ANGLE_DEG = 62.0
APRON_WIDTH_MM = 6.0
GLUE_BAND_VOXELS = 2          # attachment layer thickness, in voxels
DETACH_FRACTION = 0.05        # freed component above this fraction => specimen detached
DEFAULT_KERF_MM = 1.0
DEFAULT_RESOLUTION_MM = 0.25

_CONN6 = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class TracheaSpec:
    radius: float = 25.0
    length: float = 75.0
    noise_amp: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.radius <= 0 or self.length <= 0:
            raise ConfigError("trachea radius and length must be positive")
        if self.noise_amp < 0:
            raise ConfigError("noise amplitude must be >= 0")


@dataclass(frozen=True)
class TumorSpec:
    station: float = 37.5      # center along Y
    diameter: float = 20.0     # footprint diameter (X and Y)
    height: float = 12.0
    exp_n: float = 1.0         # vertical profile exponent (1 = ellipsoid)
    exp_e: float = 1.0         # equatorial exponent (1 = circular footprint)
    seed: int = 0

    def __post_init__(self):
        if self.diameter <= 0:
            raise ConfigError("tumor diameter must be positive")
        if self.height < 0:
            raise ConfigError("tumor height must be >= 0")
        if not (0.2 <= self.exp_n <= 2.0 and 0.2 <= self.exp_e <= 2.0):
            raise ConfigError("superellipsoid exponents must lie in [0.2, 2.0]")


class TracheaSurface:
    """Analytic world surface z = S(x, y) with smooth seeded undulation."""

    def __init__(self, spec: TracheaSpec):
        self.spec = spec
        self.half_width = spec.radius * math.sin(math.radians(ARC_HALF_ANGLE_DEG))
        self.edge_drop = spec.radius * math.cos(math.radians(ARC_HALF_ANGLE_DEG))
        rng = np.random.default_rng(spec.seed)
        n_modes = 6
        wavelengths = rng.uniform(18.0, 45.0, n_modes)
        angles = rng.uniform(0.0, np.pi, n_modes)
        self._freq_x = np.cos(angles) / wavelengths
        self._freq_y = np.sin(angles) / wavelengths
        self._phases = rng.uniform(0.0, 2 * np.pi, n_modes)
        amps = rng.uniform(0.5, 1.0, n_modes) * rng.choice([-1.0, 1.0], n_modes)
        total = np.sum(np.abs(amps))
        self._amps = spec.noise_amp * amps / total if total > 0 else amps * 0.0

    def undulation(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        phase = (
            2 * np.pi * (np.multiply.outer(x, self._freq_x) + np.multiply.outer(y, self._freq_y))
            + self._phases
        )
        return np.sum(self._amps * np.cos(phase), axis=-1)

    def dome_height(self, x, y):
        """Dome + undulation, relative to the sector edge resting on the ground."""
        x = np.asarray(x, dtype=float)
        arc = np.sqrt(np.clip(self.spec.radius**2 - x**2, 0.0, None)) - self.edge_drop
        return arc + self.undulation(x, y)

    def height(self, x, y):
        """World surface including the apron and the surrounding ground plane."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        ax = np.abs(x)
        in_y = (y >= 0.0) & (y <= self.spec.length)
        z = np.zeros(x.shape, dtype=float)
        dome = in_y & (ax <= self.half_width)
        if np.any(dome):
            z[dome] = self.dome_height(x[dome], y[dome])
        apron = in_y & (ax > self.half_width) & (ax < self.half_width + APRON_WIDTH_MM)
        if np.any(apron):
            edge = self.dome_height(
                np.sign(x[apron]) * self.half_width, y[apron]
            )
            z[apron] = edge * (1.0 - (ax[apron] - self.half_width) / APRON_WIDTH_MM)
        return z

    def in_footprint(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (np.abs(x) <= self.half_width) & (y >= 0.0) & (y <= self.spec.length)


@dataclass
class VoxelGrid:
    origin: np.ndarray          # world position of the (0,0,0) voxel corner
    resolution: float
    dims: tuple[int, int, int]  # nx, ny, nz
    occupancy: np.ndarray       # bool (nx, ny, nz)
    char: np.ndarray            # bool (nx, ny, nz)

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.dims[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.resolution

    def occupied_volume(self) -> float:
        return float(self.occupancy.sum()) * self.resolution**3

    def occupied_centers(self, where=None) -> np.ndarray:
        mask = self.occupancy if where is None else where
        idx = np.argwhere(mask)
        return self.origin + (idx + 0.5) * self.resolution


@dataclass
class CutOutcome:
    removed_volume: float
    perforated: bool
    char_voxels_added: int
    freed_volume: float = 0.0
    trachea_char_volume: float = 0.0
    detached: bool = False


class SceneState:
    """Mutable phantom world; single-writer (one cut/retract at a time)."""

    def __init__(self, trachea: TracheaSurface, tumor: VoxelGrid,
                 trachea_spec: TracheaSpec, tumor_spec: TumorSpec):
        self.trachea = trachea
        self.tumor = tumor
        self.trachea_spec = trachea_spec
        self.tumor_spec = tumor_spec
        self.initial_tumor_volume = tumor.occupied_volume()
        self.peel_station = float(tumor.origin[1]) - tumor.resolution
        self.detached = False
        self.removed_tumor_volume = 0.0
        self.removed_trachea_volume = 0.0

    @property
    def cumulative_removed_volume(self) -> float:
        return self.removed_tumor_volume + self.removed_trachea_volume

    def surface_height(self, x, y):
        return self.trachea.height(x, y)

    def in_bounds(self, x: float, y: float, z: float) -> bool:
        lim_x = self.trachea.half_width + APRON_WIDTH_MM + 30.0
        return (
            abs(x) <= lim_x
            and -30.0 <= y <= self.trachea_spec.length + 30.0
            and -15.0 <= z <= 400.0
        )

    def visible_voxels(self) -> np.ndarray:
        """Occupied voxels that occlude rays: unpeeled material plus char."""
        ys = self.tumor.axis_centers(1)
        unpeeled = ys >= self.peel_station
        return self.tumor.occupancy & (unpeeled[None, :, None] | self.tumor.char)


def load_phantom_spec(doc: dict) -> tuple[TracheaSpec, TumorSpec, float]:
    """Parse the phantom JSON document {trachea:{...}, tumor:{...}, resolution}."""
    try:
        t = doc["trachea"]
        u = doc["tumor"]
        trachea = TracheaSpec(
            radius=float(t["radius"]),
            length=float(t["length"]),
            noise_amp=float(t["noise_amp"]),
            seed=int(t["seed"]),
        )
        tumor = TumorSpec(
            station=float(u["station"]),
            diameter=float(u["diameter"]),
            height=float(u["height"]),
            exp_n=float(u.get("exp_n", 1.0)),
            exp_e=float(u.get("exp_e", 1.0)),
            seed=int(u["seed"]),
        )
        resolution = float(doc.get("resolution", DEFAULT_RESOLUTION_MM))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed phantom spec: {exc}") from exc
    return trachea, tumor, resolution


def phantom_spec_dict(trachea: TracheaSpec, tumor: TumorSpec, resolution: float) -> dict:
    return {
        "trachea": {
            "radius": trachea.radius,
            "length": trachea.length,
            "noise_amp": trachea.noise_amp,
            "seed": trachea.seed,
        },
        "tumor": {
            "station": tumor.station,
            "diameter": tumor.diameter,
            "height": tumor.height,
            "exp_n": tumor.exp_n,
            "exp_e": tumor.exp_e,
            "seed": tumor.seed,
        },
        "resolution": resolution,
    }


def default_specs(seed: int) -> tuple[TracheaSpec, TumorSpec, float]:
    """Seeded phantom family: diameter varies +/-20%, height +/-25%."""
    rng = np.random.default_rng(9000 + seed)
    trachea = TracheaSpec(seed=1000 + seed)
    tumor = TumorSpec(
        station=37.5 + rng.uniform(-4.0, 4.0),
        diameter=20.0 * (1.0 + rng.uniform(-0.2, 0.2)),
        height=12.0 * (1.0 + rng.uniform(-0.25, 0.25)),
        exp_n=rng.uniform(0.8, 1.0),
        exp_e=rng.uniform(0.85, 1.0),
        seed=2000 + seed,
    )
    return trachea, tumor, DEFAULT_RESOLUTION_MM


def validate_phantom(trachea: TracheaSpec, tumor: TumorSpec) -> TracheaSurface:
    """Geometric compatibility checks shared by generation and the gateway."""
    surface = TracheaSurface(trachea)
    half = tumor.diameter / 2.0
    if tumor.station - half < 0 or tumor.station + half > trachea.length:
        raise ConfigError("tumor footprint extends past the trachea length")
    if half > 0.85 * surface.half_width:
        raise ConfigError("tumor footprint too wide for the trachea sector")
    return surface


def generate_phantom(trachea: TracheaSpec, tumor: TumorSpec,
                     resolution: float = DEFAULT_RESOLUTION_MM) -> SceneState:
    """Build the voxelized scene; deterministic for fixed specs."""
    if not 0.1 <= resolution <= 1.0:
        raise ContractViolation(f"resolution {resolution} outside [0.1, 1.0] mm")
    surface = validate_phantom(trachea, tumor)
    a = b = tumor.diameter / 2.0

    margin = 2 * resolution
    x_lo, x_hi = -a - margin, a + margin
    y_lo, y_hi = tumor.station - b - margin, tumor.station + b + margin
    nx = int(math.ceil((x_hi - x_lo) / resolution))
    ny = int(math.ceil((y_hi - y_lo) / resolution))
    xs = x_lo + (np.arange(nx) + 0.5) * resolution
    ys = y_lo + (np.arange(ny) + 0.5) * resolution

    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    s_vals = surface.height(gx, gy)
    z_lo = float(s_vals.min()) - margin
    z_hi = float(s_vals.max()) + tumor.height + margin
    nz = int(math.ceil((z_hi - z_lo) / resolution))
    zs = z_lo + (np.arange(nz) + 0.5) * resolution

    occupancy = np.zeros((nx, ny, nz), dtype=bool)
    if tumor.height > 0:
        dx = np.abs(gx - 0.0) / a
        dy = np.abs(gy - tumor.station) / b
        rho = (dx ** (2.0 / tumor.exp_e) + dy ** (2.0 / tumor.exp_e)) ** (tumor.exp_e / 2.0)
        inside = rho < 1.0
        cap = np.zeros_like(rho)
        cap[inside] = tumor.height * (
            1.0 - rho[inside] ** (2.0 / tumor.exp_n)
        ) ** (tumor.exp_n / 2.0)
        zeta = zs[None, None, :] - s_vals[:, :, None]
        occupancy = (zeta > 0.0) & (zeta <= cap[:, :, None])

    grid = VoxelGrid(
        origin=np.array([x_lo, y_lo, z_lo]),
        resolution=resolution,
        dims=(nx, ny, nz),
        occupancy=occupancy,
        char=np.zeros((nx, ny, nz), dtype=bool),
    )
    return SceneState(surface, grid, trachea, tumor)


@dataclass
class Snapshot:
    depth: DepthImage
    labels: np.ndarray          # (H, W) uint8 class image
    intrinsics: CameraIntrinsics
    pose: RigidTransform        # world-from-camera

    def __post_init__(self):
        if self.labels.shape != (self.depth.height, self.depth.width):
            raise ContractViolation("label image dims do not match depth image")


def top_down_pose(height_mm: float, x: float = 0.0, y: float = 37.5) -> RigidTransform:
    """Camera straight above (x, y): +X_cam = +X, +Y_cam = -Y, +Z_cam = -Z."""
    R = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    return RigidTransform(R, np.array([x, y, height_mm]))


def default_intrinsics(size: int = 256) -> CameraIntrinsics:
    f = 780.0 * size / 256.0
    return CameraIntrinsics(f, f, (size - 1) / 2.0, (size - 1) / 2.0)


def _ray_aabb(origin, dirs, lo, hi):
    """Slab intersection; returns (t_enter, t_exit) with t_enter > t_exit for misses."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t1 = (lo[:, None] - origin[:, None]) * inv
    t2 = (hi[:, None] - origin[:, None]) * inv
    t_enter = np.nanmax(np.minimum(t1, t2), axis=0)
    t_exit = np.nanmin(np.maximum(t1, t2), axis=0)
    return t_enter, t_exit


def render_snapshot(scene: SceneState, pose: RigidTransform,
                    intrinsics: CameraIntrinsics, size) -> Snapshot:
    """Per-pixel first-hit ray cast against the analytic surface and tumor voxels.

    The ray parameter equals the camera-frame Z coordinate, so surface hits are
    refined by bisection to sub-micron depth accuracy. Voxel hits are refined
    to a fraction of the voxel size. Deterministic for identical inputs.
    """
    if isinstance(size, int):
        w = h = size
    else:
        w, h = size
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    d_cam = np.stack(
        [
            (us - intrinsics.c_x) / intrinsics.f_x,
            (vs - intrinsics.c_y) / intrinsics.f_y,
            np.ones_like(us),
        ]
    ).reshape(3, -1)
    d_world = pose.rotation @ d_cam
    origin = pose.translation
    n_rays = d_world.shape[1]

    # --- analytic surface crossing: coarse scan then bisection on g(s) ---
    # The world surface height is globally bounded, so the first crossing of a
    # descending ray lies inside a short bracket instead of the full ray range.
    s_surface = np.full(n_rays, np.inf)
    dz = d_world[2]
    going_down = dz < -1e-12
    z_max = scene.trachea.spec.radius - scene.trachea.edge_drop + scene.trachea.spec.noise_amp
    s_start = np.full(n_rays, 0.05)
    s_cap = np.full(n_rays, 1200.0)
    s_start[going_down] = np.maximum(
        (origin[2] - z_max - 0.5) / -dz[going_down], 0.05
    )
    s_cap[going_down] = origin[2] / -dz[going_down] + 0.5
    n_coarse = np.where(going_down, 160, 600).max() if not going_down.all() else 160
    steps = np.linspace(0.0, 1.0, int(n_coarse))
    s_lo = np.full(n_rays, np.nan)
    s_hi_b = np.full(n_rays, np.nan)
    found = np.zeros(n_rays, dtype=bool)
    prev_s = s_start.copy()
    prev_g = (
        origin[2]
        + prev_s * dz
        - scene.trachea.height(origin[0] + prev_s * d_world[0], origin[1] + prev_s * d_world[1])
    )
    for k in range(1, len(steps)):
        s_k = s_start + steps[k] * (s_cap - s_start)
        px = origin[0] + s_k * d_world[0]
        py = origin[1] + s_k * d_world[1]
        pz = origin[2] + s_k * dz
        g = pz - scene.trachea.height(px, py)
        cross = (~found) & (prev_g > 0) & (g <= 0)
        s_lo[cross] = prev_s[cross]
        s_hi_b[cross] = s_k[cross]
        found |= cross
        prev_s, prev_g = s_k, g
        if found.all():
            break
    idx = np.nonzero(found)[0]
    if idx.size:
        lo = s_lo[idx].copy()
        hi = s_hi_b[idx].copy()
        for _ in range(52):
            mid = 0.5 * (lo + hi)
            px = origin[0] + mid * d_world[0, idx]
            py = origin[1] + mid * d_world[1, idx]
            pz = origin[2] + mid * dz[idx]
            g = pz - scene.trachea.height(px, py)
            below = g <= 0
            hi[below] = mid[below]
            lo[~below] = mid[~below]
        s_hit = 0.5 * (lo + hi)
        px = origin[0] + s_hit * d_world[0, idx]
        py = origin[1] + s_hit * d_world[1, idx]
        pz = origin[2] + s_hit * dz[idx]
        converged = np.abs(pz - scene.trachea.height(px, py)) < 1e-6
        s_surface[idx[converged]] = s_hit[converged]
        # Discontinuity pixels (sector/length cliffs): keep the depth for
        # display but never label them trachea.
        cliff = idx[~converged]
        s_surface[cliff] = s_hit[~converged]
        cliff_mask = np.zeros(n_rays, dtype=bool)
        cliff_mask[cliff] = True
    else:
        cliff_mask = np.zeros(n_rays, dtype=bool)

    # --- tumor voxel traversal over the grid AABB window ---
    grid = scene.tumor
    visible = scene.visible_voxels()
    s_tumor = np.full(n_rays, np.inf)
    char_hit = np.zeros(n_rays, dtype=bool)
    if visible.any():
        lo_c = grid.origin
        hi_c = grid.origin + np.array(grid.dims) * grid.resolution
        t_in, t_out = _ray_aabb(origin, d_world, lo_c, hi_c)
        t_in = np.maximum(t_in, 0.05)
        cand = np.nonzero(t_out > t_in)[0]
        if cand.size:
            step = 0.3 * grid.resolution
            span = t_out[cand] - t_in[cand]
            n_steps = int(np.ceil(span.max() / step)) + 1

            def _lookup(pts):
                ijk = np.floor((pts - grid.origin) / grid.resolution).astype(int)
                ok = np.all((ijk >= 0) & (ijk < np.array(grid.dims)), axis=-1)
                out = np.zeros(pts.shape[:-1], dtype=bool)
                if ok.any():
                    sel = ijk[ok]
                    out[ok] = visible[sel[:, 0], sel[:, 1], sel[:, 2]]
                return out

            svals = t_in[cand, None] + np.arange(n_steps)[None, :] * step
            valid = svals <= t_out[cand, None]
            pts = origin[None, None, :] + svals[:, :, None] * d_world[:, cand].T[:, None, :]
            occ_hits = _lookup(pts) & valid
            any_hit = occ_hits.any(axis=1)
            first = np.argmax(occ_hits, axis=1)
            hit_rows = np.nonzero(any_hit)[0]
            if hit_rows.size:
                s_hit = svals[hit_rows, first[hit_rows]]
                s_prev = np.where(
                    first[hit_rows] > 0,
                    svals[hit_rows, np.maximum(first[hit_rows] - 1, 0)],
                    t_in[cand][hit_rows],
                )
                lo_s, hi_s = s_prev.copy(), s_hit.copy()
                rows_global = cand[hit_rows]
                for _ in range(24):
                    mid = 0.5 * (lo_s + hi_s)
                    pts_m = origin[None, :] + mid[:, None] * d_world[:, rows_global].T
                    inside = _lookup(pts_m)
                    hi_s[inside] = mid[inside]
                    lo_s[~inside] = mid[~inside]
                s_final = hi_s
                s_tumor[rows_global] = s_final
                pts_f = origin[None, :] + (s_final + 1e-6)[:, None] * d_world[:, rows_global].T
                ijk = np.floor((pts_f - grid.origin) / grid.resolution).astype(int)
                ijk = np.clip(ijk, 0, np.array(grid.dims) - 1)
                char_hit[rows_global] = grid.char[ijk[:, 0], ijk[:, 1], ijk[:, 2]]

    s_best = np.minimum(s_surface, s_tumor)
    hit_any = np.isfinite(s_best)
    if not hit_any.any():
        raise EmptySnapshot("camera pose sees no geometry")

    depth = np.zeros(n_rays)
    depth[hit_any] = s_best[hit_any]
    labels = np.full(n_rays, CLASS_BACKGROUND, dtype=np.uint8)
    tumor_first = hit_any & (s_tumor <= s_surface)
    labels[tumor_first & char_hit] = CLASS_CHAR
    labels[tumor_first & ~char_hit] = CLASS_TUMOR
    surf_first = hit_any & ~tumor_first
    if surf_first.any():
        sx = origin[0] + s_best[surf_first] * d_world[0, surf_first]
        sy = origin[1] + s_best[surf_first] * d_world[1, surf_first]
        on_dome = scene.trachea.in_footprint(sx, sy) & ~cliff_mask[surf_first]
        lab = np.full(on_dome.shape, CLASS_BACKGROUND, dtype=np.uint8)
        lab[on_dome] = CLASS_TRACHEA
        labels[surf_first] = lab

    return Snapshot(
        depth=DepthImage(w, h, depth.reshape(h, w)),
        labels=labels.reshape(h, w),
        intrinsics=intrinsics,
        pose=pose,
    )


def retract_tumor(scene: SceneState, delta: float) -> SceneState:
    """Advance the peel station: freed material folds back, exposing the bed."""
    if delta <= 0:
        raise ContractViolation(f"retraction delta must be > 0, got {delta}")
    scene.peel_station += delta
    return scene


def _path_xz_profile(path) -> tuple[np.ndarray, np.ndarray, float]:
    xs = np.array([wp.position.x for wp in path])
    zs = np.array([wp.position.z for wp in path])
    ys = np.array([wp.position.y for wp in path])
    order = np.argsort(xs)
    xs, zs = xs[order], zs[order]
    keep = np.concatenate([[True], np.diff(xs) > 1e-12])
    return xs[keep], zs[keep], float(np.median(ys))


def apply_cut(scene: SceneState, path, kerf: float = DEFAULT_KERF_MM,
              band: tuple[float, float] | None = None) -> CutOutcome:
    """Execute one cut path against the tumor grid.

    With band=None the deletion region is the kerf/2 tube around the swept
    blade-tip polyline. The executor passes the cut's station band (from
    CutPlan.band_for) so the ribbon spans the full band, modeling the flap the
    tensioned specimen frees as the blade passes.
    """
    if not path:
        raise ContractViolation("cut path is empty")
    if kerf <= 0:
        raise ContractViolation(f"kerf must be > 0, got {kerf}")
    for wp in path:
        p = wp.position
        if not scene.in_bounds(p.x, p.y, p.z):
            raise ContractViolation(f"waypoint ({p.x}, {p.y}, {p.z}) outside scene bounds")

    wps = np.array([[wp.position.x, wp.position.y, wp.position.z] for wp in path])
    surf_z = scene.surface_height(wps[:, 0], wps[:, 1])
    perforated = bool(np.any(wps[:, 2] < surf_z - 1e-12))

    grid = scene.tumor
    occ = grid.occupancy
    xs = grid.axis_centers(0)
    ys = grid.axis_centers(1)
    zs = grid.axis_centers(2)

    if band is not None:
        band_lo, band_hi = band
        px, pz, station = _path_xz_profile(path)
        x_ok = (xs >= px.min() - kerf / 2) & (xs <= px.max() + kerf / 2)
        y_ok = (ys >= band_lo) & (ys < band_hi)
        z_path = np.interp(xs, px, pz)
        dz = np.abs(zs[None, :] - z_path[:, None]) <= kerf / 2
        deleted = (
            occ
            & x_ok[:, None, None]
            & y_ok[None, :, None]
            & dz[:, None, :]
        )
    else:
        from scipy.spatial import cKDTree

        seg_pts = [wps[0]]
        for a, b2 in zip(wps[:-1], wps[1:]):
            d = np.linalg.norm(b2 - a)
            n = max(1, int(math.ceil(d / (kerf / 4))))
            for t in np.linspace(0, 1, n + 1)[1:]:
                seg_pts.append(a + t * (b2 - a))
        tree = cKDTree(np.array(seg_pts))
        lo = wps.min(axis=0) - kerf
        hi = wps.max(axis=0) + kerf
        cand = (
            occ
            & ((xs >= lo[0]) & (xs <= hi[0]))[:, None, None]
            & ((ys >= lo[1]) & (ys <= hi[1]))[None, :, None]
            & ((zs >= lo[2]) & (zs <= hi[2]))[None, None, :]
        )
        deleted = np.zeros_like(occ)
        idx = np.argwhere(cand)
        if idx.size:
            centers = grid.origin + (idx + 0.5) * grid.resolution
            dist, _ = tree.query(centers)
            hit = dist <= kerf / 2
            deleted[idx[hit, 0], idx[hit, 1], idx[hit, 2]] = True

    n_deleted = int(deleted.sum())
    occ &= ~deleted
    grid.char &= occ

    char_added = 0
    if n_deleted:
        boundary = ndimage.binary_dilation(deleted, structure=_CONN6) & occ
        new_char = boundary & ~grid.char
        char_added = int(new_char.sum())
        grid.char |= new_char

    removed = n_deleted * grid.resolution**3
    scene.removed_tumor_volume += removed

    # Gripper sweep: components no longer touching the glue layer leave the scene.
    freed_volume = 0.0
    if occ.any():
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        s_vals = scene.surface_height(gx, gy)
        zeta = zs[None, None, :] - s_vals[:, :, None]
        glue = occ & (zeta <= GLUE_BAND_VOXELS * grid.resolution)
        labels_arr, n_comp = ndimage.label(occ, structure=_CONN6)
        if n_comp:
            glued_ids = np.unique(labels_arr[glue])
            comp_sizes = np.bincount(labels_arr.ravel(), minlength=n_comp + 1)
            for cid in range(1, n_comp + 1):
                if cid in glued_ids:
                    continue
                comp_vol = comp_sizes[cid] * grid.resolution**3
                freed_volume += comp_vol
                if comp_vol >= DETACH_FRACTION * scene.initial_tumor_volume:
                    scene.detached = True
                occ &= labels_arr != cid
            grid.char &= occ
    scene.removed_tumor_volume += freed_volume

    # Perforating waypoints excavate trachea material along the sub-surface run.
    trachea_char = 0.0
    if perforated:
        half = wps[: max(1, len(wps) // 2)]
        sz = scene.surface_height(half[:, 0], half[:, 1])
        depth_below = np.clip(sz - (half[:, 2] - kerf / 2), 0.0, None)
        if len(half) > 1:
            seg = np.linalg.norm(np.diff(half, axis=0), axis=1)
            mid_depth = 0.5 * (depth_below[:-1] + depth_below[1:])
            trachea_char = float(np.sum(seg * kerf * mid_depth))
        else:
            trachea_char = float(depth_below[0] * kerf * kerf)
        scene.removed_trachea_volume += trachea_char

    if scene.cumulative_removed_volume > 1.3 * scene.initial_tumor_volume + 1e-9:
        raise ContractViolation("removed volume exceeds 1.3x the initial tumor volume")

    return CutOutcome(
        removed_volume=removed + freed_volume,
        perforated=perforated,
        char_voxels_added=char_added,
        freed_volume=freed_volume,
        trachea_char_volume=trachea_char,
        detached=scene.detached,
    )


def tumor_volume(scene: SceneState) -> float:
    """Occupied voxel count times resolution cubed; exact and deterministic."""
    return scene.tumor.occupied_volume()


def export_snapshot(snapshot: Snapshot, out_dir, stem: str) -> dict:
    """Write depth (16-bit PGM, 0.01 mm units), labels (8-bit PGM), and a JSON sidecar."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = snapshot.depth
    scaled = np.clip(np.round(d.depth / 0.01), 0, 65535).astype(">u2")
    depth_path = out / f"{stem}_depth.pgm"
    with open(depth_path, "wb") as fh:
        fh.write(f"P5\n{d.width} {d.height}\n65535\n".encode())
        fh.write(scaled.tobytes())
    label_path = out / f"{stem}_labels.pgm"
    with open(label_path, "wb") as fh:
        fh.write(f"P5\n{d.width} {d.height}\n255\n".encode())
        fh.write(snapshot.labels.astype(np.uint8).tobytes())
    sidecar = {
        "width": d.width,
        "height": d.height,
        "depth_unit_mm": 0.01,
        "intrinsics": {
            "f_x": snapshot.intrinsics.f_x,
            "f_y": snapshot.intrinsics.f_y,
            "c_x": snapshot.intrinsics.c_x,
            "c_y": snapshot.intrinsics.c_y,
        },
        "pose": {
            "rotation": snapshot.pose.rotation.tolist(),
            "translation": snapshot.pose.translation.tolist(),
        },
    }
    side_path = out / f"{stem}_camera.json"
    side_path.write_text(json.dumps(sidecar, indent=2))
    return {"depth": str(depth_path), "labels": str(label_path), "camera": str(side_path)}
