import type { PlanDoc, SurfaceDoc } from "./types.js";
import { sampleWireframe } from "./surface.js";

export interface OrbitCamera {
  targetX: number;
  targetY: number;
  targetZ: number;
  radius: number;
  theta: number; // azimuth, radians
  phi: number; // elevation, radians
  fov: number; // vertical, radians
}

export function defaultCamera(): OrbitCamera {
  return { targetX: 0, targetY: 37.5, targetZ: 12, radius: 140, theta: -1.1, phi: 0.55, fov: 0.9 };
}

export interface Projected {
  sx: number;
  sy: number;
  depth: number;
}

function cameraBasis(cam: OrbitCamera) {
  const cx = cam.targetX + cam.radius * Math.cos(cam.phi) * Math.cos(cam.theta);
  const cy = cam.targetY + cam.radius * Math.cos(cam.phi) * Math.sin(cam.theta);
  const cz = cam.targetZ + cam.radius * Math.sin(cam.phi);
  // forward towards the target
  let fx = cam.targetX - cx;
  let fy = cam.targetY - cy;
  let fz = cam.targetZ - cz;
  const fl = Math.hypot(fx, fy, fz);
  fx /= fl; fy /= fl; fz /= fl;
  // right = forward x worldUp(z)
  let rx = fy * 1 - fz * 0;
  let ry = fz * 0 - fx * 1;
  let rz = fx * 0 - fy * 0;
  const rl = Math.hypot(rx, ry, rz) || 1;
  rx /= rl; ry /= rl; rz /= rl;
  // up = right x forward
  const ux = ry * fz - rz * fy;
  const uy = rz * fx - rx * fz;
  const uz = rx * fy - ry * fx;
  return { cx, cy, cz, fx, fy, fz, rx, ry, rz, ux, uy, uz };
}

/** Perspective-project a world point; null when behind the camera. */
export function project(
  cam: OrbitCamera,
  width: number,
  height: number,
  x: number,
  y: number,
  z: number,
): Projected | null {
  const b = cameraBasis(cam);
  const dx = x - b.cx;
  const dy = y - b.cy;
  const dz = z - b.cz;
  const depth = dx * b.fx + dy * b.fy + dz * b.fz;
  if (depth <= 1e-6) return null;
  const px = dx * b.rx + dy * b.ry + dz * b.rz;
  const py = dx * b.ux + dy * b.uy + dz * b.uz;
  const scale = height / (2 * Math.tan(cam.fov / 2));
  return {
    sx: width / 2 + (px / depth) * scale,
    sy: height / 2 - (py / depth) * scale,
    depth,
  };
}

/** Minimal draw surface so rendering logic is testable without a DOM canvas. */
export interface DrawTarget {
  width: number;
  height: number;
  drawPoint(sx: number, sy: number, color: string, size: number): void;
  drawLine(ax: number, ay: number, bx: number, by: number, color: string): void;
}

export function paintPoints(
  target: DrawTarget,
  cam: OrbitCamera,
  points: number[][],
  color: string,
  size = 2,
  stride = 1,
): number {
  let drawn = 0;
  for (let i = 0; i < points.length; i += stride) {
    const p = project(cam, target.width, target.height, points[i][0], points[i][1], points[i][2]);
    if (p) {
      target.drawPoint(p.sx, p.sy, color, size);
      drawn++;
    }
  }
  return drawn;
}

export function paintPolyline(
  target: DrawTarget,
  cam: OrbitCamera,
  pts: { x: number; y: number; z: number }[],
  color: string,
): number {
  let segments = 0;
  for (let i = 1; i < pts.length; i++) {
    const a = project(cam, target.width, target.height, pts[i - 1].x, pts[i - 1].y, pts[i - 1].z);
    const b = project(cam, target.width, target.height, pts[i].x, pts[i].y, pts[i].z);
    if (a && b) {
      target.drawLine(a.sx, a.sy, b.sx, b.sy, color);
      segments++;
    }
  }
  return segments;
}

/** Plan paths render one polyline per cut (forward half only: the retrace
 *  covers the same screen pixels). */
export function paintPlan(target: DrawTarget, cam: OrbitCamera, plan: PlanDoc, color: string): number {
  let polylines = 0;
  for (const path of plan.paths) {
    const half = path.slice(0, Math.max(2, Math.floor(path.length / 2)));
    if (paintPolyline(target, cam, half, color) > 0) polylines++;
  }
  return polylines;
}

export function paintSurfaceWireframe(
  target: DrawTarget,
  cam: OrbitCamera,
  doc: SurfaceDoc,
  color: string,
  n = 41,
): number {
  const grid = sampleWireframe(doc, n);
  let segments = 0;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      if (j + 1 < n) {
        segments += edge(target, cam, grid[i][j], grid[i][j + 1], color);
      }
      if (i + 1 < n) {
        segments += edge(target, cam, grid[i][j], grid[i + 1][j], color);
      }
    }
  }
  return segments;
}

function edge(
  target: DrawTarget,
  cam: OrbitCamera,
  a: { x: number; y: number; z: number },
  b: { x: number; y: number; z: number },
  color: string,
): number {
  const pa = project(cam, target.width, target.height, a.x, a.y, a.z);
  const pb = project(cam, target.width, target.height, b.x, b.y, b.z);
  if (pa && pb) {
    target.drawLine(pa.sx, pa.sy, pb.sx, pb.sy, color);
    return 1;
  }
  return 0;
}
