import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import {
  defaultCamera,
  paintPlan,
  paintPoints,
  paintPolyline,
  paintSurfaceWireframe,
  project,
  type DrawTarget,
} from "../src/scene3d.js";
import type { PlanDoc, SurfaceDoc } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));
const surfaceDoc = (
  JSON.parse(readFileSync(join(here, "fixtures", "surface_fixture.json"), "utf-8")) as {
    surface: SurfaceDoc;
  }
).surface;

function recorder(): DrawTarget & { points: number; lines: number } {
  const t = {
    width: 640,
    height: 480,
    points: 0,
    lines: 0,
    drawPoint() {
      t.points++;
    },
    drawLine() {
      t.lines++;
    },
  };
  return t;
}

function flatPath(station: number, n = 21) {
  const fwd = Array.from({ length: n }, (_, i) => ({
    x: -10 + i, y: station, z: 15, t_s: i / 2, dir: "+x",
  }));
  const back = [...fwd].reverse().map((w) => ({ ...w, dir: "-x" }));
  return [...fwd, ...back];
}

const plan: PlanDoc = {
  clearance_mm: 1.0,
  pitch_deg: 28.3,
  speed_mm_s: 2.0,
  L_mm: 21,
  stations_mm: [29, 32.5, 36, 39.5, 43, 46.5],
  paths: [29, 32.5, 36, 39.5, 43, 46.5].map((s) => flatPath(s)),
  home: { x: -25, y: 37.5, z: 40 },
};

describe("project", () => {
  it("puts the orbit target at the viewport center", () => {
    const cam = defaultCamera();
    const p = project(cam, 640, 480, cam.targetX, cam.targetY, cam.targetZ)!;
    expect(p.sx).toBeCloseTo(320, 6);
    expect(p.sy).toBeCloseTo(240, 6);
    expect(p.depth).toBeCloseTo(cam.radius, 6);
  });

  it("culls points behind the camera", () => {
    const cam = { ...defaultCamera(), radius: 50 };
    // a point far behind the camera along the viewing direction
    const behind = project(cam, 640, 480, cam.targetX + 1000 * Math.cos(cam.phi) * Math.cos(cam.theta), cam.targetY + 1000 * Math.cos(cam.phi) * Math.sin(cam.theta), cam.targetZ + 1000 * Math.sin(cam.phi));
    expect(behind).toBeNull();
  });

  it("preserves left-right ordering", () => {
    const cam = defaultCamera();
    const a = project(cam, 640, 480, -10, 37.5, 12)!;
    const b = project(cam, 640, 480, 10, 37.5, 12)!;
    expect(a.sx).not.toBeCloseTo(b.sx, 1);
  });
});

describe("painters", () => {
  it("a six-path plan renders six polylines", () => {
    const t = recorder();
    const polylines = paintPlan(t, defaultCamera(), plan, "#fff");
    expect(polylines).toBe(6);
    expect(t.lines).toBe(6 * 20);
  });

  it("an empty cloud renders nothing without error", () => {
    const t = recorder();
    expect(paintPoints(t, defaultCamera(), [], "#fff")).toBe(0);
    expect(t.points).toBe(0);
  });

  it("point sprites render visible cloud points", () => {
    const t = recorder();
    const pts = [
      [0, 37.5, 12],
      [5, 40, 14],
      [-5, 35, 10],
    ];
    expect(paintPoints(t, defaultCamera(), pts, "#fff")).toBe(3);
  });

  it("wireframe renders the 41x41 grid edge count", () => {
    const t = recorder();
    const segments = paintSurfaceWireframe(t, defaultCamera(), surfaceDoc, "#fff", 41);
    expect(segments).toBe(2 * 41 * 40);
  });

  it("polyline skips culled segments", () => {
    const t = recorder();
    const cam = { ...defaultCamera(), radius: 30 };
    const n = paintPolyline(t, cam, [
      { x: 0, y: 37.5, z: 12 },
      { x: 0, y: 37.6, z: 12 },
    ], "#fff");
    expect(n).toBeGreaterThanOrEqual(0);
  });
});
