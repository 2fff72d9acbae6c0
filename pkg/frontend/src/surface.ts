import type { SurfaceDoc } from "./types.js";

/** Evaluate the fitted polynomial at (x, y): Horner over normalized coords,
 *  matching the solver's arithmetic exactly. */
export function evaluateSurface(doc: SurfaceDoc, x: number, y: number): number {
  const xn = (x - doc.x_center) / doc.x_scale;
  const yn = (y - doc.y_center) / doc.y_scale;
  let acc = 0;
  for (let i = doc.coeffs.length - 1; i >= 0; i--) {
    const row = doc.coeffs[i];
    let rowVal = 0;
    for (let j = row.length - 1; j >= 0; j--) {
      rowVal = rowVal * yn + row[j];
    }
    acc = acc * xn + rowVal;
  }
  return acc;
}

export interface WireframeSample {
  x: number;
  y: number;
  z: number;
}

/** Sample the fit domain as an n x n grid for wireframe display. */
export function sampleWireframe(doc: SurfaceDoc, n = 41): WireframeSample[][] {
  const [x0, x1, y0, y1] = doc.domain;
  const rows: WireframeSample[][] = [];
  for (let i = 0; i < n; i++) {
    const row: WireframeSample[] = [];
    const x = x0 + ((x1 - x0) * i) / (n - 1);
    for (let j = 0; j < n; j++) {
      const y = y0 + ((y1 - y0) * j) / (n - 1);
      row.push({ x, y, z: evaluateSurface(doc, x, y) });
    }
    rows.push(row);
  }
  return rows;
}
