import type { DecisionMessage, WireBox } from "./types.js";

export interface DragGesture {
  startU: number;
  startV: number;
  endU: number;
  endV: number;
}

export interface PixelBox {
  u_min: number;
  v_min: number;
  u_max: number;
  v_max: number;
}

/** Normalize a drag into min/max order; null for zero-area drags. */
export function boxFromDrag(drag: DragGesture): PixelBox | null {
  const u_min = Math.min(drag.startU, drag.endU);
  const u_max = Math.max(drag.startU, drag.endU);
  const v_min = Math.min(drag.startV, drag.endV);
  const v_max = Math.max(drag.startV, drag.endV);
  if (u_max - u_min < 1 || v_max - v_min < 1) return null;
  return { u_min, v_min, u_max, v_max };
}

export function toWireBox(cls: string, box: PixelBox): WireBox {
  return {
    class: cls,
    u_min: box.u_min,
    v_min: box.v_min,
    u_max: box.u_max,
    v_max: box.v_max,
    cls_score: 1.0,
    source: "human",
  };
}

/** Build the hand-drawn-boxes decision for the pending segmentation request. */
export function boxesDecision(
  runId: string,
  requestSeq: number,
  boxes: WireBox[],
): DecisionMessage {
  return { run_id: runId, request_seq: requestSeq, verdict: "boxes", boxes };
}

export function verdictDecision(
  runId: string,
  requestSeq: number,
  verdict: "approve" | "reject",
): DecisionMessage {
  return { run_id: runId, request_seq: requestSeq, verdict };
}
