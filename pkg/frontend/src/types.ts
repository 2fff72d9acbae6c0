export interface GatewayEvent {
  seq: number;
  t_sim_s: number;
  kind: string;
  payload: Record<string, any>;
}

export interface RunHandle {
  run_id: string;
  status: string;
  current_cycle: number;
  pending: PendingRequest | null;
}

export interface PendingRequest {
  kind: string; // "segmentation_override" | "cut_approval"
  seq: number;
  payload: Record<string, any>;
}

export interface WireBox {
  class: string;
  u_min: number;
  v_min: number;
  u_max: number;
  v_max: number;
  cls_score: number;
  source: string;
}

export interface DecisionMessage {
  run_id: string;
  request_seq: number;
  verdict: "approve" | "reject" | "boxes";
  boxes?: WireBox[];
}

export interface SurfaceDoc {
  degree_x: number;
  degree_y: number;
  cap: number | null;
  coeffs: number[][];
  x_center: number;
  x_scale: number;
  y_center: number;
  y_scale: number;
  domain: [number, number, number, number];
}

export interface PlanDoc {
  clearance_mm: number;
  pitch_deg: number;
  speed_mm_s: number;
  L_mm: number;
  stations_mm: number[];
  paths: { x: number; y: number; z: number; t_s: number; dir: string }[][];
  home: { x: number; y: number; z: number };
}
