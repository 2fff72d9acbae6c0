import type { GatewayEvent, PendingRequest, RunHandle } from "./types.js";

export interface TimelineEntry {
  seq: number;
  t_sim_s: number;
  label: string;
}

export interface GateInfo {
  cycle: number;
  rmse: number;
  threshold: number;
  verdict: string;
}

export interface LayerVisibility {
  tracheaCloud: boolean;
  tumorCloud: boolean;
  surface: boolean;
  plan: boolean;
  char: boolean;
}

/** Console view state. Every displayed number traces back to a gateway event
 *  or artifact; the reducer never synthesizes values. */
export interface ViewState {
  runId: string | null;
  status: string;
  currentCycle: number;
  pending: PendingRequest | null;
  lastEventSeq: number;
  gates: GateInfo[];
  timeline: TimelineEntry[];
  artifacts: { cycle: number; surface?: string; plan?: string; clouds?: string }[];
  finalStatus: string | null;
  layers: LayerVisibility;
}

export function initialState(): ViewState {
  return {
    runId: null,
    status: "idle",
    currentCycle: 0,
    pending: null,
    lastEventSeq: -1,
    gates: [],
    timeline: [],
    artifacts: [],
    finalStatus: null,
    layers: { tracheaCloud: true, tumorCloud: true, surface: true, plan: true, char: true },
  };
}

export function applyHandle(state: ViewState, handle: RunHandle): ViewState {
  return {
    ...state,
    runId: handle.run_id,
    status: handle.status,
    currentCycle: handle.current_cycle,
    pending: handle.pending,
  };
}

function describe(ev: GatewayEvent): string {
  const p = ev.payload;
  switch (ev.kind) {
    case "run_started":
      return `run started (seed ${p.seed})`;
    case "cycle_started":
      return `cycle ${p.cycle}`;
    case "gate":
      return `gate ${p.verdict} rmse ${Number(p.rmse).toFixed(3)} mm`;
    case "supervision_request":
      return `awaiting ${p.kind}`;
    case "supervision_decision":
      return `decision ${p.verdict}`;
    case "cut":
      return `cut ${p.cycle}: ${Number(p.removed_volume_mm3).toFixed(0)} mm3${p.detached ? ", detached" : ""}`;
    case "retract":
      return `retract to ${Number(p.peel_station_mm).toFixed(1)} mm`;
    case "run_complete":
      return `run complete: ${p.status}`;
    default:
      return ev.kind;
  }
}

/** Fold one gateway event into the view state. */
export function applyEvent(state: ViewState, ev: GatewayEvent): ViewState {
  if (ev.seq <= state.lastEventSeq) return state; // replay/duplicate guard
  const next: ViewState = {
    ...state,
    lastEventSeq: ev.seq,
    timeline: [...state.timeline, { seq: ev.seq, t_sim_s: ev.t_sim_s, label: describe(ev) }],
  };
  const p = ev.payload;
  switch (ev.kind) {
    case "cycle_started":
      next.currentCycle = p.cycle;
      break;
    case "gate":
      next.gates = [
        ...state.gates,
        { cycle: p.cycle, rmse: p.rmse, threshold: p.threshold, verdict: p.verdict },
      ];
      break;
    case "supervision_request":
      next.pending = { kind: p.kind, seq: ev.seq, payload: p };
      next.status = "awaiting_decision";
      break;
    case "supervision_decision":
      if (state.pending && state.pending.seq === p.request_seq) {
        next.pending = null;
        next.status = "running";
      }
      break;
    case "surface_fit":
      next.artifacts = upsertArtifact(state.artifacts, p.cycle, { surface: p.id });
      break;
    case "plan":
      next.artifacts = upsertArtifact(state.artifacts, p.cycle, { plan: p.id });
      break;
    case "segmentation":
      next.artifacts = upsertArtifact(state.artifacts, p.cycle, { clouds: p.id });
      break;
    case "run_complete":
      next.finalStatus = p.status;
      next.status = p.status;
      next.pending = null;
      break;
  }
  return next;
}

function upsertArtifact(
  list: ViewState["artifacts"],
  cycle: number,
  patch: Partial<ViewState["artifacts"][number]>,
) {
  const idx = list.findIndex((a) => a.cycle === cycle);
  if (idx < 0) return [...list, { cycle, ...patch }];
  const copy = list.slice();
  copy[idx] = { ...copy[idx], ...patch };
  return copy;
}

/** Gate RMSE shown in the approval panel: the pending request's own payload,
 *  never a recomputed value. */
export function displayedGateRmse(state: ViewState): number | null {
  if (state.pending?.kind !== "cut_approval") return null;
  const v = state.pending.payload.rmse_mm;
  return typeof v === "number" ? v : null;
}

/** Decision forms are usable only while the matching request is pending. */
export function formEnabled(state: ViewState, kind: string): boolean {
  return state.status === "awaiting_decision" && state.pending?.kind === kind;
}
