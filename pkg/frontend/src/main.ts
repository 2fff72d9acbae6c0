import { GatewayClient } from "./api.js";
import { boxFromDrag, boxesDecision, toWireBox, verdictDecision } from "./bbox.js";
import {
  defaultCamera,
  paintPlan,
  paintPoints,
  paintSurfaceWireframe,
  type DrawTarget,
  type OrbitCamera,
} from "./scene3d.js";
import {
  applyEvent,
  applyHandle,
  displayedGateRmse,
  formEnabled,
  initialState,
  type ViewState,
} from "./state.js";
import { parsePcd } from "./pcdparse.js";
import { LABEL_COLORS, parsePgm } from "./pgm.js";
import type { PlanDoc, SurfaceDoc, WireBox } from "./types.js";

const client = new GatewayClient(window.location.origin.replace(/\/$/, ""));
let state: ViewState = initialState();
let camera: OrbitCamera = defaultCamera();
let surfaceDoc: SurfaceDoc | null = null;
let planDoc: PlanDoc | null = null;
let tracheaPts: number[][] = [];
let tumorPts: number[][] = [];
let charPts: number[][] = [];
let drawnBoxes: WireBox[] = [];
let dragStart: { u: number; v: number } | null = null;
let nextClass = "trachea";

const el = (id: string) => document.getElementById(id)!;
const scene = el("scene") as HTMLCanvasElement;
const image = el("image") as HTMLCanvasElement;

function canvasTarget(canvas: HTMLCanvasElement): DrawTarget {
  const ctx = canvas.getContext("2d")!;
  return {
    width: canvas.width,
    height: canvas.height,
    drawPoint(sx, sy, color, size) {
      ctx.fillStyle = color;
      ctx.fillRect(sx - size / 2, sy - size / 2, size, size);
    },
    drawLine(ax, ay, bx, by, color) {
      ctx.strokeStyle = color;
      ctx.beginPath();
      ctx.moveTo(ax, ay);
      ctx.lineTo(bx, by);
      ctx.stroke();
    },
  };
}

function repaintScene() {
  const ctx = scene.getContext("2d")!;
  ctx.fillStyle = "#11141a";
  ctx.fillRect(0, 0, scene.width, scene.height);
  const target = canvasTarget(scene);
  const layers = state.layers;
  if (layers.surface && surfaceDoc) paintSurfaceWireframe(target, camera, surfaceDoc, "#3a6ea5");
  if (layers.tracheaCloud) paintPoints(target, camera, tracheaPts, "#7fb2e5", 2, 4);
  if (layers.tumorCloud) paintPoints(target, camera, tumorPts, "#e08070", 2, 2);
  if (layers.char) paintPoints(target, camera, charPts, "#555555", 2, 2);
  if (layers.plan && planDoc) paintPlan(target, camera, planDoc, "#e6c35a");
}

async function refreshArtifacts() {
  if (!state.runId) return;
  const latest = state.artifacts[state.artifacts.length - 1];
  if (!latest) return;
  try {
    if (latest.surface) {
      surfaceDoc = (await client.fetchArtifactJson(state.runId, latest.surface)) as SurfaceDoc;
    }
    if (latest.plan) {
      planDoc = (await client.fetchArtifactJson(state.runId, latest.plan)) as PlanDoc;
    }
    const cycle = String(latest.cycle).padStart(3, "0");
    const tr = parsePcd(await client.fetchArtifactText(state.runId, `clouds/cycle${cycle}_trachea.pcd`));
    tracheaPts = tr.points;
    const tu = parsePcd(await client.fetchArtifactText(state.runId, `clouds/cycle${cycle}_tumor.pcd`));
    tumorPts = tu.points;
  } catch {
    // a missing artifact disables its layer without failing the console
  }
  try {
    if (state.finalStatus && state.runId) {
      const ch = parsePcd(await client.fetchArtifactText(state.runId, "clouds/final_char.pcd"));
      charPts = ch.points;
    }
  } catch {
    charPts = [];
  }
  repaintScene();
}

async function refreshImage() {
  if (!state.runId) return;
  const cycle = String(state.currentCycle).padStart(3, "0");
  try {
    const res = await fetch(
      `${client.baseUrl}/runs/${state.runId}/artifacts/snapshots/cycle${cycle}_labels.pgm`,
    );
    if (!res.ok) throw new Error("no snapshot");
    const img = parsePgm(await res.arrayBuffer());
    const ctx = image.getContext("2d")!;
    const data = ctx.createImageData(img.width, img.height);
    for (let i = 0; i < img.pixels.length; i++) {
      const c = LABEL_COLORS[Math.min(img.pixels[i], 3)];
      data.data[4 * i] = parseInt(c.slice(1, 3), 16);
      data.data[4 * i + 1] = parseInt(c.slice(3, 5), 16);
      data.data[4 * i + 2] = parseInt(c.slice(5, 7), 16);
      data.data[4 * i + 3] = 255;
    }
    ctx.putImageData(data, 0, 0);
  } catch {
    const ctx = image.getContext("2d")!;
    ctx.fillStyle = "#20242c";
    ctx.fillRect(0, 0, image.width, image.height);
    ctx.fillStyle = "#888";
    ctx.fillText("no snapshot artifact (enable save_snapshots)", 8, 20);
  }
  for (const b of drawnBoxes) {
    const ctx = image.getContext("2d")!;
    ctx.strokeStyle = b.class === "trachea" ? "#7fb2e5" : "#e08070";
    ctx.strokeRect(b.u_min, b.v_min, b.u_max - b.u_min, b.v_max - b.v_min);
  }
}

function renderPanel() {
  el("status").textContent = `${state.runId ?? "-"} | ${state.status} | cycle ${state.currentCycle}`;
  const segForm = el("seg-form") as HTMLFieldSetElement;
  const cutForm = el("cut-form") as HTMLFieldSetElement;
  segForm.disabled = !formEnabled(state, "segmentation_override");
  cutForm.disabled = !formEnabled(state, "cut_approval");
  const rmse = displayedGateRmse(state);
  el("gate-rmse").textContent = rmse === null ? "-" : `${rmse.toFixed(3)} mm`;
  const list = el("timeline");
  list.innerHTML = "";
  for (const entry of state.timeline.slice(-40)) {
    const li = document.createElement("li");
    li.textContent = `[${entry.t_sim_s.toFixed(1)}s] ${entry.label}`;
    list.appendChild(li);
  }
  el("boxes-pending").textContent = drawnBoxes.map((b) => b.class).join(", ") || "none";
}

function onEvent(ev: Parameters<typeof applyEvent>[1]) {
  state = applyEvent(state, ev);
  renderPanel();
  if (ev.kind === "plan" || ev.kind === "surface_fit" || ev.kind === "segmentation" || ev.kind === "run_complete") {
    void refreshArtifacts();
  }
  if (ev.kind === "cycle_started" || ev.kind === "supervision_request") {
    void refreshImage();
  }
}

async function attach(runId: string) {
  state = initialState();
  state = applyHandle(state, await client.getRun(runId));
  renderPanel();
  void client.streamEvents(runId, -1, onEvent);
}

async function startRun() {
  const seed = parseInt((el("seed") as HTMLInputElement).value || "1", 10);
  const headless = (el("headless") as HTMLInputElement).checked;
  const handle = await client.createRun(
    {
      trachea: { radius: 25.0, length: 75.0, noise_amp: 0.4, seed: 1000 + seed },
      tumor: {
        station: 37.5, diameter: 20.0, height: 12.0,
        exp_n: 1.0, exp_e: 1.0, seed: 2000 + seed,
      },
      resolution: 0.25,
    },
    { seed, headless, save_snapshots: true },
  );
  await attach(handle.run_id);
}

function wireUi() {
  el("start").addEventListener("click", () => void startRun());
  el("attach").addEventListener("click", () => {
    const id = (el("run-id") as HTMLInputElement).value.trim();
    if (id) void attach(id);
  });
  scene.addEventListener("mousemove", (e) => {
    if (e.buttons & 1) {
      camera = { ...camera, theta: camera.theta - e.movementX * 0.01, phi: Math.min(1.5, Math.max(-0.2, camera.phi + e.movementY * 0.01)) };
      repaintScene();
    }
  });
  scene.addEventListener("wheel", (e) => {
    camera = { ...camera, radius: Math.min(400, Math.max(40, camera.radius * (e.deltaY > 0 ? 1.1 : 0.9))) };
    repaintScene();
    e.preventDefault();
  });
  image.addEventListener("mousedown", (e) => {
    dragStart = { u: e.offsetX, v: e.offsetY };
  });
  image.addEventListener("mouseup", (e) => {
    if (!dragStart || !formEnabled(state, "segmentation_override")) {
      dragStart = null;
      return;
    }
    const box = boxFromDrag({ startU: dragStart.u, startV: dragStart.v, endU: e.offsetX, endV: e.offsetY });
    dragStart = null;
    if (!box) return; // degenerate drag rejected client-side
    drawnBoxes.push(toWireBox(nextClass, box));
    nextClass = nextClass === "trachea" ? "tumor" : "trachea";
    renderPanel();
    void refreshImage();
  });
  el("submit-boxes").addEventListener("click", async () => {
    if (!state.runId || !state.pending || drawnBoxes.length === 0) return;
    const msg = boxesDecision(state.runId, state.pending.seq, drawnBoxes);
    (el("seg-form") as HTMLFieldSetElement).disabled = true; // optimistic disable
    if (await client.submitDecision(msg)) drawnBoxes = [];
    renderPanel();
  });
  el("accept-seg").addEventListener("click", async () => {
    if (!state.runId || !state.pending) return;
    await client.submitDecision(verdictDecision(state.runId, state.pending.seq, "approve"));
  });
  for (const verdict of ["approve", "reject"] as const) {
    el(`cut-${verdict}`).addEventListener("click", async () => {
      if (!state.runId || !state.pending) return;
      (el("cut-form") as HTMLFieldSetElement).disabled = true;
      await client.submitDecision(verdictDecision(state.runId, state.pending.seq, verdict));
    });
  }
  for (const layer of ["tracheaCloud", "tumorCloud", "surface", "plan", "char"] as const) {
    const box = el(`layer-${layer}`) as HTMLInputElement;
    box.addEventListener("change", () => {
      state = { ...state, layers: { ...state.layers, [layer]: box.checked } };
      repaintScene();
    });
  }
}

wireUi();
renderPanel();
repaintScene();
