"""Supervised resection workflow: cycle orchestration, FSM, and the RMSE gate.

One cycle: image -> segment (pausing for human boxes when flagged) -> fit the
fifth-order surface -> plan -> gate (from cycle 1 on) -> ReachIn -> Resect ->
Retract -> advance the peel by L/6. The run ends on specimen detachment, on
cut-budget exhaustion, or after a second supervisor rejection.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pcd, phantom, planner, segmentation, surface
from .errors import (
    ComparisonError,
    ContractViolation,
    ProtocolError,
    SegmentationFailed,
)
from .geometry import BoundingBox2D, bbox_iou, transform_cloud
from .planner import CutPlan, PlanConfig
from .runlog import EventLog, read_json, write_json
from .segmentation import DetectorConfig

DEFAULT_GATE_THRESHOLD_MM = 1.0
DEFAULT_CUT_BUDGET = 12
RETRACT_DURATION_S = 2.0


class FsmState(enum.Enum):
    REACH_IN = "ReachIn"
    RESECT = "Resect"
    RETRACT = "Retract"


_TRANSITIONS = {
    (FsmState.REACH_IN, "tool_aligned"): FsmState.RESECT,
    (FsmState.RESECT, "cut_complete"): FsmState.RETRACT,
    (FsmState.RETRACT, "retract_complete"): FsmState.REACH_IN,
}


def fsm_step(state: FsmState, event: str) -> FsmState:
    """The unique successor state; illegal events raise ProtocolError."""
    key = (state, event)
    if key not in _TRANSITIONS:
        raise ProtocolError(f"illegal event {event!r} in state {state.value}")
    return _TRANSITIONS[key]


@dataclass
class GateDecision:
    rmse: float
    threshold: float
    verdict: str  # auto_approved | supervisor_approved | supervisor_rejected | replanned
    decided_by: str  # system | human

    def __post_init__(self):
        if self.verdict == "auto_approved" and self.rmse > self.threshold:
            raise ContractViolation("auto approval requires rmse <= threshold")

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "decided_by": self.decided_by,
        }


@dataclass
class Decision:
    verdict: str  # approve | reject | boxes
    boxes: list[dict] | None = None
    decided_by: str = "human"


class AutoApproveChannel:
    """Headless policy: every supervision request is approved immediately."""

    def request(self, kind: str, payload: dict, seq: int) -> Decision:
        return Decision(verdict="approve", decided_by="system")


class ScriptedChannel:
    """Test/replay channel that pops pre-recorded decisions in order."""

    def __init__(self, decisions):
        self.decisions = list(decisions)
        self.requests: list[dict] = []

    def request(self, kind: str, payload: dict, seq: int) -> Decision:
        self.requests.append({"kind": kind, "payload": payload, "seq": seq})
        if not self.decisions:
            return Decision(verdict="approve", decided_by="human")
        d = self.decisions.pop(0)
        return d if isinstance(d, Decision) else Decision(**d)


@dataclass
class CorruptionSpec:
    cycle: int
    shift_mm: float = 10.0


@dataclass
class RunConfig:
    seed: int = 1
    image_size: int = 256
    camera_height_mm: float = 320.0
    kerf_mm: float = phantom.DEFAULT_KERF_MM
    gate_threshold_mm: float = DEFAULT_GATE_THRESHOLD_MM
    cut_budget: int = DEFAULT_CUT_BUDGET
    subtraction_radius_mm: float = segmentation.DEFAULT_SUBTRACTION_RADIUS_MM
    headless: bool = True
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    corruption: CorruptionSpec | None = None
    save_snapshots: bool = False

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "image_size": self.image_size,
            "camera_height_mm": self.camera_height_mm,
            "kerf_mm": self.kerf_mm,
            "gate_threshold_mm": self.gate_threshold_mm,
            "cut_budget": self.cut_budget,
            "subtraction_radius_mm": self.subtraction_radius_mm,
            "headless": self.headless,
            "detector": {
                "score_threshold": self.detector.score_threshold,
                "jitter_sigma_px": self.detector.jitter_sigma_px,
                "score_mu": self.detector.score_mu,
                "score_sigma": self.detector.score_sigma,
                "fail_score_mu": self.detector.fail_score_mu,
                "fail_score_sigma": self.detector.fail_score_sigma,
                "failure_prob": dict(self.detector.failure_prob),
                "seed": self.detector.seed,
            },
            "plan": {
                "cut_count": self.plan.cut_count,
                "clearance_mm": self.plan.clearance_mm,
                "pitch_deg": self.plan.pitch_deg,
                "speed_mm_s": self.plan.speed_mm_s,
                "lateral_margin_mm": self.plan.lateral_margin_mm,
                "waypoint_spacing_mm": self.plan.waypoint_spacing_mm,
                "power_w": self.plan.power_w,
            },
            "corruption": (
                {"cycle": self.corruption.cycle, "shift_mm": self.corruption.shift_mm}
                if self.corruption
                else None
            ),
            "save_snapshots": self.save_snapshots,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        det = d.get("detector", {})
        pl = d.get("plan", {})
        corr = d.get("corruption")
        return cls(
            seed=d.get("seed", 1),
            image_size=d.get("image_size", 256),
            camera_height_mm=d.get("camera_height_mm", 320.0),
            kerf_mm=d.get("kerf_mm", phantom.DEFAULT_KERF_MM),
            gate_threshold_mm=d.get("gate_threshold_mm", DEFAULT_GATE_THRESHOLD_MM),
            cut_budget=d.get("cut_budget", DEFAULT_CUT_BUDGET),
            subtraction_radius_mm=d.get(
                "subtraction_radius_mm", segmentation.DEFAULT_SUBTRACTION_RADIUS_MM
            ),
            headless=d.get("headless", True),
            detector=DetectorConfig(**det) if det else DetectorConfig(),
            plan=PlanConfig(**pl) if pl else PlanConfig(),
            corruption=CorruptionSpec(**corr) if corr else None,
            save_snapshots=d.get("save_snapshots", False),
        )


@dataclass
class CycleRecord:
    cycle_index: int
    snapshot_id: str
    segmentation_id: str
    surface_id: str
    plan_id: str
    predicted_plan_id: str | None
    gate: GateDecision | None
    cut: dict
    t_sim_start: float
    t_sim_end: float

    def to_dict(self) -> dict:
        return {
            "cycle_index": self.cycle_index,
            "snapshot_id": self.snapshot_id,
            "segmentation_id": self.segmentation_id,
            "surface_id": self.surface_id,
            "plan_id": self.plan_id,
            "predicted_plan_id": self.predicted_plan_id,
            "gate": self.gate.to_dict() if self.gate else None,
            "cut": self.cut,
            "t_sim_start": self.t_sim_start,
            "t_sim_end": self.t_sim_end,
        }


@dataclass
class RunRecord:
    status: str
    cycles: list[CycleRecord]
    events: list[dict]
    final_metrics: dict | None
    run_dir: str | None


def gate_check(
    predicted: CutPlan,
    current: CutPlan,
    threshold: float,
    station_index: int = 0,
    channel=None,
    request_seq: int = -1,
) -> GateDecision:
    """Self-supervision check between the predicted and the fresh cut plan.

    rmse <= threshold auto-approves; otherwise the decision channel is asked
    (an auto-approve policy answers as the supervisor). Comparison failures
    are fail-safe: treated as above-threshold.
    """
    try:
        value = planner.plan_consistency_rmse(predicted, current, station_index)
    except ComparisonError:
        value = float("inf")
    if value <= threshold:
        return GateDecision(value, threshold, "auto_approved", "system")
    channel = channel or AutoApproveChannel()
    decision = channel.request(
        "cut_approval",
        {"rmse_mm": value, "threshold_mm": threshold, "station_index": station_index},
        request_seq,
    )
    if decision.verdict == "approve":
        return GateDecision(value, threshold, "supervisor_approved", decision.decided_by)
    return GateDecision(value, threshold, "supervisor_rejected", decision.decided_by)


def _boxes_iou_payload(boxes, gt_boxes) -> dict:
    by_class = {}
    gt_by_class = {b.cls: b for b in gt_boxes}
    for b in boxes:
        gt = gt_by_class.get(b.cls)
        if gt is not None:
            by_class[b.cls] = bbox_iou(b, gt)
    return by_class


class _Orchestrator:
    def __init__(self, scene, config: RunConfig, channel, run_dir, phantom_spec):
        self.scene = scene
        self.config = config
        self.channel = channel or AutoApproveChannel()
        self.run_dir = Path(run_dir) if run_dir else None
        self.log = EventLog(self.run_dir / "events.jsonl" if self.run_dir else None)
        self.t_sim = 0.0
        self.cycles: list[CycleRecord] = []
        self.frame = None
        self.prev_plan: CutPlan | None = None
        self.last_surface = None
        self.fsm = FsmState.REACH_IN
        self.pose = phantom.top_down_pose(
            config.camera_height_mm, 0.0, scene.trachea_spec.length / 2.0
        )
        self.intrinsics = phantom.default_intrinsics(config.image_size)
        if self.run_dir:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            if phantom_spec:
                write_json(self.run_dir / "phantom.json", phantom_spec)
            write_json(self.run_dir / "config.json", config.to_dict())

    def emit(self, kind: str, payload: dict) -> dict:
        return self.log.append(self.t_sim, kind, payload)

    def _save_artifact(self, rel: str, writer) -> str:
        if self.run_dir:
            path = self.run_dir / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            writer(path)
        return rel

    def _fsm_to(self, event: str):
        before = self.fsm
        self.fsm = fsm_step(self.fsm, event)
        self.emit("fsm", {"from": before.value, "event": event, "to": self.fsm.value})

    def _supervised_request(self, cycle: int, kind: str, payload: dict) -> Decision:
        """Emit the request, block on the channel, emit the decision."""
        req = self.emit("supervision_request", {"cycle": cycle, "kind": kind, **payload})
        decision = self.channel.request(kind, req["payload"], req["seq"])
        self.emit(
            "supervision_decision",
            {"cycle": cycle, "request_seq": req["seq"], "verdict": decision.verdict,
             "decided_by": decision.decided_by,
             **({"boxes": decision.boxes} if decision.boxes else {})},
        )
        return decision

    def _acquire(self, cycle: int, attempt: int):
        """Image + detect + segment, handling corruption and the human path."""
        cfg = self.config
        snap = phantom.render_snapshot(self.scene, self.pose, self.intrinsics, cfg.image_size)
        snapshot_id = f"snapshots/cycle{cycle:03d}"
        if self.run_dir and cfg.save_snapshots:
            phantom.export_snapshot(snap, self.run_dir / "snapshots", f"cycle{cycle:03d}")
        self.emit(
            "snapshot",
            {"cycle": cycle, "id": snapshot_id, "width": snap.depth.width,
             "height": snap.depth.height},
        )

        rng = np.random.default_rng([cfg.detector.seed, cfg.seed, cycle, attempt])
        boxes = segmentation.detect(snap, cfg.detector, rng)
        gt = list(segmentation.ground_truth_boxes(snap).values())
        mask_override = None
        if cfg.corruption and cfg.corruption.cycle == cycle and attempt == 0:
            boxes, mask_override = segmentation.corrupt_boxes_with_shift(
                snap, boxes, cfg.corruption.shift_mm, cfg.camera_height_mm
            )
            self.emit("corruption_injected", {"cycle": cycle, "shift_mm": cfg.corruption.shift_mm})
        self.emit(
            "detection",
            {
                "cycle": cycle,
                "boxes": [b.to_dict() for b in boxes],
                "gt_boxes": [b.to_dict() for b in gt],
                "iou": _boxes_iou_payload(boxes, gt),
            },
        )

        if mask_override is not None:
            seg = segmentation.segment_with_mask_override(
                snap, boxes, mask_override, cfg.subtraction_radius_mm,
                cfg.detector.score_threshold,
            )
        else:
            seg = segmentation.segment(
                snap, boxes, cfg.subtraction_radius_mm, cfg.detector.score_threshold
            )

        if seg.needs_human:
            decision = self._supervised_request(
                cycle,
                "segmentation_override",
                {"boxes": [b.to_dict() for b in seg.boxes_used]},
            )
            if decision.verdict == "boxes" and decision.boxes:
                human_boxes = [
                    BoundingBox2D.from_dict({**b, "source": "human"})
                    for b in decision.boxes
                ]
                seg = segmentation.segment(
                    snap, human_boxes, cfg.subtraction_radius_mm,
                    cfg.detector.score_threshold,
                )
            elif decision.verdict == "reject":
                raise _SupervisorAbort("segmentation rejected without replacement boxes")
        segmentation.require_trachea(seg)

        seg_id = f"clouds/cycle{cycle:03d}"
        world_trachea = transform_cloud(seg.trachea_cloud, self.pose)
        world_tumor = transform_cloud(seg.tumor_cloud, self.pose)
        self._save_artifact(f"clouds/cycle{cycle:03d}_trachea.pcd",
                            lambda p: pcd.write_pcd(p, world_trachea))
        self._save_artifact(f"clouds/cycle{cycle:03d}_tumor.pcd",
                            lambda p: pcd.write_pcd(p, world_tumor))
        self.emit(
            "segmentation",
            {
                "cycle": cycle,
                "id": seg_id,
                "trachea_points": len(seg.trachea_cloud),
                "tumor_points": len(seg.tumor_cloud),
                "needs_human": seg.needs_human,
                "source": seg.source,
            },
        )
        return snap, seg, snapshot_id, seg_id, world_trachea, world_tumor

    def _fit_and_plan(self, cycle: int, cut_index: int, world_trachea, world_tumor):
        cfg = self.config
        surf = surface.fit_poly(world_trachea, surface.DEFAULT_MODEL_DEGREE,
                                surface.DEFAULT_MODEL_DEGREE,
                                cap=surface.DEFAULT_MODEL_DEGREE)
        surface_id = f"surfaces/cycle{cycle:03d}.json"
        self._save_artifact(surface_id, lambda p: write_json(p, surf.to_dict()))
        self.emit(
            "surface_fit",
            {"cycle": cycle, "id": surface_id, "model_id": surf.model_id,
             "rmse_mm": surf.rmse, "coeff_count": surf.coefficient_count,
             "fit_time_s": surf.fit_time_s},
        )
        plan = planner.plan_cuts(surf, world_tumor, cfg.plan, self.frame)
        if self.frame is None:
            self.frame = plan.frame
        self.last_surface = surf
        plan_id = f"plans/cycle{cycle:03d}.json"
        self._save_artifact(plan_id, lambda p: write_json(p, plan.to_dict()))
        self.emit(
            "plan",
            {"cycle": cycle, "id": plan_id, "cut_index": cut_index,
             "stations_mm": plan.stations_mm, "L_mm": plan.tumor_extent_mm},
        )
        return surf, plan, surface_id, plan_id

    def run(self) -> RunRecord:
        cfg = self.config
        self.emit("run_started", {"seed": cfg.seed, "cut_budget": cfg.cut_budget,
                                  "gate_threshold_mm": cfg.gate_threshold_mm,
                                  "headless": cfg.headless,
                                  "power_w": cfg.plan.power_w})
        status = None
        cycle = 0
        try:
            while cycle < cfg.cut_budget:
                self.emit("cycle_started", {"cycle": cycle})
                t_start = self.t_sim
                attempt = 0
                # Stations repeat once the schedule is exhausted: the cut
                # budget allows a second clean-up pass over the bands.
                cut_index = cycle % cfg.plan.cut_count
                while True:
                    snap, seg, snapshot_id, seg_id, w_tr, w_tu = self._acquire(cycle, attempt)
                    surf, plan, surface_id, plan_id = self._fit_and_plan(
                        cycle, cut_index, w_tr, w_tu
                    )
                    gate = None
                    if cycle >= 1 and self.prev_plan is not None:
                        gate = gate_check(
                            self.prev_plan, plan, cfg.gate_threshold_mm,
                            station_index=cut_index,
                            channel=_GateChannelAdapter(self, cycle),
                        )
                        if gate.verdict == "supervisor_rejected" and attempt == 0:
                            gate = GateDecision(gate.rmse, gate.threshold,
                                                "replanned", gate.decided_by)
                            self.emit("gate", {"cycle": cycle, **gate.to_dict()})
                            attempt += 1
                            continue
                        self.emit("gate", {"cycle": cycle, **gate.to_dict()})
                        if gate.verdict == "supervisor_rejected":
                            raise _SupervisorAbort("cut plan rejected twice")
                    break

                self._fsm_to("tool_aligned")       # ReachIn done -> Resect
                path = plan.paths[cut_index]
                outcome = phantom.apply_cut(
                    self.scene, path, cfg.kerf_mm, band=plan.band_for(cut_index)
                )
                self.t_sim += path[-1].t_s if path else 0.0
                cut_payload = {
                    "cycle": cycle,
                    "removed_volume_mm3": outcome.removed_volume,
                    "freed_volume_mm3": outcome.freed_volume,
                    "perforated": outcome.perforated,
                    "char_voxels_added": outcome.char_voxels_added,
                    "detached": outcome.detached,
                    "cumulative_removed_mm3": self.scene.cumulative_removed_volume,
                }
                self.emit("cut", cut_payload)
                self._fsm_to("cut_complete")       # Resect done -> Retract
                phantom.retract_tumor(self.scene, plan.tumor_extent_mm / cfg.plan.cut_count)
                self.t_sim += RETRACT_DURATION_S
                self.emit("retract", {"cycle": cycle,
                                      "delta_mm": plan.tumor_extent_mm / cfg.plan.cut_count,
                                      "peel_station_mm": self.scene.peel_station})
                self._fsm_to("retract_complete")   # Retract done -> ReachIn

                predicted_id = (
                    f"{plan_id}#path{cut_index + 1}"
                    if cut_index + 1 < len(plan.paths)
                    else None
                )
                self.cycles.append(
                    CycleRecord(
                        cycle_index=cycle,
                        snapshot_id=snapshot_id,
                        segmentation_id=seg_id,
                        surface_id=surface_id,
                        plan_id=f"{plan_id}#path{cut_index}",
                        predicted_plan_id=predicted_id,
                        gate=gate,
                        cut=cut_payload,
                        t_sim_start=t_start,
                        t_sim_end=self.t_sim,
                    )
                )
                self.emit("cycle_complete", {"cycle": cycle})
                self.prev_plan = plan
                if outcome.detached:
                    status = "completed_detached"
                    break
                cycle += 1
            if status is None:
                status = "budget_exhausted"
        except _SupervisorAbort as exc:
            status = "aborted_by_supervisor"
            self.emit("abort", {"reason": str(exc)})
        except SegmentationFailed as exc:
            status = "failed_segmentation"
            self.emit("abort", {"reason": str(exc)})

        metrics = self._final_metrics(status)
        self.emit("run_complete", {"status": status, "cycles": len(self.cycles),
                                   **({"removal_pct": metrics["removal_pct"]} if metrics else {})})
        if self.run_dir and metrics is not None:
            write_json(self.run_dir / "metrics.json", metrics)
            char = self.scene.tumor.occupied_centers(
                self.scene.tumor.char & self.scene.tumor.occupancy
            )
            from .geometry import CLASS_CHAR, PointCloud

            self._save_artifact(
                "clouds/final_char.pcd",
                lambda p: pcd.write_pcd(
                    p, PointCloud(char, np.full(len(char), CLASS_CHAR, dtype=np.uint8))
                ),
            )
        self.log.close()
        return RunRecord(
            status=status,
            cycles=self.cycles,
            events=self.log.events,
            final_metrics=metrics,
            run_dir=str(self.run_dir) if self.run_dir else None,
        )

    def _final_metrics(self, status: str) -> dict | None:
        from . import evaluation

        try:
            return evaluation.compute_metrics(
                self.scene, self.last_surface, self.log.events,
                clearance=self.config.plan.clearance_mm,
            )
        except Exception:
            return None


class _SupervisorAbort(Exception):
    pass


class _GateChannelAdapter:
    """Routes gate_check's supervision request through the event log."""

    def __init__(self, orch: _Orchestrator, cycle: int):
        self.orch = orch
        self.cycle = cycle

    def request(self, kind: str, payload: dict, seq: int) -> Decision:
        return self.orch._supervised_request(self.cycle, kind, payload)


def run_procedure(
    scene: phantom.SceneState,
    config: RunConfig,
    channel=None,
    run_dir=None,
    phantom_spec: dict | None = None,
) -> RunRecord:
    """Execute a full supervised run against the scene; see module docstring."""
    if channel is None and not config.headless:
        raise ContractViolation("interactive mode requires a decision channel")
    if channel is None:
        channel = AutoApproveChannel()
    return _Orchestrator(scene, config, channel, run_dir, phantom_spec).run()


def replay_run(run_dir) -> RunRecord:
    """Re-execute a persisted run from its spec, config, and recorded decisions."""
    run_dir = Path(run_dir)
    spec = read_json(run_dir / "phantom.json")
    config = RunConfig.from_dict(read_json(run_dir / "config.json"))
    trachea, tumor, resolution = phantom.load_phantom_spec(spec)
    scene = phantom.generate_phantom(trachea, tumor, resolution)
    from .runlog import read_events

    decisions = [
        Decision(
            verdict=ev["payload"]["verdict"],
            boxes=ev["payload"].get("boxes"),
            decided_by=ev["payload"].get("decided_by", "human"),
        )
        for ev in read_events(run_dir)
        if ev["kind"] == "supervision_decision"
    ]
    channel = ScriptedChannel(decisions) if decisions else AutoApproveChannel()
    return run_procedure(scene, config, channel=channel, phantom_spec=spec)


_TIMING_KEYS = {"fit_time_s"}
_DECISION_KEYS = {"decided_by", "verdict"}


def normalized_cycles(record: RunRecord, drop_decision_meta: bool = True) -> list[dict]:
    """Cycle records with timing (and optionally decision metadata) stripped,
    for replay and headless-equivalence comparisons."""
    out = []
    for c in record.cycles:
        d = c.to_dict()
        if d["gate"] and drop_decision_meta:
            d["gate"] = {k: v for k, v in d["gate"].items() if k not in _DECISION_KEYS}
        out.append(d)
    return out
