"""Command-line interface.

    resectsim run --phantom spec.json --seed N [--headless --auto-approve]
                  [--gate-threshold MM] --out DIR
    resectsim serve --port P --data DIR
    resectsim sweep-fit --cloud FILE --max-degree 10 --out CSV
    resectsim eval --run DIR

Exit codes: 0 success, 2 supervisor abort, 3 perforation detected, 4 config error.
RESECTSIM_DATA overrides the data directory for serve.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import evaluation, executor, pcd, phantom, runlog, surface
from .errors import ConfigError, ContractViolation

EXIT_OK = 0
EXIT_SUPERVISOR_ABORT = 2
EXIT_PERFORATION = 3
EXIT_CONFIG = 4


def _cmd_run(args) -> int:
    if not (args.headless or args.auto_approve):
        print(
            "interactive runs need the gateway (resectsim serve); "
            "pass --headless for unattended execution",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    if args.phantom:
        spec = json.loads(Path(args.phantom).read_text())
        trachea, tumor, resolution = phantom.load_phantom_spec(spec)
    else:
        trachea, tumor, resolution = phantom.default_specs(args.seed)
        spec = phantom.phantom_spec_dict(trachea, tumor, resolution)
    config = executor.RunConfig(
        seed=args.seed,
        gate_threshold_mm=args.gate_threshold,
        cut_budget=args.cut_budget,
        headless=args.headless or args.auto_approve,
    )
    scene = phantom.generate_phantom(trachea, tumor, resolution)
    record = executor.run_procedure(
        scene, config, run_dir=args.out, phantom_spec=spec
    )
    metrics = record.final_metrics or {}
    print(f"status: {record.status}")
    if metrics:
        print(evaluation.format_metrics_table(metrics))
    if record.status == "aborted_by_supervisor":
        return EXIT_SUPERVISOR_ABORT
    if metrics.get("perforated"):
        return EXIT_PERFORATION
    return EXIT_OK if record.status == "completed_detached" else 1


def _cmd_serve(args) -> int:
    import uvicorn

    from .gateway import create_app

    data = args.data or os.environ.get("RESECTSIM_DATA", "./runs")
    app = create_app(data, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def _cmd_sweep_fit(args) -> int:
    cloud = pcd.read_pcd(args.cloud)
    reports = surface.sweep_models(cloud, args.max_degree)
    csv = surface.reports_to_csv(reports)
    if args.out:
        Path(args.out).write_text(csv)
        print(f"wrote {args.out}")
    else:
        print(csv, end="")
    return EXIT_OK


def _cmd_eval(args) -> int:
    run_dir = Path(args.run)
    events = runlog.read_events(run_dir)
    if not events:
        print(f"no events found under {run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    metrics_path = run_dir / "metrics.json"
    if metrics_path.exists():
        doc = json.loads(metrics_path.read_text())
    else:
        doc = None
    # Re-derive what the artifacts allow: IoU and removal from events; post-cut
    # RMSE from the final char cloud + final surface.
    try:
        iou = evaluation.iou_stats(events)
    except ContractViolation:
        iou = {}
    removed = None
    perforated = False
    for ev in events:
        if ev["kind"] == "cut":
            removed = ev["payload"]["cumulative_removed_mm3"]
            perforated = perforated or ev["payload"]["perforated"]
    surfaces = sorted((run_dir / "surfaces").glob("cycle*.json"))
    char_path = run_dir / "clouds" / "final_char.pcd"
    rmse_val = None
    if surfaces and char_path.exists():
        surf = surface.PolySurface.from_dict(runlog.read_json(surfaces[-1]))
        char = pcd.read_pcd(char_path)
        if len(char):
            cfg = runlog.read_json(run_dir / "config.json")
            clearance = cfg.get("plan", {}).get("clearance_mm", 1.0)
            rmse_val = evaluation.postcut_rmse_points(char.points, surf, clearance)
    if doc is None:
        doc = {
            "removal_pct": 0.0,
            "postcut_rmse_mm": rmse_val,
            "lumen_pct": 0.0,
            "perforated": perforated,
            "success": False,
            "iou": {},
        }
    if rmse_val is not None:
        doc["postcut_rmse_mm"] = rmse_val
    doc["perforated"] = perforated
    doc["iou"] = {
        name: {"mean": s.mean, "std": s.std} for name, s in iou.items()
    } or doc.get("iou", {})
    for name in ("trachea", "tumor"):
        doc["iou"].setdefault(name, {"mean": 0.0, "std": 0.0})
    print(evaluation.format_metrics_table(doc))
    runlog.write_json(metrics_path, doc)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resectsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a supervised resection run")
    run.add_argument("--phantom", help="phantom spec JSON (default: seeded family)")
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--headless", action="store_true")
    run.add_argument("--auto-approve", action="store_true")
    run.add_argument("--gate-threshold", type=float,
                     default=executor.DEFAULT_GATE_THRESHOLD_MM)
    run.add_argument("--cut-budget", type=int, default=executor.DEFAULT_CUT_BUDGET)
    run.add_argument("--out", required=True, help="run directory")
    run.set_defaults(fn=_cmd_run)

    serve = sub.add_parser("serve", help="start the gateway service")
    serve.add_argument("--port", type=int, default=8008)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--data", help="data directory (or RESECTSIM_DATA)")
    serve.add_argument("--static", help="directory with the console build")
    serve.set_defaults(fn=_cmd_serve)

    sweep = sub.add_parser("sweep-fit", help="polynomial model sweep over a cloud")
    sweep.add_argument("--cloud", required=True, help="PCD file")
    sweep.add_argument("--max-degree", type=int, default=10)
    sweep.add_argument("--out", help="CSV output path")
    sweep.set_defaults(fn=_cmd_sweep_fit)

    ev = sub.add_parser("eval", help="metrics for a persisted run")
    ev.add_argument("--run", required=True, help="run directory")
    ev.set_defaults(fn=_cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
