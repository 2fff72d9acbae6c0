"""Run-directory persistence: append-only event log plus artifact files.

Layout of a run directory:
    events.jsonl      one {seq, t_sim_s, kind, payload} object per line,
                      flushed per event so a crash leaves an intact prefix
    phantom.json      the phantom spec used
    config.json       run configuration
    clouds/           PCD artifacts per cycle
    surfaces/         fitted-surface JSON per cycle
    plans/            CutPlan JSON per cycle
    snapshots/        PGM depth/label exports plus camera sidecars
    metrics.json      final metrics (written once at completion)
"""

from __future__ import annotations

import json
import os
from pathlib import Path


class EventLog:
    """Append-only JSONL event log with per-event flush."""

    def __init__(self, path: Path | None):
        self.path = Path(path) if path is not None else None
        self.events: list[dict] = []
        self._fh = None
        self._subscribers: list = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", buffering=1)

    def append(self, t_sim_s: float, kind: str, payload: dict) -> dict:
        event = {
            "seq": len(self.events),
            "t_sim_s": round(float(t_sim_s), 9),
            "kind": kind,
            "payload": payload,
        }
        self.events.append(event)
        if self._fh is not None:
            self._fh.write(json.dumps(event) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
        for cb in list(self._subscribers):
            cb(event)
        return event

    def subscribe(self, callback) -> None:
        self._subscribers.append(callback)

    def unsubscribe(self, callback) -> None:
        if callback in self._subscribers:
            self._subscribers.remove(callback)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_events(run_dir) -> list[dict]:
    """Read events.jsonl, tolerating a torn final line after a crash."""
    path = Path(run_dir) / "events.jsonl"
    events = []
    if not path.exists():
        return events
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError:
                break  # torn tail from a crash; the prefix stays valid
    return events


def run_status(run_dir) -> str:
    """Terminal status from the event log; 'aborted' when no run_complete exists."""
    events = read_events(run_dir)
    if not events:
        return "aborted"
    for ev in reversed(events):
        if ev["kind"] == "run_complete":
            return ev["payload"]["status"]
    return "aborted"


def write_json(path, doc: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
