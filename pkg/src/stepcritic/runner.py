"""Resumable batch execution with per-problem trace persistence.

Each problem gets one trace file under <out>/traces/; a problem whose trace
already ends in a Terminated event is skipped on rerun, so a completed output
directory replays with zero backend calls. The manifest is written atomically
at run end.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from uuid import uuid4

from .backend import CompletionBackend
from .config import RunConfig
from .datasets import ProblemRecord
from .errors import SchemaError
from .evaluation import run_baseline
from .orchestrator import TERMINATION_ERROR, solve
from .trace import TraceRecorder, read_trace, write_trace

logger = logging.getLogger("stepcritic.runner")

_UNSAFE_ID_RE = re.compile(r"[^A-Za-z0-9._-]")


def sanitize_id(problem_id: str) -> str:
    return _UNSAFE_ID_RE.sub("_", problem_id) or "problem"


def trace_path(out_dir: Path, problem_id: str) -> Path:
    return out_dir / "traces" / f"{sanitize_id(problem_id)}.jsonl"


def is_completed(path: Path) -> bool:
    """A trace counts as completed when its last line is a Terminated event."""
    if not path.is_file():
        return False
    try:
        trace = read_trace(path)
    except SchemaError:
        return False
    return trace.terminated() is not None


def _new_run_id() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return f"{stamp}_{uuid4().hex[:8]}"


@dataclass
class RunManifest:
    run_id: str
    config_digest: str
    dataset: str
    started_at: str
    finished_at: str = ""
    jobs: int = 1
    baseline: str | None = None
    problems: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": "run-manifest-v1",
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "dataset": self.dataset,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "jobs": self.jobs,
            "baseline": self.baseline,
            "problems": self.problems,
        }

    def write_atomic(self, path: Path) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            run_id=data["run_id"],
            config_digest=data["config_digest"],
            dataset=data["dataset"],
            started_at=data["started_at"],
            finished_at=data.get("finished_at", ""),
            jobs=data.get("jobs", 1),
            baseline=data.get("baseline"),
            problems=data.get("problems", {}),
        )


def _summary_from_trace(path: Path, out_dir: Path) -> dict:
    trace = read_trace(path)
    terminated = trace.terminated()
    return {
        "termination": terminated.reason,
        "iterations_used": terminated.iterations_used,
        "final_answer": terminated.final_answer,
        "trace_file": str(path.relative_to(out_dir)),
    }


def run_batch(
    records: list[ProblemRecord],
    config: RunConfig,
    backend: CompletionBackend,
    out_dir: str | Path,
    jobs: int | None = None,
    baseline: str | None = None,
    dataset_ref: str = "",
) -> RunManifest:
    """Solve every record, resuming past completed problems.

    Per-problem failures are recorded (an error trace is still written) and
    the run continues; only configuration-level errors abort.
    """
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    config.validate()
    jobs = jobs or config.jobs

    manifest = RunManifest(
        run_id=_new_run_id(),
        config_digest=config.digest(),
        dataset=dataset_ref,
        started_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        jobs=jobs,
        baseline=baseline,
    )
    manifest_lock = threading.Lock()

    todo: list[ProblemRecord] = []
    for record in records:
        path = trace_path(out_dir, record.id)
        if is_completed(path):
            summary = _summary_from_trace(path, out_dir)
            summary["resumed"] = True
            manifest.problems[record.id] = summary
        else:
            todo.append(record)

    def work(record: ProblemRecord) -> None:
        path = trace_path(out_dir, record.id)
        try:
            if baseline:
                outcome = run_baseline(record, baseline, backend, config)
            else:
                outcome = solve(record, config, backend)
            write_trace(outcome.trace, path)
            summary = {
                "termination": outcome.termination,
                "iterations_used": outcome.iterations_used,
                "final_answer": outcome.final_answer,
                "trace_file": str(path.relative_to(out_dir)),
            }
            if outcome.termination == TERMINATION_ERROR:
                terminated = outcome.trace.terminated()
                summary["error"] = terminated.detail if terminated else ""
        except Exception as exc:  # per-problem isolation; the run continues
            logger.warning("problem %s failed: %s", record.id, exc)
            recorder = TraceRecorder(record.id)
            recorder.terminated(TERMINATION_ERROR, detail=f"{type(exc).__name__}: {exc}")
            write_trace(recorder.trace, path)
            summary = {
                "termination": TERMINATION_ERROR,
                "iterations_used": 1,
                "final_answer": "",
                "trace_file": str(path.relative_to(out_dir)),
                "error": f"{type(exc).__name__}: {exc}",
            }
        with manifest_lock:
            manifest.problems[record.id] = summary

    if todo:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(work, todo))

    manifest.finished_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    manifest.write_atomic(out_dir / "run_manifest.json")
    return manifest
