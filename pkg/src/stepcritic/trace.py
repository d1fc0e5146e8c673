"""Append-only solve traces: typed events, JSONL persistence, invariant checks.

One trace file per problem; one JSON object per line; timestamps in UTC.
Serialization is deterministic (sorted keys), so two traces are comparable
byte-for-byte once timestamps and wall-clock fields are normalized out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import SchemaError
from .steps import PIPELINE_ORDER, CriticReport, Step

TERMINATION_REASONS = ("all_passed", "budget_exhausted", "error")


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass(frozen=True)
class StepExecuted:
    step: Step
    iteration: int
    prompt_digest: str
    output: str
    wall_ms: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    ts: str = ""


@dataclass(frozen=True)
class CriticIssued:
    scores: dict[Step, int]
    feedback: dict[Step, str]
    iteration: int
    wall_ms: int = 0
    ts: str = ""

    def report(self) -> CriticReport:
        return CriticReport(scores=dict(self.scores), feedback=dict(self.feedback))


@dataclass(frozen=True)
class RollbackChosen:
    target_step: Step
    iteration: int
    ts: str = ""


@dataclass(frozen=True)
class ScoreClamped:
    step: Step
    original: float
    clamped: int
    iteration: int
    ts: str = ""


@dataclass(frozen=True)
class ParseErrorNoted:
    role: str
    iteration: int
    detail: str
    ts: str = ""


@dataclass(frozen=True)
class Terminated:
    reason: str  # all_passed | budget_exhausted | error
    final_answer: str = ""
    iterations_used: int = 1
    wall_ms_total: int = 0
    detail: str = ""
    ts: str = ""


TraceEvent = StepExecuted | CriticIssued | RollbackChosen | ScoreClamped | ParseErrorNoted | Terminated

_EVENT_NAMES = {
    StepExecuted: "step_executed",
    CriticIssued: "critic_issued",
    RollbackChosen: "rollback_chosen",
    ScoreClamped: "score_clamped",
    ParseErrorNoted: "parse_error",
    Terminated: "terminated",
}


def event_to_dict(event: TraceEvent) -> dict:
    if isinstance(event, StepExecuted):
        payload = {
            "step": event.step.label,
            "iteration": event.iteration,
            "prompt_digest": event.prompt_digest,
            "output": event.output,
            "wall_ms": event.wall_ms,
            "prompt_tokens": event.prompt_tokens,
            "completion_tokens": event.completion_tokens,
        }
    elif isinstance(event, CriticIssued):
        payload = {
            "scores": {s.label: v for s, v in sorted(event.scores.items(), key=lambda kv: kv[0].ordinal)},
            "feedback": {s.label: v for s, v in sorted(event.feedback.items(), key=lambda kv: kv[0].ordinal)},
            "iteration": event.iteration,
            "wall_ms": event.wall_ms,
        }
    elif isinstance(event, RollbackChosen):
        payload = {"target_step": event.target_step.label, "iteration": event.iteration}
    elif isinstance(event, ScoreClamped):
        payload = {
            "step": event.step.label,
            "original": event.original,
            "clamped": event.clamped,
            "iteration": event.iteration,
        }
    elif isinstance(event, ParseErrorNoted):
        payload = {"role": event.role, "iteration": event.iteration, "detail": event.detail}
    elif isinstance(event, Terminated):
        payload = {
            "reason": event.reason,
            "final_answer": event.final_answer,
            "iterations_used": event.iterations_used,
            "wall_ms_total": event.wall_ms_total,
            "detail": event.detail,
        }
    else:  # pragma: no cover - exhaustive by construction
        raise SchemaError(f"unknown event type: {type(event).__name__}")
    payload["event"] = _EVENT_NAMES[type(event)]
    payload["ts"] = event.ts
    return payload


def event_from_dict(data: dict) -> TraceEvent:
    try:
        kind = data["event"]
        ts = data.get("ts", "")
        if kind == "step_executed":
            return StepExecuted(
                step=Step.from_label(data["step"]),
                iteration=int(data["iteration"]),
                prompt_digest=data["prompt_digest"],
                output=data["output"],
                wall_ms=int(data.get("wall_ms", 0)),
                prompt_tokens=int(data.get("prompt_tokens", 0)),
                completion_tokens=int(data.get("completion_tokens", 0)),
                ts=ts,
            )
        if kind == "critic_issued":
            return CriticIssued(
                scores={Step.from_label(k): int(v) for k, v in data["scores"].items()},
                feedback={Step.from_label(k): str(v) for k, v in data.get("feedback", {}).items()},
                iteration=int(data["iteration"]),
                wall_ms=int(data.get("wall_ms", 0)),
                ts=ts,
            )
        if kind == "rollback_chosen":
            return RollbackChosen(
                target_step=Step.from_label(data["target_step"]),
                iteration=int(data["iteration"]),
                ts=ts,
            )
        if kind == "score_clamped":
            return ScoreClamped(
                step=Step.from_label(data["step"]),
                original=float(data["original"]),
                clamped=int(data["clamped"]),
                iteration=int(data["iteration"]),
                ts=ts,
            )
        if kind == "parse_error":
            return ParseErrorNoted(
                role=data["role"], iteration=int(data["iteration"]), detail=data["detail"], ts=ts
            )
        if kind == "terminated":
            if data["reason"] not in TERMINATION_REASONS:
                raise SchemaError(f"unknown termination reason: {data['reason']!r}")
            return Terminated(
                reason=data["reason"],
                final_answer=data.get("final_answer", ""),
                iterations_used=int(data.get("iterations_used", 1)),
                wall_ms_total=int(data.get("wall_ms_total", 0)),
                detail=data.get("detail", ""),
                ts=ts,
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed trace event: {exc}") from exc
    raise SchemaError(f"unknown trace event kind: {kind!r}")


@dataclass
class SolveTrace:
    """Ordered event log for one solve."""

    problem_id: str
    events: list[TraceEvent] = field(default_factory=list)

    def terminated(self) -> Terminated | None:
        if self.events and isinstance(self.events[-1], Terminated):
            return self.events[-1]
        return None

    def step_events(self) -> list[StepExecuted]:
        return [e for e in self.events if isinstance(e, StepExecuted)]

    def critic_events(self) -> list[CriticIssued]:
        return [e for e in self.events if isinstance(e, CriticIssued)]

    def rollback_targets(self) -> list[Step]:
        return [e.target_step for e in self.events if isinstance(e, RollbackChosen)]

    def wall_seconds(self) -> float:
        term = self.terminated()
        return term.wall_ms_total / 1000.0 if term else 0.0

    def to_lines(self, normalize_time: bool = False) -> list[str]:
        lines = []
        for event in self.events:
            payload = event_to_dict(event)
            if normalize_time:
                payload["ts"] = ""
                for key in ("wall_ms", "wall_ms_total"):
                    if key in payload:
                        payload[key] = 0
            lines.append(json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False))
        return lines


def trace_fingerprint(trace: SolveTrace) -> str:
    """Deterministic serialization with timestamps/wall-clock zeroed out."""
    return "\n".join(trace.to_lines(normalize_time=True))


def write_trace(trace: SolveTrace, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(trace.to_lines()) + "\n", encoding="utf-8")


def read_trace(path: str | Path, problem_id: str | None = None) -> SolveTrace:
    path = Path(path)
    events: list[TraceEvent] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        events.append(event_from_dict(data))
    return SolveTrace(problem_id=problem_id or path.stem, events=events)


def validate_events(trace: SolveTrace, enabled: set[Step] | None = None) -> None:
    """Check the trace invariants; raises SchemaError on the first violation.

    - exactly one Terminated event, and it is last;
    - within one iteration, StepExecuted ordinals strictly increase;
    - every RollbackChosen follows a CriticIssued of the same iteration and
      targets that report's smallest-ordinal minimum score;
    - after a rollback, every enabled step at or past the target re-executes
      before the next CriticIssued;
    - the first StepExecuted of iteration k >= 2 is the rollback target of
      iteration k - 1;
    - critic iterations advance 1, 2, 3, ... without gaps.

    ``enabled`` defaults to the steps observed in iteration 1.
    """
    events = trace.events
    if not events:
        raise SchemaError(f"trace {trace.problem_id}: empty trace")
    terminated_idx = [i for i, e in enumerate(events) if isinstance(e, Terminated)]
    if len(terminated_idx) != 1 or terminated_idx[0] != len(events) - 1:
        raise SchemaError(f"trace {trace.problem_id}: expected exactly one trailing Terminated event")

    last_ordinal: dict[int, int] = {}
    for event in events:
        if isinstance(event, StepExecuted):
            prev = last_ordinal.get(event.iteration)
            if prev is not None and event.step.ordinal <= prev:
                raise SchemaError(
                    f"trace {trace.problem_id}: step ordinals not strictly increasing "
                    f"in iteration {event.iteration}"
                )
            last_ordinal[event.iteration] = event.step.ordinal

    if enabled is None:
        enabled = {e.step for e in events if isinstance(e, StepExecuted) and e.iteration == 1}

    critic_iterations = [e.iteration for e in events if isinstance(e, CriticIssued)]
    if critic_iterations != list(range(1, len(critic_iterations) + 1)):
        raise SchemaError(f"trace {trace.problem_id}: critic iterations not consecutive from 1")

    last_report: CriticIssued | None = None
    pending_target: Step | None = None
    pending_idx = -1
    for idx, event in enumerate(events):
        if isinstance(event, CriticIssued):
            if pending_target is not None:
                executed = {
                    e.step for e in events[pending_idx + 1 : idx] if isinstance(e, StepExecuted)
                }
                required = {s for s in enabled if s.ordinal >= pending_target.ordinal}
                if not required <= executed:
                    missing = sorted(s.label for s in required - executed)
                    raise SchemaError(
                        f"trace {trace.problem_id}: steps {missing} not re-executed after "
                        f"rollback to {pending_target.label}"
                    )
                pending_target = None
            last_report = event
        elif isinstance(event, RollbackChosen):
            if last_report is None or last_report.iteration != event.iteration:
                raise SchemaError(
                    f"trace {trace.problem_id}: rollback in iteration {event.iteration} "
                    "has no matching critic report"
                )
            expected = min(
                last_report.scores, key=lambda s: (last_report.scores[s], s.ordinal)
            )
            if event.target_step is not expected:
                raise SchemaError(
                    f"trace {trace.problem_id}: rollback target {event.target_step.label} is not "
                    f"the smallest-ordinal minimum ({expected.label})"
                )
            pending_target = event.target_step
            pending_idx = idx

    first_step_by_iter: dict[int, Step] = {}
    for event in events:
        if isinstance(event, StepExecuted):
            first_step_by_iter.setdefault(event.iteration, event.step)
    targets_by_iter = {
        e.iteration: e.target_step for e in events if isinstance(e, RollbackChosen)
    }
    for iteration, step in first_step_by_iter.items():
        if iteration >= 2:
            target = targets_by_iter.get(iteration - 1)
            if target is None or step is not target:
                raise SchemaError(
                    f"trace {trace.problem_id}: iteration {iteration} starts at {step.label}, "
                    f"expected rollback target of iteration {iteration - 1}"
                )


class TraceRecorder:
    """Builds a SolveTrace, stamping events as they happen."""

    def __init__(self, problem_id: str):
        self.trace = SolveTrace(problem_id=problem_id)

    def step_executed(
        self,
        step: Step,
        iteration: int,
        prompt_digest: str,
        output: str,
        wall_ms: int = 0,
        prompt_tokens: int = 0,
        completion_tokens: int = 0,
    ) -> None:
        self.trace.events.append(
            StepExecuted(
                step=step,
                iteration=iteration,
                prompt_digest=prompt_digest,
                output=output,
                wall_ms=wall_ms,
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
                ts=utc_now(),
            )
        )

    def critic_issued(self, report: CriticReport, iteration: int, wall_ms: int = 0) -> None:
        self.trace.events.append(
            CriticIssued(
                scores=dict(report.scores),
                feedback=dict(report.feedback),
                iteration=iteration,
                wall_ms=wall_ms,
                ts=utc_now(),
            )
        )

    def rollback_chosen(self, target: Step, iteration: int) -> None:
        self.trace.events.append(
            RollbackChosen(target_step=target, iteration=iteration, ts=utc_now())
        )

    def score_clamped(self, step: Step, original: float, clamped: int, iteration: int) -> None:
        self.trace.events.append(
            ScoreClamped(step=step, original=original, clamped=clamped, iteration=iteration, ts=utc_now())
        )

    def parse_error(self, role: str, iteration: int, detail: str) -> None:
        self.trace.events.append(
            ParseErrorNoted(role=role, iteration=iteration, detail=detail, ts=utc_now())
        )

    def terminated(
        self,
        reason: str,
        final_answer: str = "",
        iterations_used: int = 1,
        wall_ms_total: int = 0,
        detail: str = "",
    ) -> None:
        self.trace.events.append(
            Terminated(
                reason=reason,
                final_answer=final_answer,
                iterations_used=iterations_used,
                wall_ms_total=wall_ms_total,
                detail=detail,
                ts=utc_now(),
            )
        )
