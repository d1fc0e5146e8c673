"""Judge final answers against gold and aggregate accuracies.

Matching rules are deliberately explicit and configurable: choice answers
reduce to an option label (tolerant of wrappers, stated-answer phrasing, and
verbatim option text), numeric answers are parsed with unit text stripped,
and text answers compare under configurable normalization. Dataset and
overall averages are sample-weighted: sum(n_i * acc_i) / sum(n_i).
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .agents import normalize_input
from .backend import CompletionBackend
from .config import RunConfig
from .errors import (
    BackendError,
    ConfigError,
    EmptyInput,
    EmptyResponse,
    SchemaError,
    UnknownGroupKey,
    Unextractable,
)
from .messages import CompletionRequest, RequestTag, request_digest
from .orchestrator import SolveOutcome, TERMINATION_ALL_PASSED, TERMINATION_ERROR
from .prompts import render_prompt
from .steps import SolverOutput, Step
from .trace import SolveTrace, TraceRecorder

TIMING_GROUP_KEYS = ("question_type", "answer_type", "category", "difficulty")

FEEDBACK_CATEGORIES = ("interpreter", "aligner", "scholar", "solver", "no_regeneration")


@dataclass
class JudgeConfig:
    float_abs_tol: float = 1e-3
    float_rel_tol: float = 1e-2
    casefold: bool = True
    strip_punctuation: bool = True
    collapse_whitespace: bool = True

    def validate(self) -> None:
        if self.float_abs_tol < 0 or self.float_rel_tol < 0:
            raise ConfigError("judge tolerances must be >= 0")


@dataclass(frozen=True)
class NormalizedAnswer:
    kind: str  # choice | integer | float | text
    value: str | int | float


_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)
_ANSWER_PREFIX_RE = re.compile(
    r"^\s*(?:the\s+)?(?:final\s+)?(?:answer|result)\s*(?:is|:|=)\s*", re.IGNORECASE
)


def normalize_text(text: str, cfg: JudgeConfig | None = None) -> str:
    cfg = cfg or JudgeConfig()
    if cfg.casefold:
        text = text.casefold()
    if cfg.strip_punctuation:
        text = _PUNCT_RE.sub(" ", text)
    if cfg.collapse_whitespace:
        text = " ".join(text.split())
    else:
        text = text.strip()
    return text


_LABEL_ONLY_RE = re.compile(r"[^\w]{0,2}([A-Ja-j])[^\w]{0,2}$")
_STATED_LABEL_RE = re.compile(
    r"(?:answer|option|choice)\s*(?:is|:|=)?\s*\(?([A-Ja-j])\)?(?![A-Za-z])", re.IGNORECASE
)
_LEADING_LABEL_RE = re.compile(r"^\(?([A-Ja-j])[\).:]\s")
_TRAILING_LABEL_RE = re.compile(r"\(([A-Ja-j])\)\s*\.?\s*$")

_NUMBER_RE = re.compile(
    r"[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][-+]?\d+)?|[-+]?\.\d+"
)
_FRACTION_RE = re.compile(r"(-?\d+)\s*/\s*(\d+)")


def _extract_label(text: str, labels: set[str]) -> str | None:
    stripped = text.strip()
    match = _LABEL_ONLY_RE.fullmatch(stripped)
    if match and match.group(1).upper() in labels:
        return match.group(1).upper()
    for candidate in reversed(_STATED_LABEL_RE.findall(stripped)):
        if candidate.upper() in labels:
            return candidate.upper()
    match = _LEADING_LABEL_RE.match(stripped)
    if match and match.group(1).upper() in labels:
        return match.group(1).upper()
    match = _TRAILING_LABEL_RE.search(stripped)
    if match and match.group(1).upper() in labels:
        return match.group(1).upper()
    return None


def _parse_number(segment: str, kind: str) -> int | float | None:
    fraction = _FRACTION_RE.match(segment.strip())
    if fraction and kind == "float":
        numerator, denominator = int(fraction.group(1)), int(fraction.group(2))
        if denominator != 0:
            return numerator / denominator
    match = _NUMBER_RE.search(segment)
    if not match:
        return None
    literal = match.group(0).replace(",", "")
    value = float(literal)
    if kind == "integer":
        if value != int(value):
            return None
        return int(value)
    return value


def _extract_number(text: str, kind: str) -> int | float | None:
    stripped = text.strip()
    segments: list[str] = []
    if "=" in stripped:
        segments.append(stripped.rsplit("=", 1)[1])
    prefix_match = _ANSWER_PREFIX_RE.match(stripped)
    if prefix_match:
        segments.append(stripped[prefix_match.end():])
    stated = re.search(r"(?:answer|result)\s*(?:is|:|=)\s*(.+)", stripped, re.IGNORECASE)
    if stated:
        segments.append(stated.group(1))
    segments.append(stripped)
    for segment in segments:
        value = _parse_number(segment, kind)
        if value is not None:
            return value
    return None


def extract_answer(
    output: SolverOutput,
    answer_type: str,
    options=None,
    cfg: JudgeConfig | None = None,
) -> NormalizedAnswer:
    """Normalize a solver output for judging; raises Unextractable when no
    usable answer can be recovered."""
    cfg = cfg or JudgeConfig()
    text = output.final_answer.strip() or output.raw.strip()
    if not text:
        raise Unextractable("solver output is empty")

    if answer_type == "choice":
        if not options:
            raise Unextractable("choice answer without options")
        labels = {o.label.upper() for o in options}
        label = _extract_label(text, labels)
        if label is None:
            bare = _ANSWER_PREFIX_RE.sub("", text)
            normalized = normalize_text(bare, cfg)
            matches = {o.label.upper() for o in options if normalize_text(o.text, cfg) == normalized}
            if len(matches) == 1:
                label = matches.pop()
        if label is None:
            raise Unextractable(f"no option label recoverable from {text!r}")
        return NormalizedAnswer(kind="choice", value=label)

    if answer_type in ("integer", "float"):
        value = _extract_number(text, answer_type)
        if value is None:
            raise Unextractable(f"no {answer_type} recoverable from {text!r}")
        return NormalizedAnswer(kind=answer_type, value=value)

    bare = _ANSWER_PREFIX_RE.sub("", text)
    return NormalizedAnswer(kind="text", value=normalize_text(bare, cfg))


def judge(
    pred: NormalizedAnswer | None,
    gold: str,
    answer_type: str,
    cfg: JudgeConfig | None = None,
) -> bool:
    """Total judgment: choice and integer are exact, float uses
    max(abs_tol, rel_tol * |gold|), text compares normalized."""
    cfg = cfg or JudgeConfig()
    if pred is None:
        return False
    if answer_type == "choice":
        return str(pred.value).upper() == gold.strip().upper()
    if answer_type == "integer":
        try:
            return int(pred.value) == int(gold)
        except (TypeError, ValueError):
            return False
    if answer_type == "float":
        try:
            gold_value = float(gold)
            pred_value = float(pred.value)
        except (TypeError, ValueError):
            return False
        return abs(pred_value - gold_value) <= max(
            cfg.float_abs_tol, cfg.float_rel_tol * abs(gold_value)
        )
    return str(pred.value) == normalize_text(gold, cfg)


@dataclass
class JudgedItem:
    problem_id: str
    dataset: str
    subtask: str
    correct: bool
    flagged: bool = False
    extracted: str | None = None


def judge_item(record, final_answer: str, raw: str = "", cfg: JudgeConfig | None = None) -> JudgedItem:
    """Judge one solved problem; extraction failures flag the item as
    incorrect instead of raising."""
    cfg = cfg or JudgeConfig()
    output = SolverOutput(final_answer=final_answer, process={}, raw=raw or final_answer)
    try:
        pred = extract_answer(output, record.answer_type, record.options, cfg)
    except Unextractable:
        return JudgedItem(
            problem_id=record.id,
            dataset=record.dataset,
            subtask=record.subtask,
            correct=False,
            flagged=True,
        )
    correct = judge(pred, record.gold_answer, record.answer_type, cfg)
    return JudgedItem(
        problem_id=record.id,
        dataset=record.dataset,
        subtask=record.subtask,
        correct=correct,
        extracted=str(pred.value),
    )


@dataclass
class SubtaskScore:
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0


@dataclass
class EvalReport:
    """Accuracy table plus trace-derived statistics.

    ``per_subtask`` is nested dataset -> subtask -> score, because subtask
    abbreviations repeat across datasets. All averages are sample-weighted.
    """

    per_subtask: dict[str, dict[str, SubtaskScore]]
    per_dataset_avg: dict[str, float]
    overall_avg: float
    n_items: int
    feedback_proportions: dict[str, float] | None = None
    timing_buckets: dict[str, dict[str, float]] | None = None
    judge_settings: dict | None = None
    generated_at: str = ""

    def to_dict(self) -> dict:
        return {
            "schema": "eval-report-v1",
            "generated_at": self.generated_at,
            "n_items": self.n_items,
            "judge": self.judge_settings,
            "per_subtask": {
                dataset: {
                    subtask: {"n": s.n, "correct": s.correct, "accuracy": s.accuracy}
                    for subtask, s in subtasks.items()
                }
                for dataset, subtasks in self.per_subtask.items()
            },
            "per_dataset_avg": self.per_dataset_avg,
            "overall_avg": self.overall_avg,
            "feedback_proportions": self.feedback_proportions,
            "timing_buckets": self.timing_buckets,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        try:
            per_subtask = {
                dataset: {
                    subtask: SubtaskScore(n=int(s["n"]), correct=int(s["correct"]))
                    for subtask, s in subtasks.items()
                }
                for dataset, subtasks in data["per_subtask"].items()
            }
            return cls(
                per_subtask=per_subtask,
                per_dataset_avg={k: float(v) for k, v in data["per_dataset_avg"].items()},
                overall_avg=float(data["overall_avg"]),
                n_items=int(data["n_items"]),
                feedback_proportions=data.get("feedback_proportions"),
                timing_buckets=data.get("timing_buckets"),
                judge_settings=data.get("judge"),
                generated_at=data.get("generated_at", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed eval report: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read eval report {path}: {exc}") from exc
        return cls.from_dict(data)


def aggregate(
    items: list[JudgedItem],
    traces: list[SolveTrace] | None = None,
    records_by_id: dict | None = None,
    judge_cfg: JudgeConfig | None = None,
) -> EvalReport:
    """Build the report: per-subtask accuracy plus sample-weighted dataset
    and overall averages; feedback/timing statistics when traces are given."""
    if not items:
        raise EmptyInput("no judged items to aggregate")
    per_subtask: dict[str, dict[str, SubtaskScore]] = {}
    for item in items:
        score = per_subtask.setdefault(item.dataset, {}).setdefault(
            item.subtask, SubtaskScore(n=0, correct=0)
        )
        score.n += 1
        score.correct += int(item.correct)

    per_dataset_avg = {}
    for dataset, subtasks in per_subtask.items():
        total = sum(s.n for s in subtasks.values())
        correct = sum(s.correct for s in subtasks.values())
        per_dataset_avg[dataset] = correct / total
    total = sum(s.n for d in per_subtask.values() for s in d.values())
    correct = sum(s.correct for d in per_subtask.values() for s in d.values())

    feedback = feedback_stats(traces) if traces else None
    timing = None
    if traces and records_by_id:
        timing = {}
        for key in TIMING_GROUP_KEYS:
            buckets = timing_report(traces, records_by_id, key)
            if buckets:
                timing[key] = buckets

    cfg = judge_cfg or JudgeConfig()
    return EvalReport(
        per_subtask=per_subtask,
        per_dataset_avg=per_dataset_avg,
        overall_avg=correct / total,
        n_items=len(items),
        feedback_proportions=feedback,
        timing_buckets=timing,
        judge_settings={
            "float_abs_tol": cfg.float_abs_tol,
            "float_rel_tol": cfg.float_rel_tol,
            "casefold": cfg.casefold,
            "strip_punctuation": cfg.strip_punctuation,
            "collapse_whitespace": cfg.collapse_whitespace,
        },
        generated_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def feedback_stats(traces: list[SolveTrace]) -> dict[str, float]:
    """Rollback-target proportions over contribution events.

    Every rollback contributes one event for its target step; a trace with no
    rollback contributes one no_regeneration event. Proportions sum to 1.
    """
    if not traces:
        raise EmptyInput("no traces for feedback statistics")
    counts = {category: 0 for category in FEEDBACK_CATEGORIES}
    for trace in traces:
        targets = trace.rollback_targets()
        if targets:
            for target in targets:
                counts[target.label] += 1
        else:
            counts["no_regeneration"] += 1
    total = sum(counts.values())
    return {category: count / total for category, count in counts.items()}


def timing_report(
    traces: list[SolveTrace],
    records_by_id: dict,
    group_by: str,
    baseline_s: float | None = None,
) -> dict[str, float]:
    """Mean end-to-end solve seconds per bucket; buckets with no traces are
    omitted. With ``baseline_s`` the means are reported relative to it."""
    if group_by not in TIMING_GROUP_KEYS:
        raise UnknownGroupKey(f"unsupported grouping key: {group_by!r}")
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for trace in traces:
        record = records_by_id.get(trace.problem_id)
        if record is None:
            continue
        key = record.question_type if group_by == "question_type" else getattr(record, group_by)
        if key is None:
            continue
        key = str(key)
        sums[key] = sums.get(key, 0.0) + trace.wall_seconds()
        counts[key] = counts.get(key, 0) + 1
    means = {key: sums[key] / counts[key] for key in sums}
    if baseline_s:
        means = {key: value / baseline_s for key, value in means.items()}
    return means


def run_baseline(problem, mode: str, backend: CompletionBackend, config: RunConfig | None = None) -> SolveOutcome:
    """Single-call baseline: the question, context, and diagram(s) in one
    prompt. ``direct`` asks for the answer outright; ``cot`` adds the
    step-by-step reasoning instruction. No critic is involved."""
    if mode not in ("direct", "cot"):
        raise ConfigError(f"unknown baseline mode: {mode!r}")
    config = config or RunConfig()
    catalog = config.templates()
    bindings = normalize_input(problem, preamble=catalog["userproxy"].system_text)
    messages = render_prompt(
        catalog[mode],
        {
            "diagram": tuple(problem.diagrams),
            "context": problem.context,
            "question": bindings["question_block"],
        },
    )
    request = CompletionRequest(
        messages=tuple(messages),
        model_id=config.backend.model_id,
        temperature=config.backend.temperature,
        max_tokens=config.backend.max_tokens,
        tag=RequestTag(role=mode, iteration=1, problem_id=problem.id),
    )
    recorder = TraceRecorder(problem.id)
    started = time.perf_counter()
    try:
        reply = backend.complete(request)
        text = reply.text.strip()
        if not text:
            raise EmptyResponse(f"empty reply for baseline {mode!r}")
    except (BackendError, EmptyResponse) as exc:
        wall_ms = int((time.perf_counter() - started) * 1000)
        recorder.terminated(
            TERMINATION_ERROR,
            final_answer="",
            iterations_used=1,
            wall_ms_total=wall_ms,
            detail=f"{type(exc).__name__}: {exc}",
        )
        return SolveOutcome(
            final_answer="", trace=recorder.trace, termination=TERMINATION_ERROR, iterations_used=1
        )
    recorder.step_executed(
        Step.SOLVER,
        1,
        prompt_digest=request_digest(request),
        output=reply.text,
        wall_ms=reply.wall_ms,
        prompt_tokens=reply.prompt_tokens,
        completion_tokens=reply.completion_tokens,
    )
    wall_ms = int((time.perf_counter() - started) * 1000)
    recorder.terminated(
        TERMINATION_ALL_PASSED, final_answer=text, iterations_used=1, wall_ms_total=wall_ms
    )
    return SolveOutcome(
        final_answer=text,
        trace=recorder.trace,
        termination=TERMINATION_ALL_PASSED,
        iterations_used=1,
    )
