"""The manager loop: ordered step execution, critic scoring, rollback, tracing.

One solve runs the enabled steps in pipeline order, has the critic score
them, and either terminates (all scores at the pass threshold, or the
iteration budget spent) or rolls back to the lowest-scoring step and
re-executes it together with everything downstream. Every decision lands in
an append-only trace. A solve is strictly sequential internally; many solves
may run concurrently as long as they share only the backend.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

from .agents import align, critique, interpret, normalize_input, research, solve_final
from .backend import CompletionBackend
from .config import RunConfig
from .errors import (
    BackendError,
    ConfigError,
    EmptyResponse,
    ImageDecodeError,
    ParseError,
)
from .messages import CompletionReply, CompletionRequest, request_digest
from .prompts import NOT_AVAILABLE
from .steps import PIPELINE_ORDER, CriticReport, PipelineState, Step
from .trace import SolveTrace, TraceRecorder

TERMINATION_ALL_PASSED = "all_passed"
TERMINATION_BUDGET = "budget_exhausted"
TERMINATION_ERROR = "error"


@dataclass
class SolveOutcome:
    final_answer: str
    trace: SolveTrace
    termination: str
    iterations_used: int


def should_terminate(report: CriticReport, iteration: int, config: RunConfig) -> tuple[bool, str | None]:
    """Stop when every score reaches the pass threshold, or when the
    iteration budget is spent (checked in that order)."""
    if report.passes(config.pass_threshold):
        return True, TERMINATION_ALL_PASSED
    if iteration >= config.max_iterations:
        return True, TERMINATION_BUDGET
    return False, None


def select_rollback(report: CriticReport) -> Step | None:
    """The lowest-scoring step; ties break toward the smallest ordinal."""
    return report.minimum()


def apply_rollback(state: PipelineState, target: Step, feedback: str | None = None) -> PipelineState:
    """Clear the target step and everything downstream, bump the iteration,
    and stage the critic feedback for the target's next prompt."""
    if target not in state.completed:
        raise ValueError(f"rollback target {target.label} was never executed")
    new_state = PipelineState(
        caption=state.caption,
        alignment=state.alignment,
        knowledge=state.knowledge,
        answer=state.answer,
        iteration=state.iteration + 1,
        completed=set(state.completed),
        staged_feedback=dict(state.staged_feedback),
    )
    for step in PIPELINE_ORDER:
        if step.ordinal >= target.ordinal:
            new_state.clear_output(step)
    if feedback:
        new_state.staged_feedback[target] = feedback
    return new_state


class _CallLog:
    """Per-solve backend wrapper capturing (request, reply) pairs for tracing."""

    def __init__(self, inner: CompletionBackend):
        self._inner = inner
        self._calls: list[tuple[CompletionRequest, CompletionReply]] = []

    def complete(self, request: CompletionRequest) -> CompletionReply:
        reply = self._inner.complete(request)
        self._calls.append((request, reply))
        return reply

    def drain(self) -> list[tuple[CompletionRequest, CompletionReply]]:
        calls, self._calls = self._calls, []
        return calls


def _avail(value: str | None) -> str:
    return value if value is not None else NOT_AVAILABLE


def _record_calls(recorder: TraceRecorder, step: Step, iteration: int, output_text: str, calls) -> None:
    digest = request_digest(calls[-1][0]) if calls else ""
    wall = sum(reply.wall_ms for _, reply in calls)
    prompt_tokens = sum(reply.prompt_tokens for _, reply in calls)
    completion_tokens = sum(reply.completion_tokens for _, reply in calls)
    recorder.step_executed(
        step,
        iteration,
        prompt_digest=digest,
        output=output_text,
        wall_ms=wall,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
    )


def _execute_step(
    step: Step,
    state: PipelineState,
    problem,
    bindings: dict[str, str],
    catalog,
    backend: _CallLog,
    config: RunConfig,
    recorder: TraceRecorder,
) -> None:
    feedback = state.staged_feedback.pop(step, None)
    call_kwargs = dict(
        iteration=state.iteration,
        problem_id=problem.id,
        feedback=feedback,
        model_id=config.backend.model_id,
        temperature=config.backend.temperature,
        max_tokens=config.backend.max_tokens,
    )
    if step is Step.INTERPRETER:
        if not problem.diagrams:
            return  # text-only record: nothing to caption; downstream sees NOT_AVAILABLE
        output = interpret(problem.diagrams, catalog["interpreter"], backend, **call_kwargs)
        output_text = output
    elif step is Step.ALIGNER:
        output = align(
            _avail(state.caption),
            problem.context,
            bindings["question"],
            catalog["aligner"],
            backend,
            **call_kwargs,
        )
        output_text = output
    elif step is Step.SCHOLAR:
        output = research(
            _avail(state.alignment),
            _avail(state.caption),
            problem.context,
            bindings["question"],
            catalog["scholar"],
            backend,
            **call_kwargs,
        )
        output_text = output
    else:
        try:
            output = solve_final(
                _avail(state.knowledge),
                _avail(state.alignment),
                _avail(state.caption),
                bindings["question_block"],
                catalog["solver"],
                backend,
                **call_kwargs,
            )
        except ParseError as exc:
            recorder.parse_error("solver", state.iteration, str(exc))
            backend.drain()
            raise
        output_text = output.raw
    state.record_output(step, output)
    _record_calls(recorder, step, state.iteration, output_text, backend.drain())


def _run_critic(
    state: PipelineState,
    problem,
    catalog,
    backend: _CallLog,
    config: RunConfig,
    recorder: TraceRecorder,
) -> CriticReport:
    scored = tuple(
        s for s in PIPELINE_ORDER if s in config.enabled_steps and s in state.completed
    )
    clamps: dict[Step, float] = {}
    try:
        report, clamps = critique(
            state.answer,
            _avail(state.knowledge),
            _avail(state.alignment),
            _avail(state.caption),
            catalog["critic"],
            backend,
            enabled=scored,
            iteration=state.iteration,
            problem_id=problem.id,
            model_id=config.backend.model_id,
            temperature=config.backend.temperature,
            max_tokens=config.backend.max_tokens,
        )
    except ParseError as exc:
        # Fail conservative: an unparsable report scores every step 0, which
        # sends the rollback to the earliest enabled step.
        recorder.parse_error("critic", state.iteration, str(exc))
        report = CriticReport(scores={s: 0 for s in scored}, feedback={})
    calls = backend.drain()
    wall = sum(reply.wall_ms for _, reply in calls)
    for step in sorted(clamps, key=lambda s: s.ordinal):
        recorder.score_clamped(step, clamps[step], report.scores[step], state.iteration)
    recorder.critic_issued(report, state.iteration, wall_ms=wall)
    return report


def solve(problem, config: RunConfig, backend: CompletionBackend) -> SolveOutcome:
    """Run the full pipeline on one problem.

    Executes the enabled steps in ordinal order, then the critic; loops with
    rollback until every score passes or the iteration budget is exhausted.
    Backend and parsing failures terminate the solve with reason ``error``
    and the partial trace preserved.
    """
    config.validate()
    enabled = [s for s in PIPELINE_ORDER if s in config.enabled_steps]
    if not enabled:
        raise ConfigError("no pipeline steps enabled")
    catalog = config.templates()
    call_log = _CallLog(backend)
    recorder = TraceRecorder(problem.id)
    state = PipelineState()
    bindings = normalize_input(problem, preamble=catalog["userproxy"].system_text)
    started = time.perf_counter()
    termination = TERMINATION_ERROR
    detail = ""

    try:
        resume_ordinal = enabled[0].ordinal
        while True:
            for step in enabled:
                if step.ordinal < resume_ordinal:
                    continue
                _execute_step(step, state, problem, bindings, catalog, call_log, config, recorder)
            if not config.critic_enabled:
                # Single forward pass: nothing scores the steps, so the pass
                # stands as accepted.
                termination = TERMINATION_ALL_PASSED
                break
            report = _run_critic(state, problem, catalog, call_log, config, recorder)
            done, reason = should_terminate(report, state.iteration, config)
            if done:
                termination = reason
                break
            target = select_rollback(report)
            recorder.rollback_chosen(target, state.iteration)
            state = apply_rollback(state, target, feedback=report.feedback.get(target))
            resume_ordinal = target.ordinal
    except (BackendError, ParseError, EmptyResponse, ImageDecodeError) as exc:
        termination = TERMINATION_ERROR
        detail = f"{type(exc).__name__}: {exc}"

    final_answer = state.answer.final_answer if state.answer is not None else ""
    wall_ms = int((time.perf_counter() - started) * 1000)
    recorder.terminated(
        termination,
        final_answer=final_answer,
        iterations_used=state.iteration,
        wall_ms_total=wall_ms,
        detail=detail,
    )
    return SolveOutcome(
        final_answer=final_answer,
        trace=recorder.trace,
        termination=termination,
        iterations_used=state.iteration,
    )
