"""The LLM-facing roles: prompt construction, backend calls, reply parsing.

Each operation renders its role template, performs one completion call, and
parses the reply into a typed output. Dataflow follows the fixed signatures:
the interpreter sees only the diagram(s); the aligner fuses caption, context,
and question; the scholar adds its knowledge pass over all four texts; the
solver consumes knowledge/alignment/caption plus the verbatim question block;
the critic reviews answer/knowledge/alignment/caption and emits scores.
"""

from __future__ import annotations

import io
import json
import re
from typing import Sequence

from PIL import Image, UnidentifiedImageError

from .backend import CompletionBackend
from .errors import ConfigError, EmptyResponse, ImageDecodeError, ParseError
from .messages import CompletionRequest, ImagePayload, RequestTag
from .prompts import NOT_AVAILABLE, PromptTemplate, render_prompt
from .steps import SCORE_MAX, SCORE_MIN, CriticReport, SolverOutput, Step

# Key aliases the critic may use when it answers with the rubric's dimension
# names instead of step names.
_STEP_ALIASES: dict[Step, tuple[str, ...]] = {
    Step.INTERPRETER: ("interpreter", "caption"),
    Step.ALIGNER: ("aligner", "alignment"),
    Step.SCHOLAR: ("scholar", "knowledge"),
    Step.SOLVER: ("solver", "solution", "answer"),
}

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)\s*```", re.IGNORECASE | re.DOTALL)


def verify_diagrams(diagrams: Sequence[ImagePayload]) -> None:
    """Ensure every payload decodes as a raster image."""
    for k, payload in enumerate(diagrams, start=1):
        try:
            with Image.open(io.BytesIO(payload.data)) as image:
                image.verify()
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise ImageDecodeError(f"diagram {k} does not decode: {exc}") from exc


def _require_role(template: PromptTemplate, role: str) -> None:
    if template.role != role:
        raise ConfigError(f"expected a {role!r} template, got {template.role!r}")


def _complete_nonempty(backend: CompletionBackend, request: CompletionRequest) -> str:
    """One completion, retried once on an empty reply, then surfaced."""
    reply = backend.complete(request)
    if reply.text.strip():
        return reply.text
    reply = backend.complete(request)
    if reply.text.strip():
        return reply.text
    raise EmptyResponse(f"empty reply for role {request.tag.role!r}")


def _request(
    template: PromptTemplate,
    bindings: dict,
    *,
    role: str,
    iteration: int,
    problem_id: str | None,
    model_id: str,
    temperature: float,
    max_tokens: int,
) -> CompletionRequest:
    messages = render_prompt(template, bindings)
    return CompletionRequest(
        messages=tuple(messages),
        model_id=model_id,
        temperature=temperature,
        max_tokens=max_tokens,
        tag=RequestTag(role=role, iteration=iteration, problem_id=problem_id),
    )


def interpret(
    diagrams: Sequence[ImagePayload],
    template: PromptTemplate,
    backend: CompletionBackend,
    *,
    iteration: int = 1,
    problem_id: str | None = None,
    feedback: str | None = None,
    model_id: str = "",
    temperature: float = 0.0,
    max_tokens: int = 2048,
) -> str:
    """Caption the diagram(s). The request carries the images inline, in
    record order, and nothing else from the problem."""
    _require_role(template, "interpreter")
    verify_diagrams(diagrams)
    request = _request(
        template,
        {"diagram": tuple(diagrams), "feedback": feedback},
        role="interpreter",
        iteration=iteration,
        problem_id=problem_id,
        model_id=model_id,
        temperature=temperature,
        max_tokens=max_tokens,
    )
    return _complete_nonempty(backend, request)


def align(
    caption: str,
    context: str,
    question: str,
    template: PromptTemplate,
    backend: CompletionBackend,
    *,
    iteration: int = 1,
    problem_id: str | None = None,
    feedback: str | None = None,
    model_id: str = "",
    temperature: float = 0.0,
    max_tokens: int = 2048,
) -> str:
    """Fuse caption, context, and question into one grounded statement."""
    _require_role(template, "aligner")
    request = _request(
        template,
        {"caption": caption, "context": context, "question": question, "feedback": feedback},
        role="aligner",
        iteration=iteration,
        problem_id=problem_id,
        model_id=model_id,
        temperature=temperature,
        max_tokens=max_tokens,
    )
    return _complete_nonempty(backend, request)


def research(
    alignment: str,
    caption: str,
    context: str,
    question: str,
    template: PromptTemplate,
    backend: CompletionBackend,
    *,
    iteration: int = 1,
    problem_id: str | None = None,
    feedback: str | None = None,
    model_id: str = "",
    temperature: float = 0.0,
    max_tokens: int = 2048,
) -> str:
    """Recall the domain knowledge the problem needs (single completion; no
    external retrieval)."""
    _require_role(template, "scholar")
    request = _request(
        template,
        {
            "alignment": alignment,
            "caption": caption,
            "context": context,
            "question": question,
            "feedback": feedback,
        },
        role="scholar",
        iteration=iteration,
        problem_id=problem_id,
        model_id=model_id,
        temperature=temperature,
        max_tokens=max_tokens,
    )
    return _complete_nonempty(backend, request)


def solve_final(
    knowledge: str,
    alignment: str,
    caption: str,
    question_block: str,
    template: PromptTemplate,
    backend: CompletionBackend,
    *,
    iteration: int = 1,
    problem_id: str | None = None,
    feedback: str | None = None,
    model_id: str = "",
    temperature: float = 0.0,
    max_tokens: int = 2048,
) -> SolverOutput:
    """Produce the final answer as structured output; one tolerant repair
    pass runs before a ParseError is raised."""
    _require_role(template, "solver")
    request = _request(
        template,
        {
            "knowledge": knowledge,
            "alignment": alignment,
            "caption": caption,
            "question": question_block,
            "feedback": feedback,
        },
        role="solver",
        iteration=iteration,
        problem_id=problem_id,
        model_id=model_id,
        temperature=temperature,
        max_tokens=max_tokens,
    )
    reply = backend.complete(request)
    return parse_solver_reply(reply.text)


def critique(
    answer: SolverOutput | None,
    knowledge: str,
    alignment: str,
    caption: str,
    template: PromptTemplate,
    backend: CompletionBackend,
    *,
    enabled: Sequence[Step],
    iteration: int = 1,
    problem_id: str | None = None,
    model_id: str = "",
    temperature: float = 0.0,
    max_tokens: int = 2048,
) -> tuple[CriticReport, dict[Step, float]]:
    """Score the executed steps. Returns the parsed report plus a map of
    out-of-range raw scores that were clamped into [0, 5]."""
    _require_role(template, "critic")
    if answer is None:
        answer_text = NOT_AVAILABLE
    else:
        answer_text = answer.raw.strip() or answer.final_answer
    request = _request(
        template,
        {
            "answer": answer_text,
            "knowledge": knowledge,
            "alignment": alignment,
            "caption": caption,
            "score_keys": ", ".join(s.label for s in enabled),
        },
        role="critic",
        iteration=iteration,
        problem_id=problem_id,
        model_id=model_id,
        temperature=temperature,
        max_tokens=max_tokens,
    )
    reply = backend.complete(request)
    return parse_critic_reply(reply.text, enabled)


def normalize_input(problem, preamble: str = "") -> dict[str, str]:
    """UserProxy: normalize a problem record into prompt bindings.

    ``question`` is the stem plus verbatim options; ``question_block`` is the
    same prefixed with the user-proxy preamble (what the solver and the
    single-call baselines receive).
    """
    lines = [f"Question: {problem.question}"]
    if problem.options:
        lines.append("Options:")
        for option in problem.options:
            text = option.text
            if option.image_index is not None:
                suffix = f"[diagram {option.image_index + 1}]"
                text = f"{text} {suffix}".strip()
            lines.append(f"{option.label}. {text}")
    question = "\n".join(lines)
    block = f"{preamble}\n\n{question}" if preamble else question
    return {"question": question, "question_block": block, "context": problem.context}


def extract_json_object(text: str) -> dict | None:
    """Find the first parseable JSON object in free text (code fences first)."""
    candidates = [m.group(1) for m in _FENCE_RE.finditer(text)]
    candidates.append(text)
    decoder = json.JSONDecoder()
    for candidate in candidates:
        start = candidate.find("{")
        while start != -1:
            try:
                parsed, _ = decoder.raw_decode(candidate[start:])
            except json.JSONDecodeError:
                start = candidate.find("{", start + 1)
                continue
            if isinstance(parsed, dict):
                return parsed
            start = candidate.find("{", start + 1)
    return None


def _cleanup_scanned_value(value: str) -> str:
    value = value.strip()
    value = re.sub(r"[\s,}\]]+$", "", value)
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
        value = value[1:-1]
    return value.strip()


def parse_solver_reply(text: str) -> SolverOutput:
    """Parse a solver reply; on malformed structure, one repair pass scans
    for the final answer before giving up."""
    if not text or not text.strip():
        raise ParseError("empty solver reply")
    obj = extract_json_object(text)
    if isinstance(obj, dict):
        final = obj.get("final_answer")
        if isinstance(final, (str, int, float)) and str(final).strip():
            raw_process = obj.get("process")
            process = (
                {str(k): str(v) for k, v in raw_process.items()}
                if isinstance(raw_process, dict)
                else {}
            )
            return SolverOutput(final_answer=str(final).strip(), process=process, raw=text)

    match = re.search(r'"final_answer"\s*:\s*"((?:[^"\\]|\\.)*)"', text)
    if match:
        try:
            final = json.loads(f'"{match.group(1)}"')
        except json.JSONDecodeError:
            final = match.group(1)
        if final.strip():
            return SolverOutput(final_answer=final.strip(), process={}, raw=text)

    match = re.search(r"final_answer\s*[:=]\s*(.+)", text)
    if match:
        final = _cleanup_scanned_value(match.group(1))
        if final:
            return SolverOutput(final_answer=final, process={}, raw=text)

    raise ParseError("no final_answer recoverable from solver reply")


def _alias_lookup(mapping: dict, step: Step):
    lowered = {str(k).strip().lower(): v for k, v in mapping.items()}
    for alias in _STEP_ALIASES[step]:
        if alias in lowered:
            return lowered[alias]
    return None


def _coerce_score(value) -> float | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value.strip())
        except ValueError:
            return None
    return None


def _scan_score(text: str, step: Step) -> float | None:
    for alias in _STEP_ALIASES[step]:
        match = re.search(rf"{alias}\W{{0,12}}?(-?\d+(?:\.\d+)?)", text, re.IGNORECASE)
        if match:
            return float(match.group(1))
    return None


def parse_critic_reply(text: str, enabled: Sequence[Step]) -> tuple[CriticReport, dict[Step, float]]:
    """Parse scores and feedback for the enabled steps.

    The structured block is tried first; a tolerant text scan is the one
    repair pass. Out-of-range scores are clamped into [0, 5] and reported in
    the second return value. Raises ParseError when any enabled step still
    lacks a score after repair.
    """
    enabled = tuple(enabled)
    raw_scores: dict[Step, float] = {}
    feedback: dict[Step, str] = {}

    obj = extract_json_object(text or "")
    if isinstance(obj, dict):
        score_map = obj.get("scores") if isinstance(obj.get("scores"), dict) else obj
        for step in enabled:
            value = _coerce_score(_alias_lookup(score_map, step))
            if value is not None:
                raw_scores[step] = value
        feedback_map = obj.get("feedback")
        if isinstance(feedback_map, dict):
            for step in enabled:
                value = _alias_lookup(feedback_map, step)
                if isinstance(value, str) and value.strip():
                    feedback[step] = value.strip()

    missing = [s for s in enabled if s not in raw_scores]
    if missing and text:
        for step in list(missing):
            value = _scan_score(text, step)
            if value is not None:
                raw_scores[step] = value
                missing.remove(step)
    if missing:
        raise ParseError(
            "critic reply lacks scores for: " + ", ".join(s.label for s in missing)
        )

    clamps: dict[Step, float] = {}
    scores: dict[Step, int] = {}
    for step in enabled:
        value = raw_scores[step]
        if value < SCORE_MIN or value > SCORE_MAX:
            clamps[step] = value
        scores[step] = max(SCORE_MIN, min(SCORE_MAX, int(round(value))))
    feedback = {s: t for s, t in feedback.items() if s in scores}
    return CriticReport(scores=scores, feedback=feedback), clamps
