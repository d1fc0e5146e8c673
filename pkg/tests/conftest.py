from __future__ import annotations

import io
import json

import pytest
from PIL import Image

from stepcritic import (
    ImagePayload,
    Option,
    ProblemRecord,
    ReplayBackend,
    ReplayScript,
    RunConfig,
)

ALL_FIVE = {"interpreter": 5, "aligner": 5, "scholar": 5, "solver": 5}


def png_bytes(size: int = 4, color=(200, 30, 30)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (size, size), color).save(buf, format="PNG")
    return buf.getvalue()


def critic_reply(scores: dict, feedback: dict | None = None) -> str:
    return json.dumps({"scores": scores, "feedback": feedback or {}})


def solver_reply(final_answer: str = "B", process: dict | None = None) -> str:
    return json.dumps({"process": process or {"Phase 1": "[Framing] core demand"}, "final_answer": final_answer})


def make_problem(
    problem_id: str = "p1",
    *,
    question: str = "Which mass balances the lever?",
    gold: str = "B",
    answer_type: str = "choice",
    options: list[Option] | None = None,
    diagrams: int = 1,
    dataset: str = "custom",
    subtask: str = "demo",
    context: str = "A lever rests on a central pivot.",
    **extra,
) -> ProblemRecord:
    if answer_type == "choice" and options is None:
        options = [Option("A", "1 kg"), Option("B", "2 kg"), Option("C", "3 kg"), Option("D", "4 kg")]
    return ProblemRecord(
        id=problem_id,
        dataset=dataset,
        subtask=subtask,
        question=question,
        gold_answer=gold,
        answer_type=answer_type,
        context=context,
        options=options,
        diagrams=[ImagePayload.from_bytes(png_bytes(4 + k)) for k in range(diagrams)],
        **extra,
    )


def make_script(
    *,
    solver_answer: str = "B",
    critic_by_iteration: dict[int, str] | None = None,
    critic_default: str | None = None,
) -> ReplayScript:
    """Step defaults plus per-iteration critic entries."""
    script = ReplayScript()
    script.add("interpreter", "a lever with two masses on either side of a pivot")
    script.add("aligner", "the diagram, context, and question describe one lever in equilibrium")
    script.add("scholar", "lever balance: m1*d1 = m2*d2")
    script.add("solver", solver_reply(solver_answer))
    if critic_default is not None:
        script.add("critic", critic_default)
    for iteration, reply in (critic_by_iteration or {}).items():
        script.add("critic", reply, iteration=iteration)
    if critic_default is None and not critic_by_iteration:
        script.add("critic", critic_reply(ALL_FIVE))
    return script


@pytest.fixture
def problem() -> ProblemRecord:
    return make_problem()


@pytest.fixture
def config() -> RunConfig:
    return RunConfig()


@pytest.fixture
def passing_backend() -> ReplayBackend:
    return ReplayBackend(make_script())
