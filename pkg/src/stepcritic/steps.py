"""Pipeline step identities, critic reports, and per-solve working state."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import SchemaError

SCORE_MIN = 0
SCORE_MAX = 5


class Step(Enum):
    """The four solving steps, each carrying a fixed pipeline ordinal."""

    INTERPRETER = ("interpreter", 0)
    ALIGNER = ("aligner", 1)
    SCHOLAR = ("scholar", 2)
    SOLVER = ("solver", 3)

    def __init__(self, label: str, ordinal: int) -> None:
        self.label = label
        self.ordinal = ordinal

    @classmethod
    def from_label(cls, label: str) -> "Step":
        for step in cls:
            if step.label == label:
                return step
        raise SchemaError(f"unknown step label: {label!r}")

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"Step.{self.name}"


#: All steps in execution order (ordinals 0..3).
PIPELINE_ORDER: tuple[Step, ...] = tuple(sorted(Step, key=lambda s: s.ordinal))


@dataclass
class CriticReport:
    """Per-step integer scores plus per-step Socratic feedback text."""

    scores: dict[Step, int]
    feedback: dict[Step, str] = field(default_factory=dict)

    def validate(self, enabled: tuple[Step, ...] | list[Step] | set[Step]) -> None:
        """Check the report shape: one score per enabled step, scores in range,
        feedback keyed only by scored steps."""
        enabled_set = set(enabled)
        if set(self.scores) != enabled_set:
            raise SchemaError(
                f"report scores {sorted(s.label for s in self.scores)} do not match "
                f"enabled steps {sorted(s.label for s in enabled_set)}"
            )
        for step, score in self.scores.items():
            if not isinstance(score, int) or not SCORE_MIN <= score <= SCORE_MAX:
                raise SchemaError(f"score for {step.label} out of range: {score!r}")
        extra = set(self.feedback) - set(self.scores)
        if extra:
            raise SchemaError(f"feedback for unscored steps: {sorted(s.label for s in extra)}")

    def passes(self, threshold: int) -> bool:
        return bool(self.scores) and all(v >= threshold for v in self.scores.values())

    def minimum(self) -> Step | None:
        """The lowest-scoring step; ties broken by smallest pipeline ordinal."""
        if not self.scores:
            return None
        return min(self.scores, key=lambda s: (self.scores[s], s.ordinal))


@dataclass
class SolverOutput:
    """Parsed solver reply: phase-keyed reasoning plus the final answer.

    ``raw`` always preserves the verbatim reply for audit.
    """

    final_answer: str
    process: dict[str, str] = field(default_factory=dict)
    raw: str = ""


_STATE_FIELD: dict[Step, str] = {
    Step.INTERPRETER: "caption",
    Step.ALIGNER: "alignment",
    Step.SCHOLAR: "knowledge",
    Step.SOLVER: "answer",
}


@dataclass
class PipelineState:
    """Current step outputs for one solve.

    A step's field is populated exactly when that step is in ``completed``;
    rollback clears the target field and everything downstream of it.
    """

    caption: str | None = None
    alignment: str | None = None
    knowledge: str | None = None
    answer: SolverOutput | None = None
    iteration: int = 1
    completed: set[Step] = field(default_factory=set)
    staged_feedback: dict[Step, str] = field(default_factory=dict)

    def output_of(self, step: Step):
        return getattr(self, _STATE_FIELD[step])

    def record_output(self, step: Step, value) -> None:
        setattr(self, _STATE_FIELD[step], value)
        self.completed.add(step)

    def clear_output(self, step: Step) -> None:
        setattr(self, _STATE_FIELD[step], None)
        self.completed.discard(step)

    def check_consistency(self) -> None:
        """Populated-iff-completed sanity check (used by tests)."""
        for step in Step:
            populated = self.output_of(step) is not None
            if populated != (step in self.completed):
                raise SchemaError(
                    f"state inconsistent for {step.label}: populated={populated}, "
                    f"completed={step in self.completed}"
                )
