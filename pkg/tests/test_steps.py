from __future__ import annotations

import pytest

from stepcritic import PIPELINE_ORDER, CriticReport, PipelineState, SolverOutput, Step
from stepcritic.errors import SchemaError


def test_ordinals_are_total_and_unique() -> None:
    ordinals = [s.ordinal for s in PIPELINE_ORDER]
    assert ordinals == [0, 1, 2, 3]
    assert [s.label for s in PIPELINE_ORDER] == ["interpreter", "aligner", "scholar", "solver"]


def test_from_label_round_trips() -> None:
    for step in Step:
        assert Step.from_label(step.label) is step
    with pytest.raises(SchemaError):
        Step.from_label("critic")


def test_report_validate_requires_one_score_per_enabled_step() -> None:
    report = CriticReport(scores={Step.INTERPRETER: 5, Step.ALIGNER: 4})
    report.validate((Step.INTERPRETER, Step.ALIGNER))
    with pytest.raises(SchemaError):
        report.validate(PIPELINE_ORDER)


def test_report_validate_rejects_out_of_range_scores() -> None:
    report = CriticReport(scores={Step.INTERPRETER: 6})
    with pytest.raises(SchemaError):
        report.validate((Step.INTERPRETER,))
    report = CriticReport(scores={Step.INTERPRETER: -1})
    with pytest.raises(SchemaError):
        report.validate((Step.INTERPRETER,))


def test_report_validate_rejects_feedback_for_unscored_steps() -> None:
    report = CriticReport(scores={Step.SOLVER: 5}, feedback={Step.ALIGNER: "redo"})
    with pytest.raises(SchemaError):
        report.validate((Step.SOLVER,))


def test_report_passes_threshold() -> None:
    scores = {s: 5 for s in PIPELINE_ORDER}
    assert CriticReport(scores=scores).passes(5)
    scores[Step.SOLVER] = 4
    assert not CriticReport(scores=scores).passes(5)
    assert CriticReport(scores=scores).passes(4)


def test_minimum_breaks_ties_by_ordinal() -> None:
    report = CriticReport(scores={Step.INTERPRETER: 2, Step.ALIGNER: 2, Step.SCHOLAR: 5, Step.SOLVER: 5})
    assert report.minimum() is Step.INTERPRETER


def test_state_populated_iff_completed() -> None:
    state = PipelineState()
    state.check_consistency()
    state.record_output(Step.INTERPRETER, "caption")
    state.record_output(Step.SOLVER, SolverOutput(final_answer="B"))
    state.check_consistency()
    assert state.completed == {Step.INTERPRETER, Step.SOLVER}
    state.clear_output(Step.SOLVER)
    state.check_consistency()
    assert state.answer is None
