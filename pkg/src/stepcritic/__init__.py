"""Critic-governed multi-agent pipeline for multimodal science problems.

Four specialist roles (diagram interpreter, context aligner, knowledge
scholar, solver) run in a fixed order; a critic scores each step 0-5 with
Socratic feedback, and the weakest step is rolled back and redone until every
score passes or the iteration budget runs out. Ships with replay/record
backends for network-free runs, dataset loaders, and an evaluation harness.
"""

from .backend import (
    CompletionBackend,
    OpenAIChatBackend,
    RecordingBackend,
    ReplayBackend,
    ReplayScript,
    build_backend,
    record_mode,
)
from .config import BackendSettings, JudgeSettings, RunConfig
from .datasets import (
    Option,
    ProblemRecord,
    SUBTASK_CATALOG,
    load_dataset,
    sample_split,
    validate_full_split,
    write_normalized,
)
from .evaluation import (
    EvalReport,
    JudgeConfig,
    JudgedItem,
    NormalizedAnswer,
    aggregate,
    extract_answer,
    feedback_stats,
    judge,
    judge_item,
    run_baseline,
    timing_report,
)
from .messages import AgentMessage, CompletionReply, CompletionRequest, ImagePayload, RequestTag
from .orchestrator import (
    SolveOutcome,
    apply_rollback,
    select_rollback,
    should_terminate,
    solve,
)
from .prompts import PromptTemplate, TemplateCatalog, load_catalog, render_prompt
from .runner import RunManifest, run_batch
from .steps import PIPELINE_ORDER, CriticReport, PipelineState, SolverOutput, Step
from .trace import SolveTrace, read_trace, trace_fingerprint, validate_events, write_trace

__version__ = "0.1.0"

__all__ = [
    "AgentMessage",
    "BackendSettings",
    "CompletionBackend",
    "CompletionReply",
    "CompletionRequest",
    "CriticReport",
    "EvalReport",
    "ImagePayload",
    "JudgeConfig",
    "JudgeSettings",
    "JudgedItem",
    "NormalizedAnswer",
    "OpenAIChatBackend",
    "Option",
    "PIPELINE_ORDER",
    "PipelineState",
    "ProblemRecord",
    "PromptTemplate",
    "RecordingBackend",
    "ReplayBackend",
    "ReplayScript",
    "RequestTag",
    "RunConfig",
    "RunManifest",
    "SUBTASK_CATALOG",
    "SolveOutcome",
    "SolveTrace",
    "SolverOutput",
    "Step",
    "TemplateCatalog",
    "aggregate",
    "apply_rollback",
    "build_backend",
    "extract_answer",
    "feedback_stats",
    "judge",
    "judge_item",
    "load_catalog",
    "load_dataset",
    "read_trace",
    "record_mode",
    "render_prompt",
    "run_baseline",
    "run_batch",
    "sample_split",
    "select_rollback",
    "should_terminate",
    "solve",
    "timing_report",
    "trace_fingerprint",
    "validate_events",
    "validate_full_split",
    "write_normalized",
    "write_trace",
]
