"""Operator CLI: run the pipeline over a dataset, evaluate traces, render reports."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .backend import build_backend
from .config import RunConfig
from .datasets import load_dataset
from .errors import PipelineError, SchemaError
from .evaluation import EvalReport, JudgeConfig, aggregate, judge_item
from .reporting import render_accuracy_table, render_comparison, render_feedback_table, render_timing_table
from .runner import RunManifest, run_batch
from .steps import Step
from .trace import read_trace, validate_events


@click.group()
def main() -> None:
    """Critic-governed solve pipeline: batch runs, evaluation, reports."""


@main.command(name="run")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True), help="Dataset dir, manifest, or record file.")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True), help="Run config (YAML).")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory for traces and the run manifest.")
@click.option("--jobs", type=int, default=None, help="Concurrent solves (default from config).")
@click.option("--ablate", type=click.Choice(["interpreter", "aligner", "scholar", "critic"]), default=None, help="Disable one pipeline step or the critic.")
@click.option("--baseline", type=click.Choice(["direct", "cot"]), default=None, help="Single-call baseline instead of the pipeline.")
@click.option("--allow-partial", is_flag=True, help="Proceed when some dataset rows fail validation.")
def cmd_run(dataset_path, config_path, out_dir, jobs, ablate, baseline, allow_partial) -> None:
    """Solve every problem in a dataset; completed problems are skipped on rerun."""
    try:
        config = RunConfig.from_file(config_path)
        if ablate:
            config = config.ablate(ablate)
        result = load_dataset(dataset_path)
    except PipelineError as exc:
        raise click.ClickException(str(exc))

    if not result.ok:
        for error in result.errors:
            click.echo(f"row {error.index}: {error.reason}", err=True)
        for error in result.count_errors:
            click.echo(error, err=True)
        if not allow_partial:
            raise click.ClickException(
                f"dataset has {len(result.errors) + len(result.count_errors)} validation errors "
                "(use --allow-partial to run on the valid rows)"
            )
    if not result.records:
        raise click.ClickException("dataset has no loadable records")

    try:
        backend = build_backend(config.backend)
        manifest = run_batch(
            result.records,
            config,
            backend,
            out_dir,
            jobs=jobs,
            baseline=baseline,
            dataset_ref=str(dataset_path),
        )
    except PipelineError as exc:
        raise click.ClickException(str(exc))

    errors = sum(1 for p in manifest.problems.values() if p["termination"] == "error")
    resumed = sum(1 for p in manifest.problems.values() if p.get("resumed"))
    click.echo(
        f"run {manifest.run_id}: {len(manifest.problems)} problems "
        f"({resumed} resumed, {errors} errors) -> {out_dir}"
    )


@main.command(name="eval")
@click.option("--traces", "traces_dir", required=True, type=click.Path(exists=True), help="Directory of trace files (or a run output dir).")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True), help="Dataset with gold answers.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory for the eval report.")
def cmd_eval(traces_dir, dataset_path, out_dir) -> None:
    """Judge trace final answers against gold and emit accuracy/feedback/timing tables."""
    traces_dir = Path(traces_dir)
    if (traces_dir / "traces").is_dir():
        traces_dir = traces_dir / "traces"
    trace_files = sorted(traces_dir.glob("*.jsonl"))
    if not trace_files:
        raise click.ClickException(f"no trace files found under {traces_dir}")

    try:
        dataset = load_dataset(dataset_path).require_clean()
    except PipelineError as exc:
        raise click.ClickException(str(exc))
    missing_gold = [r.id for r in dataset.records if not r.gold_answer.strip()]
    if missing_gold:
        raise click.ClickException(
            f"dataset records missing gold answers: {', '.join(missing_gold[:10])}"
        )
    records_by_id = {r.id: r for r in dataset.records}

    # When the run manifest survives, prefer its id -> file map (ids may have
    # been sanitized for filenames).
    stem_to_id = {}
    manifest_path = traces_dir.parent / "run_manifest.json"
    if manifest_path.is_file():
        manifest = RunManifest.load(manifest_path)
        for problem_id, entry in manifest.problems.items():
            stem_to_id[Path(entry["trace_file"]).stem] = problem_id

    judge_cfg = JudgeConfig()
    items = []
    traces = []
    for trace_file in trace_files:
        problem_id = stem_to_id.get(trace_file.stem, trace_file.stem)
        try:
            trace = read_trace(trace_file, problem_id=problem_id)
            validate_events(trace)
        except SchemaError as exc:
            raise click.ClickException(f"bad trace file {trace_file}: {exc}")
        record = records_by_id.get(problem_id)
        if record is None:
            raise click.ClickException(f"trace {trace_file} has no dataset record (id {problem_id!r})")
        terminated = trace.terminated()
        solver_steps = [e for e in trace.step_events() if e.step is Step.SOLVER]
        raw = solver_steps[-1].output if solver_steps else ""
        items.append(judge_item(record, terminated.final_answer, raw=raw, cfg=judge_cfg))
        traces.append(trace)

    try:
        report = aggregate(items, traces=traces, records_by_id=records_by_id, judge_cfg=judge_cfg)
    except PipelineError as exc:
        raise click.ClickException(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "eval.json")

    sections = [render_accuracy_table(report)]
    if report.feedback_proportions:
        sections.append("Feedback proportions:\n" + render_feedback_table(report.feedback_proportions))
    if report.timing_buckets:
        sections.append("Timing:\n" + render_timing_table(report.timing_buckets))
    text = "\n\n".join(sections)
    (out / "eval.txt").write_text(text + "\n", encoding="utf-8")
    click.echo(text)
    click.echo(f"\neval report -> {out / 'eval.json'}")


@main.command(name="report")
@click.argument("eval_files", nargs=-1, required=True, type=click.Path(exists=True))
def cmd_report(eval_files) -> None:
    """Render a side-by-side comparison table across one or more eval files."""
    named = []
    for path in eval_files:
        try:
            named.append((Path(path).parent.name or Path(path).stem, EvalReport.load(path)))
        except PipelineError as exc:
            raise click.ClickException(str(exc))
    table, warnings = render_comparison(named)
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(table)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
