"""Fixed-width table rendering for accuracy, comparison, feedback, timing.

The accuracy layout groups subtask columns by dataset, each dataset followed
by its sample-weighted Avg column, with an overall Avg column last; runs are
rows. Comparisons add delta rows against the first run.
"""

from __future__ import annotations

from .datasets import SUBTASK_CATALOG
from .evaluation import EvalReport

_DATASET_ORDER = ("mathvista", "emma", "olympiadbench")


def _column_layout(reports: list[EvalReport]) -> list[tuple[str, str]]:
    """Ordered (dataset, subtask|Avg) column keys over the union of runs."""
    datasets: list[str] = []
    for preferred in _DATASET_ORDER:
        if any(preferred in r.per_subtask for r in reports):
            datasets.append(preferred)
    for report in reports:
        for dataset in report.per_subtask:
            if dataset not in datasets:
                datasets.append(dataset)

    columns: list[tuple[str, str]] = []
    for dataset in datasets:
        known_order = list(SUBTASK_CATALOG.get(dataset, {}))
        seen: list[str] = [s for s in known_order if any(s in r.per_subtask.get(dataset, {}) for r in reports)]
        for report in reports:
            for subtask in report.per_subtask.get(dataset, {}):
                if subtask not in seen:
                    seen.append(subtask)
        columns.extend((dataset, subtask) for subtask in seen)
        columns.append((dataset, "Avg"))
    columns.append(("overall", "Avg"))
    return columns


def _cell(report: EvalReport, dataset: str, subtask: str) -> float | None:
    if dataset == "overall":
        return report.overall_avg * 100
    if subtask == "Avg":
        value = report.per_dataset_avg.get(dataset)
        return None if value is None else value * 100
    score = report.per_subtask.get(dataset, {}).get(subtask)
    return None if score is None else score.accuracy * 100


def _format_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


def render_comparison(named_reports: list[tuple[str, EvalReport]]) -> tuple[str, list[str]]:
    """Side-by-side table across runs; returns (table, warnings).

    Subtask sets are unioned; runs missing a column show "n/a" and produce an
    incompatible-subtask-set warning. Every run after the first gets a delta
    row against the first run.
    """
    reports = [report for _, report in named_reports]
    columns = _column_layout(reports)
    headers = ["Run"] + [
        ("overall Avg" if dataset == "overall" else f"{dataset}:{subtask}")
        for dataset, subtask in columns
    ]

    warnings: list[str] = []
    subtask_sets = [
        {(d, s) for d, subtasks in report.per_subtask.items() for s in subtasks}
        for report in reports
    ]
    if len({frozenset(s) for s in subtask_sets}) > 1:
        warnings.append(
            "IncompatibleSubtaskSets: runs cover different subtasks; missing cells shown as n/a"
        )

    rows: list[list[str]] = []
    baseline_name, baseline = named_reports[0]
    for name, report in named_reports:
        cells = [name]
        for dataset, subtask in columns:
            value = _cell(report, dataset, subtask)
            cells.append("n/a" if value is None else f"{value:.2f}")
        rows.append(cells)
        if report is not baseline:
            deltas = ["  delta"]
            for dataset, subtask in columns:
                value = _cell(report, dataset, subtask)
                reference = _cell(baseline, dataset, subtask)
                if value is None or reference is None:
                    deltas.append("n/a")
                else:
                    deltas.append(f"({value - reference:+.2f})")
            rows.append(deltas)
    return _format_table(headers, rows), warnings


def render_accuracy_table(report: EvalReport, name: str = "run") -> str:
    table, _ = render_comparison([(name, report)])
    return table


def render_feedback_table(proportions: dict[str, float]) -> str:
    headers = ["Category", "Proportion"]
    rows = [[category, f"{value:.4f}"] for category, value in proportions.items()]
    return _format_table(headers, rows)


def render_timing_table(timing: dict[str, dict[str, float]], unit: str = "s") -> str:
    headers = ["Grouping", "Bucket", f"Mean ({unit})"]
    rows = []
    for group, buckets in timing.items():
        for bucket, mean in sorted(buckets.items()):
            rows.append([group, bucket, f"{mean:.3f}"])
    return _format_table(headers, rows)
