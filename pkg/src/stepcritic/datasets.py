"""Benchmark ingestion: normalize source records into ProblemRecord streams.

Four on-disk shapes are supported, selected by the dataset manifest (or an
explicit ``format=`` argument for bare record files):

- ``normalized``: this package's interchange format - one JSON record per
  line, images referenced by relative path plus sha256 digest.
- ``mathvista`` / ``olympiadbench`` / ``emma``: adapters for the three
  benchmark layouts, documented in the README. Loaders only read local
  files; nothing is downloaded.

Malformed rows are collected into the validation report with their row index
and reason; they are never silently skipped.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

from .errors import InsufficientRecords, ManifestError, SchemaError
from .messages import ImagePayload

ANSWER_TYPES = ("choice", "integer", "float", "text", "open")
DATASETS = ("mathvista", "olympiadbench", "emma", "custom")

_LABELS = "ABCDEFGHIJ"


@dataclass(frozen=True)
class SubtaskInfo:
    full_name: str
    expected: int


#: Expected per-subtask sizes of the complete benchmark splits.
SUBTASK_CATALOG: dict[str, dict[str, SubtaskInfo]] = {
    "mathvista": {
        "Gen": SubtaskInfo("General", 460),
        "Math": SubtaskInfo("Mathematics", 540),
    },
    "olympiadbench": {
        "MECO": SubtaskInfo("Math_En_COMP", 150),
        "MZCO": SubtaskInfo("Math_Zh_COMP", 56),
        "MZCE": SubtaskInfo("Math_Zh_CEE", 300),
        "PECO": SubtaskInfo("Physics_En_COMP", 456),
        "PZCE": SubtaskInfo("Physics_Zh_CEE", 300),
    },
    "emma": {
        "Math": SubtaskInfo("Mathematics", 100),
        "Phy": SubtaskInfo("Physics", 100),
        "Chem": SubtaskInfo("Chemistry", 100),
    },
}


@dataclass
class Option:
    label: str
    text: str
    image_index: int | None = None


@dataclass
class ProblemRecord:
    """One benchmark item in normalized form."""

    id: str
    dataset: str
    subtask: str
    question: str
    gold_answer: str
    answer_type: str = "open"
    context: str = ""
    options: list[Option] | None = None
    diagrams: list[ImagePayload] = field(default_factory=list)
    difficulty: str | None = None
    category: str | None = None
    language: str = "en"

    @property
    def question_type(self) -> str:
        return "multiple_choice" if self.options else "open"

    def validate(self) -> None:
        if not self.id:
            raise SchemaError("record has no id")
        if self.dataset not in DATASETS:
            raise SchemaError(f"unknown dataset: {self.dataset!r}")
        if self.answer_type not in ANSWER_TYPES:
            raise SchemaError(f"unknown answer_type: {self.answer_type!r}")
        if self.language not in ("en", "zh"):
            raise SchemaError(f"unknown language: {self.language!r}")
        if self.answer_type == "choice":
            if not self.options:
                raise SchemaError("choice record has no options")
            labels = [o.label for o in self.options]
            if len(set(labels)) != len(labels):
                raise SchemaError("duplicate option labels")
            if self.gold_answer not in labels:
                raise SchemaError(
                    f"gold answer {self.gold_answer!r} not among option labels {labels}"
                )
        elif self.answer_type == "integer":
            try:
                int(self.gold_answer)
            except ValueError as exc:
                raise SchemaError(f"gold answer {self.gold_answer!r} is not an integer") from exc
        elif self.answer_type == "float":
            try:
                float(self.gold_answer)
            except ValueError as exc:
                raise SchemaError(f"gold answer {self.gold_answer!r} is not a float") from exc
        if not self.diagrams and self.dataset != "custom":
            raise SchemaError("multimodal record has no diagrams")


@dataclass
class RowError:
    index: int
    reason: str


@dataclass
class LoadResult:
    dataset_name: str
    records: list[ProblemRecord] = field(default_factory=list)
    errors: list[RowError] = field(default_factory=list)
    count_errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors and not self.count_errors

    def counts(self) -> dict[str, int]:
        return dict(Counter(r.subtask for r in self.records))

    def require_clean(self) -> "LoadResult":
        if not self.ok:
            problems = [f"row {e.index}: {e.reason}" for e in self.errors] + self.count_errors
            raise SchemaError(
                f"dataset {self.dataset_name!r} failed validation:\n" + "\n".join(problems)
            )
        return self


def _load_image(base_dir: Path, ref) -> ImagePayload:
    if isinstance(ref, str):
        path, digest = ref, None
    elif isinstance(ref, dict) and "path" in ref:
        path, digest = ref["path"], ref.get("digest")
    else:
        raise SchemaError(f"bad image reference: {ref!r}")
    image_path = base_dir / path
    if not image_path.is_file():
        raise SchemaError(f"image file not found: {image_path}")
    payload = ImagePayload.from_bytes(image_path.read_bytes())
    if digest and payload.digest != digest:
        raise SchemaError(f"image digest mismatch for {path}")
    return payload


def _as_language(value) -> str:
    text = str(value or "en").strip().lower()
    if text in ("en", "english"):
        return "en"
    if text in ("zh", "chinese", "zh-cn"):
        return "zh"
    return text


def _row_normalized(row: dict, base_dir: Path) -> ProblemRecord:
    options = None
    if row.get("options"):
        options = [
            Option(
                label=str(o["label"]),
                text=str(o.get("text", "")),
                image_index=o.get("image_index"),
            )
            for o in row["options"]
        ]
    return ProblemRecord(
        id=str(row["id"]),
        dataset=str(row["dataset"]),
        subtask=str(row["subtask"]),
        question=str(row["question"]),
        gold_answer=str(row["gold_answer"]),
        answer_type=str(row.get("answer_type", "open")),
        context=str(row.get("context") or ""),
        options=options,
        diagrams=[_load_image(base_dir, ref) for ref in row.get("diagrams", [])],
        difficulty=row.get("difficulty"),
        category=row.get("category"),
        language=_as_language(row.get("language")),
    )


def _match_choice_label(gold: str, options: list[Option]) -> str:
    """Map a gold answer stated as option text back to its label."""
    if gold in [o.label for o in options]:
        return gold
    for option in options:
        if option.text.strip() == gold.strip():
            return option.label
    raise SchemaError(f"gold answer {gold!r} matches neither an option label nor an option text")


def _row_mathvista(row: dict, base_dir: Path) -> ProblemRecord:
    meta = row.get("metadata") or {}
    choices = row.get("choices") or []
    question_type = row.get("question_type") or ("multi_choice" if choices else "free_form")
    if question_type == "multi_choice":
        options = [Option(label=_LABELS[i], text=str(c)) for i, c in enumerate(choices)]
        answer_type = "choice"
        gold = _match_choice_label(str(row["answer"]), options)
    else:
        options = None
        source_type = str(row.get("answer_type") or "text")
        answer_type = {"integer": "integer", "float": "float", "text": "text"}.get(source_type, "text")
        gold = str(row["answer"])
    subtask = "Math" if meta.get("category") == "math-targeted-vqa" else "Gen"
    diagrams = [_load_image(base_dir, row["image"])] if row.get("image") else []
    return ProblemRecord(
        id=str(row["pid"]),
        dataset="mathvista",
        subtask=subtask,
        question=str(row["question"]),
        gold_answer=gold,
        answer_type=answer_type,
        context="",
        options=options,
        diagrams=diagrams,
        difficulty=meta.get("grade"),
        category=meta.get("task"),
        language=_as_language(meta.get("language")),
    )


_OLYMPIAD_SUBTASKS = {
    ("math", "en", "comp"): "MECO",
    ("math", "zh", "comp"): "MZCO",
    ("math", "zh", "cee"): "MZCE",
    ("physics", "en", "comp"): "PECO",
    ("physics", "zh", "cee"): "PZCE",
}

_OLYMPIAD_ANSWER_TYPES = {
    "numerical": "float",
    "expression": "text",
    "equation": "text",
    "interval": "text",
    "tuple": "text",
}


def _row_olympiadbench(row: dict, base_dir: Path) -> ProblemRecord:
    subject = str(row.get("subject", "")).strip().lower()
    subject = "math" if subject.startswith("math") else "physics" if subject.startswith("phy") else subject
    language = _as_language(row.get("language"))
    track = str(row.get("competition", "")).strip().lower()
    subtask = _OLYMPIAD_SUBTASKS.get((subject, language, track))
    if subtask is None:
        subtask = "_".join(p for p in (subject, language, track) if p) or "unknown"
    gold = row.get("final_answer")
    if isinstance(gold, list):
        gold = gold[0] if gold else ""
    source_type = str(row.get("answer_type") or "").strip().lower()
    answer_type = source_type if source_type in ANSWER_TYPES else _OLYMPIAD_ANSWER_TYPES.get(source_type, "open")
    return ProblemRecord(
        id=str(row["id"]),
        dataset="olympiadbench",
        subtask=subtask,
        question=str(row["question"]),
        gold_answer=str(gold),
        answer_type=answer_type,
        context=str(row.get("context") or ""),
        options=None,
        diagrams=[_load_image(base_dir, ref) for ref in row.get("images", [])],
        difficulty=row.get("difficulty"),
        category=subject or None,
        language=language,
    )


_EMMA_SUBTASKS = {"math": "Math", "mathematics": "Math", "physics": "Phy", "chemistry": "Chem"}


def _row_emma(row: dict, base_dir: Path) -> ProblemRecord:
    category = str(row.get("category", "")).strip()
    subtask = _EMMA_SUBTASKS.get(category.lower(), category or "unknown")
    diagrams = [_load_image(base_dir, ref) for ref in row.get("images", [])]
    options = None
    if row.get("options"):
        option_images = row.get("option_images") or [None] * len(row["options"])
        options = []
        for i, text in enumerate(row["options"]):
            image_index = None
            if i < len(option_images) and option_images[i]:
                diagrams.append(_load_image(base_dir, option_images[i]))
                image_index = len(diagrams) - 1
            options.append(Option(label=_LABELS[i], text=str(text), image_index=image_index))
    answer_type = "choice" if options else str(row.get("answer_type") or "open")
    return ProblemRecord(
        id=str(row["pid"]),
        dataset="emma",
        subtask=subtask,
        question=str(row["question"]),
        gold_answer=str(row["answer"]),
        answer_type=answer_type,
        context=str(row.get("context") or ""),
        options=options,
        diagrams=diagrams,
        difficulty=row.get("difficulty"),
        category=category or None,
        language=_as_language(row.get("language")),
    )


_ADAPTERS = {
    "normalized": _row_normalized,
    "custom": _row_normalized,
    "mathvista": _row_mathvista,
    "olympiadbench": _row_olympiadbench,
    "emma": _row_emma,
}


def load_dataset(path: str | Path, format: str | None = None) -> LoadResult:
    """Load records plus a validation report.

    ``path`` may be a dataset directory (containing manifest.json), a
    manifest file, or a bare .jsonl record file (``format`` required).
    """
    path = Path(path)
    expected_counts: dict[str, int] | None = None
    name = path.stem

    if path.is_dir():
        manifest_path = path / "manifest.json"
        if not manifest_path.is_file():
            raise ManifestError(f"dataset dir {path} has no manifest.json")
        path = manifest_path

    if path.suffix == ".json":
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        if not isinstance(manifest, dict) or "files" not in manifest:
            raise ManifestError(f"manifest {path} must declare a 'files' list")
        base_dir = path.parent
        files = [base_dir / f for f in manifest["files"]]
        format = format or manifest.get("format")
        name = manifest.get("name", name)
        expected_counts = manifest.get("expected_counts")
    elif path.is_file():
        base_dir = path.parent
        files = [path]
        if format is None:
            raise ManifestError(
                f"bare record file {path} needs an explicit format (or use a manifest)"
            )
    else:
        raise ManifestError(f"dataset path not found: {path}")

    if format not in _ADAPTERS:
        raise ManifestError(f"unknown dataset format: {format!r}")
    adapter = _ADAPTERS[format]

    result = LoadResult(dataset_name=name)
    for file in files:
        if not file.is_file():
            raise ManifestError(f"dataset file not found: {file}")
        for index, line in enumerate(file.read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                record = adapter(row, base_dir)
                record.validate()
            except SchemaError as exc:
                result.errors.append(RowError(index=index, reason=str(exc)))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                result.errors.append(RowError(index=index, reason=f"{type(exc).__name__}: {exc}"))
            else:
                result.records.append(record)

    if expected_counts:
        got = result.counts()
        for subtask, expected in sorted(expected_counts.items()):
            actual = got.get(subtask, 0)
            if actual != int(expected):
                result.count_errors.append(
                    f"subtask {subtask}: expected {expected} records, found {actual}"
                )
    return result


def validate_full_split(dataset: str, counts: dict[str, int]) -> list[str]:
    """Compare per-subtask counts of a declared-complete split against the
    catalog; returns human-readable mismatches (empty means valid)."""
    catalog = SUBTASK_CATALOG.get(dataset)
    if catalog is None:
        return [f"no catalog entry for dataset {dataset!r}"]
    mismatches = []
    for abbr, info in catalog.items():
        actual = counts.get(abbr, 0)
        if actual != info.expected:
            mismatches.append(f"{abbr} ({info.full_name}): expected {info.expected}, found {actual}")
    return mismatches


def sample_split(
    records: list[ProblemRecord], subtask: str, n: int, seed: int
) -> list[ProblemRecord]:
    """Deterministic subsample of one subtask, original order preserved."""
    pool = [r for r in records if r.subtask == subtask]
    if n > len(pool):
        raise InsufficientRecords(
            f"asked for {n} records of subtask {subtask!r}, only {len(pool)} available"
        )
    picks = sorted(Random(seed).sample(range(len(pool)), n))
    return [pool[i] for i in picks]


_EXTENSIONS = {
    "image/png": ".png",
    "image/jpeg": ".jpg",
    "image/gif": ".gif",
    "image/bmp": ".bmp",
    "image/tiff": ".tif",
    "image/webp": ".webp",
}


def write_normalized(
    records: list[ProblemRecord],
    out_dir: str | Path,
    name: str = "dataset",
    expected_counts: dict[str, int] | None = None,
) -> Path:
    """Write records in the normalized interchange format; returns the
    manifest path. Images are deduplicated by digest under images/."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    lines = []
    for record in records:
        refs = []
        for payload in record.diagrams:
            digest_hex = payload.digest.split(":", 1)[1]
            filename = digest_hex[:16] + _EXTENSIONS.get(payload.media_type, ".bin")
            image_path = images_dir / filename
            if not image_path.exists():
                image_path.write_bytes(payload.data)
            refs.append({"path": f"images/{filename}", "digest": payload.digest})
        row = {
            "id": record.id,
            "dataset": record.dataset,
            "subtask": record.subtask,
            "question": record.question,
            "gold_answer": record.gold_answer,
            "answer_type": record.answer_type,
            "context": record.context,
            "options": (
                [
                    {"label": o.label, "text": o.text, "image_index": o.image_index}
                    for o in record.options
                ]
                if record.options
                else None
            ),
            "diagrams": refs,
            "difficulty": record.difficulty,
            "category": record.category,
            "language": record.language,
        }
        lines.append(json.dumps(row, sort_keys=True, ensure_ascii=False))
    (out_dir / "records.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    manifest = {
        "name": name,
        "format": "normalized",
        "files": ["records.jsonl"],
    }
    if expected_counts:
        manifest["expected_counts"] = expected_counts
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return manifest_path
