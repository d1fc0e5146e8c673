"""Prompt templates: plain-text files with {{placeholder}} markers.

Each template file holds a verbatim system text and a user layout, separated
by ``<<<system>>>`` / ``<<<user>>>`` section markers. A manifest maps role
names to template files; individual roles can be overridden through the run
configuration.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, MissingPlaceholder
from .messages import AgentMessage, ImagePart, ImagePayload, TextPart

PLACEHOLDER_RE = re.compile(r"\{\{([a-z_]+)\}\}")
_SECTION_RE = re.compile(r"^<<<(system|user)>>>[ \t]*\n", re.MULTILINE)

#: Text substituted for inputs that a disabled or skipped step never produced.
NOT_AVAILABLE = "(not available)"

#: Placeholders that may be absent from a binding map; they render as
#: NOT_AVAILABLE instead of raising.
OPTIONAL_PLACEHOLDERS = frozenset(
    {"caption", "alignment", "knowledge", "answer", "context", "options", "feedback"}
)

#: The placeholder vocabulary that corresponds to pipeline data inputs
#: (used by dataflow-arity checks; wire-format keys are excluded).
DATA_PLACEHOLDERS = frozenset(
    {"diagram", "context", "question", "options", "caption", "alignment", "knowledge", "answer", "feedback"}
)

#: Identifying phrase each role's system text must contain.
ANCHOR_PHRASES = {
    "interpreter": "scientific diagram analysis expert",
    "aligner": "[Content Deconstruction]",
    "scholar": "Knowledge Inventory Table",
    "solver": "final_answer",
    "critic": "Triadic Interrogation Framework",
}

PIPELINE_ROLES = ("interpreter", "aligner", "scholar", "solver", "critic")
BASELINE_ROLES = ("direct", "cot")
ALL_ROLES = ("manager", "userproxy") + PIPELINE_ROLES + BASELINE_ROLES

_FEEDBACK_SECTION = (
    "\n\n[Reviewer feedback]\n{{feedback}}\nAddress this feedback when redoing this step."
)


@dataclass(frozen=True)
class PromptTemplate:
    role: str
    system_text: str
    user_layout: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(PLACEHOLDER_RE.findall(self.user_layout))

    @property
    def data_placeholders(self) -> frozenset[str]:
        return self.placeholders & DATA_PLACEHOLDERS


def parse_template_text(role: str, text: str) -> PromptTemplate:
    """Split a template file into its system and user sections."""
    sections: dict[str, str] = {}
    matches = list(_SECTION_RE.finditer(text))
    if not matches:
        raise ConfigError(f"template for {role!r} has no <<<system>>>/<<<user>>> sections")
    for i, match in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        sections[match.group(1)] = text[match.end():end].strip("\n")
    if "system" not in sections:
        raise ConfigError(f"template for {role!r} is missing its <<<system>>> section")
    return PromptTemplate(
        role=role,
        system_text=sections["system"],
        user_layout=sections.get("user", ""),
    )


class TemplateCatalog:
    """Immutable role -> template registry, validated at construction."""

    def __init__(self, templates: Mapping[str, PromptTemplate]):
        self._templates = dict(templates)
        self._validate()

    def _validate(self) -> None:
        for role in ALL_ROLES:
            if role not in self._templates:
                raise ConfigError(f"no prompt template registered for role {role!r}")
        for role, phrase in ANCHOR_PHRASES.items():
            if phrase not in self._templates[role].system_text:
                raise ConfigError(
                    f"template for {role!r} lost its identifying phrase {phrase!r}"
                )

    def __getitem__(self, role: str) -> PromptTemplate:
        try:
            return self._templates[role]
        except KeyError:
            raise ConfigError(f"no prompt template registered for role {role!r}") from None

    def __contains__(self, role: str) -> bool:
        return role in self._templates

    def roles(self) -> tuple[str, ...]:
        return tuple(self._templates)


def _read_default(name: str) -> str:
    return resources.files("stepcritic.templates").joinpath(name).read_text(encoding="utf-8")


def load_catalog(
    template_dir: str | Path | None = None,
    overrides: Mapping[str, str | Path] | None = None,
) -> TemplateCatalog:
    """Build the template catalog.

    ``template_dir`` replaces the packaged directory wholesale (it must hold a
    manifest.json); ``overrides`` swaps individual role files on top of
    whatever directory is active.
    """
    if template_dir is None:
        manifest = json.loads(_read_default("manifest.json"))
        read = _read_default
    else:
        base = Path(template_dir)
        manifest_path = base / "manifest.json"
        if not manifest_path.is_file():
            raise ConfigError(f"template dir {base} has no manifest.json")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        read = lambda name: (base / name).read_text(encoding="utf-8")  # noqa: E731

    templates = {
        role: parse_template_text(role, read(filename)) for role, filename in manifest.items()
    }
    for role, path in (overrides or {}).items():
        override_path = Path(path)
        if not override_path.is_file():
            raise ConfigError(f"template override for {role!r} not found: {override_path}")
        templates[role] = parse_template_text(role, override_path.read_text(encoding="utf-8"))
    return TemplateCatalog(templates)


def _substitute(layout: str, bindings: Mapping[str, object], role: str) -> str:
    def replace(match: re.Match) -> str:
        name = match.group(1)
        if name == "diagram":
            return match.group(0)  # expanded into image parts by the caller
        if name in bindings and bindings[name] is not None:
            return str(bindings[name])
        if name in OPTIONAL_PLACEHOLDERS:
            return NOT_AVAILABLE
        raise MissingPlaceholder(f"template {role!r} requires placeholder {name!r}")

    return PLACEHOLDER_RE.sub(replace, layout)


def render_prompt(
    template: PromptTemplate, bindings: Mapping[str, object]
) -> list[AgentMessage]:
    """Render a template into messages: system first, then the user turn.

    Substitution is literal and single-pass, so binding values containing
    brace characters are never re-expanded. Missing optional placeholders
    render as NOT_AVAILABLE; missing required ones raise MissingPlaceholder.
    The ``diagram`` placeholder expands into inline image parts ("Diagram k:"
    labels are interleaved when there is more than one image). A non-empty
    ``feedback`` binding appends a reviewer-feedback section when the layout
    does not already place one.
    """
    layout = template.user_layout
    if bindings.get("feedback") and "feedback" not in template.placeholders:
        layout = layout + _FEEDBACK_SECTION

    parts: list[TextPart | ImagePart] = []
    if "{{diagram}}" in layout:
        images: Sequence[ImagePayload] = bindings.get("diagram") or ()  # type: ignore[assignment]
        before, after = layout.split("{{diagram}}", 1)
        before = _substitute(before, bindings, template.role)
        after = _substitute(after, bindings, template.role)
        if before.strip():
            parts.append(TextPart(before))
        if images:
            for k, image in enumerate(images, start=1):
                if len(images) > 1:
                    parts.append(TextPart(f"Diagram {k}:"))
                parts.append(ImagePart(image))
        else:
            parts.append(TextPart(NOT_AVAILABLE))
        if after.strip():
            parts.append(TextPart(after))
    else:
        parts.append(TextPart(_substitute(layout, bindings, template.role)))

    return [
        AgentMessage.from_text("system", template.system_text),
        AgentMessage(role="user", parts=tuple(parts)),
    ]
