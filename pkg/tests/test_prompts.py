from __future__ import annotations

import pytest

from stepcritic import ImagePayload, load_catalog, render_prompt
from stepcritic.errors import ConfigError, MissingPlaceholder
from stepcritic.prompts import (
    ANCHOR_PHRASES,
    DATA_PLACEHOLDERS,
    NOT_AVAILABLE,
    PromptTemplate,
    parse_template_text,
)

from conftest import png_bytes

CATALOG = load_catalog()


def test_every_role_has_its_anchor_phrase() -> None:
    for role, phrase in ANCHOR_PHRASES.items():
        assert phrase in CATALOG[role].system_text


def test_dataflow_placeholder_sets_match_signatures() -> None:
    expected = {
        "interpreter": {"diagram"},
        "aligner": {"caption", "context", "question"},
        "scholar": {"alignment", "caption", "context", "question"},
        "solver": {"knowledge", "alignment", "caption", "question"},
        "critic": {"answer", "knowledge", "alignment", "caption"},
    }
    for role, placeholders in expected.items():
        assert CATALOG[role].data_placeholders == placeholders, role


def test_render_puts_system_message_first() -> None:
    messages = render_prompt(CATALOG["aligner"], {"caption": "c", "context": "x", "question": "q"})
    assert [m.role for m in messages] == ["system", "user"]
    assert messages[0].text() == CATALOG["aligner"].system_text


def test_render_is_deterministic() -> None:
    bindings = {"caption": "c", "context": "x", "question": "q"}
    first = render_prompt(CATALOG["aligner"], bindings)
    second = render_prompt(CATALOG["aligner"], bindings)
    assert first == second


def test_missing_required_placeholder_raises() -> None:
    with pytest.raises(MissingPlaceholder):
        render_prompt(CATALOG["aligner"], {"caption": "c", "context": "x"})


def test_missing_optional_placeholder_renders_not_available() -> None:
    messages = render_prompt(CATALOG["aligner"], {"question": "q"})
    text = messages[1].text()
    assert text.count(NOT_AVAILABLE) == 2  # caption and context sections
    assert "q" in text


def test_brace_bearing_bindings_render_verbatim_without_reexpansion() -> None:
    bindings = {"caption": "{{question}} {weird} }}{{", "context": "x", "question": "THE-QUESTION"}
    text = render_prompt(CATALOG["aligner"], bindings)[1].text()
    assert "{{question}} {weird} }}{{" in text
    # the question section itself still rendered exactly once
    assert text.count("THE-QUESTION") == 1


def test_scholar_inputs_each_appear_exactly_once() -> None:
    bindings = {
        "alignment": "ALIGN-7f3",
        "caption": "CAP-7f3",
        "context": "CTX-7f3",
        "question": "Q-7f3",
    }
    text = render_prompt(CATALOG["scholar"], bindings)[1].text()
    for sentinel in bindings.values():
        assert text.count(sentinel) == 1


def test_diagram_placeholder_expands_to_image_parts_in_order() -> None:
    images = [ImagePayload.from_bytes(png_bytes(4)), ImagePayload.from_bytes(png_bytes(6))]
    messages = render_prompt(CATALOG["interpreter"], {"diagram": images})
    payloads = messages[1].image_payloads()
    assert [p.digest for p in payloads] == [i.digest for i in images]
    assert "Diagram 1:" in messages[1].text()
    assert "Diagram 2:" in messages[1].text()


def test_single_diagram_renders_without_headers() -> None:
    images = [ImagePayload.from_bytes(png_bytes(4))]
    messages = render_prompt(CATALOG["interpreter"], {"diagram": images})
    assert len(messages[1].image_payloads()) == 1
    assert "Diagram 1:" not in messages[1].text()


def test_feedback_binding_appends_reviewer_section() -> None:
    bindings = {"caption": "c", "context": "x", "question": "q", "feedback": "tighten the fusion"}
    text = render_prompt(CATALOG["aligner"], bindings)[1].text()
    assert "[Reviewer feedback]" in text
    assert "tighten the fusion" in text
    without = render_prompt(CATALOG["aligner"], {"caption": "c", "context": "x", "question": "q"})
    assert "[Reviewer feedback]" not in without[1].text()


def test_parse_template_text_requires_sections() -> None:
    with pytest.raises(ConfigError):
        parse_template_text("x", "no sections here")
    template = parse_template_text("x", "<<<system>>>\nSYS\n<<<user>>>\nUSER {{question}}")
    assert template.system_text == "SYS"
    assert template.placeholders == {"question"}


def test_catalog_rejects_override_that_drops_anchor(tmp_path) -> None:
    bad = tmp_path / "critic.txt"
    bad.write_text("<<<system>>>\nYou are a reviewer.\n<<<user>>>\n{{answer}}", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_catalog(overrides={"critic": bad})


def test_catalog_accepts_anchor_preserving_override(tmp_path) -> None:
    override = tmp_path / "aligner.txt"
    override.write_text(
        "<<<system>>>\nCustom aligner. [Content Deconstruction] applies.\n"
        "<<<user>>>\n{{caption}} {{context}} {{question}}",
        encoding="utf-8",
    )
    catalog = load_catalog(overrides={"aligner": override})
    assert "Custom aligner" in catalog["aligner"].system_text


def test_data_placeholders_cover_spec_vocabulary() -> None:
    assert DATA_PLACEHOLDERS >= {"diagram", "context", "question", "caption", "alignment", "knowledge", "answer", "feedback"}


def test_solver_template_mandates_json_shape() -> None:
    system = CATALOG["solver"].system_text
    assert '"final_answer"' in system
    assert '"process"' in system


def test_unknown_role_raises() -> None:
    with pytest.raises(ConfigError):
        CATALOG["oracle"]


def test_placeholders_property() -> None:
    template = PromptTemplate(role="x", system_text="s", user_layout="{{a_b}} {{question}} {{question}}")
    assert template.placeholders == {"a_b", "question"}
