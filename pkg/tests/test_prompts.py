import hashlib
import json

import pytest

from lifegen.prompts import (
    DuplicateTemplateError,
    PromptMode,
    PromptTemplate,
    UnknownTemplateError,
    extract_input_section,
    list_templates,
    registry,
    render,
)
from lifegen.records import Stage

MULTI_STEP_SCXML_INSTRUCTION = (
    "Generate a state machine design description in SCXML format based on the "
    "following detailed requirement description."
)
ONE_STEP_CODE_INSTRUCTION = (
    "Generate an executable python program based on the following original "
    "requirement description."
)


def test_render_format():
    prompt = render("multi_step/scxml", "req text")
    assert prompt.text == f"INSTRUCTION: {MULTI_STEP_SCXML_INSTRUCTION}\nINPUT: req text\nOUTPUT:"
    assert prompt.text.startswith(
        "INSTRUCTION: Generate a state machine design description in SCXML format "
        "based on the following detailed requirement description."
    )


def test_one_step_code_wording():
    prompt = render("one_step/code", "raw req")
    assert ONE_STEP_CODE_INSTRUCTION in prompt.text


def test_empty_input_slot():
    prompt = render("multi_step/requirement", "")
    assert "\nINPUT: \nOUTPUT:" in prompt.text
    assert registry().get("multi_step/requirement").instruction in prompt.text


def test_unknown_template():
    with pytest.raises(UnknownTemplateError):
        render("multi_step/nonsense", "x")


def test_mode_listings():
    assert list_templates(PromptMode.MULTI_STEP) == [
        "multi_step/requirement",
        "multi_step/scxml",
        "multi_step/pseudocode",
        "multi_step/code",
    ]
    assert len(list_templates("one_step")) == 4
    assert len(list_templates("from_document")) == 4
    assert len(list_templates("from_code")) == 5
    assert list_templates("from_seeds") == ["from_seeds/evolve"]


def test_every_rendered_prompt_embeds_instruction_verbatim():
    reg = registry()
    for mode in PromptMode:
        for template_id in reg.list_templates(mode):
            template = reg.get(template_id)
            assert reg.render(template_id, "some input").text.count(template.instruction) == 1


def test_registry_rejects_duplicate_mode_stage():
    reg = registry()
    clone = PromptTemplate(
        id="multi_step/scxml2",
        mode=PromptMode.MULTI_STEP,
        target_stage=Stage.SCXML,
        instruction="x",
        input_label="y",
        order=99,
    )
    with pytest.raises(DuplicateTemplateError):
        reg.register(clone)


def test_pseudocode_sample_slot_substitution():
    rendered = render("from_code/pseudocode", "program text", sample="BEGIN...END")
    assert "The pseudo-code example is as follows: BEGIN...END," in rendered.text
    untouched = render("from_code/pseudocode", "program text")
    assert "The pseudo-code example is as follows: pseudocode sample," in untouched.text


def test_sample_slot_rejected_elsewhere():
    with pytest.raises(ValueError):
        render("multi_step/code", "x", sample="y")


def test_stage_lookup():
    reg = registry()
    assert reg.for_stage(PromptMode.ONE_STEP, Stage.SCXML).id == "one_step/scxml"
    assert reg.get("from_code/fsm_description").target_stage is None


def test_extract_input_section_round_trip():
    tricky = "line1\nINPUT: fake\nOUTPUT: fake\nline2"
    prompt = render("multi_step/code", tricky)
    assert extract_input_section(prompt.text) == tricky


def test_manifest_matches_data_files():
    from importlib import resources

    data = resources.files("lifegen.prompts") / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    names = {p.name for p in data.iterdir() if p.name.endswith(".txt")}
    assert names == set(manifest)
    for name, digest in manifest.items():
        assert hashlib.sha256((data / name).read_bytes()).hexdigest() == digest


def test_target_language_substitution_is_opt_in():
    reg = registry()
    default = reg.render("one_step/code", "x").text
    assert "python" in default
    switched = reg.render("one_step/code", "x", target_language="Java").text
    assert "java program" in switched and "python" not in switched
