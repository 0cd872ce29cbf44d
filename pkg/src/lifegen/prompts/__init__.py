"""Prompt registry: fixed instruction templates rendered with an input slot.

Templates ship as data files whose sha256 digests are pinned in
``data/manifest.json``; the registry refuses to load if any file was edited
without updating the manifest. Rendered prompts always embed the template
instruction verbatim:

    INSTRUCTION: <instruction>
    INPUT: <input>
    OUTPUT:

The from_code pseudocode template carries an inline ``pseudocode sample``
slot that ``render(..., sample=...)`` substitutes when a sample is given.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources

from lifegen.records import Stage

PSEUDOCODE_SAMPLE_SLOT = "pseudocode sample"


class PromptMode(str, Enum):
    MULTI_STEP = "multi_step"
    ONE_STEP = "one_step"
    FROM_DOCUMENT = "from_document"
    FROM_CODE = "from_code"
    FROM_SEEDS = "from_seeds"


class UnknownTemplateError(KeyError):
    pass


class DuplicateTemplateError(ValueError):
    pass


class PromptIntegrityError(RuntimeError):
    """A template file does not match its pinned manifest digest."""


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    mode: PromptMode
    target_stage: Stage | None
    instruction: str
    input_label: str
    order: int
    sample_slot: str | None = None


@dataclass(frozen=True)
class RenderedPrompt:
    template_id: str
    text: str


# (file stem, mode, target stage, input label, sample slot)
_TEMPLATE_TABLE: tuple[tuple[str, PromptMode, Stage | None, str, str | None], ...] = (
    ("multi_step_requirement", PromptMode.MULTI_STEP, Stage.REQUIREMENT, "Initial Requirement", None),
    ("multi_step_scxml", PromptMode.MULTI_STEP, Stage.SCXML, "Detailed Requirement", None),
    ("multi_step_pseudocode", PromptMode.MULTI_STEP, Stage.PSEUDOCODE, "SCXML", None),
    ("multi_step_code", PromptMode.MULTI_STEP, Stage.CODE, "Pseudocode", None),
    ("one_step_requirement", PromptMode.ONE_STEP, Stage.REQUIREMENT, "Initial Requirement", None),
    ("one_step_scxml", PromptMode.ONE_STEP, Stage.SCXML, "Initial Requirement", None),
    ("one_step_pseudocode", PromptMode.ONE_STEP, Stage.PSEUDOCODE, "Initial Requirement", None),
    ("one_step_code", PromptMode.ONE_STEP, Stage.CODE, "Initial Requirement", None),
    ("from_document_intent", PromptMode.FROM_DOCUMENT, Stage.INTENT, "FSM Description", None),
    ("from_document_requirement", PromptMode.FROM_DOCUMENT, Stage.REQUIREMENT, "FSM Description", None),
    ("from_document_scxml", PromptMode.FROM_DOCUMENT, Stage.SCXML, "FSM Description", None),
    ("from_document_code", PromptMode.FROM_DOCUMENT, Stage.CODE, "Pseudocode", None),
    ("from_code_fsm_description", PromptMode.FROM_CODE, None, "Python Code", None),
    ("from_code_intent", PromptMode.FROM_CODE, Stage.INTENT, "FSM Description", None),
    ("from_code_requirement", PromptMode.FROM_CODE, Stage.REQUIREMENT, "FSM Description", None),
    ("from_code_scxml", PromptMode.FROM_CODE, Stage.SCXML, "FSM Description", None),
    ("from_code_pseudocode", PromptMode.FROM_CODE, Stage.PSEUDOCODE, "Python Code", PSEUDOCODE_SAMPLE_SLOT),
    ("from_seeds_evolve", PromptMode.FROM_SEEDS, None, "Seed Data", None),
)


class PromptRegistry:
    """Closed set of templates keyed by id and by (mode, target stage)."""

    def __init__(self) -> None:
        self._by_id: dict[str, PromptTemplate] = {}
        self._by_key: dict[tuple[PromptMode, Stage], PromptTemplate] = {}

    def register(self, template: PromptTemplate) -> None:
        if template.id in self._by_id:
            raise DuplicateTemplateError(f"template id {template.id!r} already registered")
        if template.target_stage is not None:
            key = (template.mode, template.target_stage)
            if key in self._by_key:
                raise DuplicateTemplateError(
                    f"({template.mode.value}, {template.target_stage.key}) already registered"
                )
            self._by_key[key] = template
        self._by_id[template.id] = template

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._by_id[template_id]
        except KeyError:
            raise UnknownTemplateError(template_id) from None

    def for_stage(self, mode: PromptMode, stage: Stage) -> PromptTemplate:
        try:
            return self._by_key[(mode, stage)]
        except KeyError:
            raise UnknownTemplateError(f"{mode.value}/{stage.key}") from None

    def list_templates(self, mode: PromptMode | str) -> list[str]:
        """Template ids for a mode, in appendix (stage) order."""
        mode = PromptMode(mode)
        templates = sorted(
            (t for t in self._by_id.values() if t.mode == mode),
            key=lambda t: t.order,
        )
        return [t.id for t in templates]

    def render(
        self,
        template_id: str,
        input_text: str,
        sample: str | None = None,
        target_language: str | None = None,
    ) -> RenderedPrompt:
        """Fill the input slot; optionally substitute the inline sample slot.

        Without a sample the instruction is reproduced byte-identically,
        including any literal slot placeholder. ``target_language`` is an
        opt-in rewrite of the literal python/Python words in code-stage
        instructions; by default the wording is untouched.
        """
        template = self.get(template_id)
        instruction = template.instruction
        if sample is not None:
            if not template.sample_slot:
                raise ValueError(f"template {template_id!r} has no sample slot")
            instruction = instruction.replace(template.sample_slot, sample, 1)
        if target_language is not None:
            instruction = instruction.replace("python", target_language.lower())
            instruction = instruction.replace("Python", target_language.capitalize())
        return RenderedPrompt(
            template_id=template_id,
            text=f"INSTRUCTION: {instruction}\nINPUT: {input_text}\nOUTPUT:",
        )


def _load_data_file(name: str, manifest: dict[str, str]) -> str:
    package = resources.files(__name__) / "data" / name
    raw = package.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    pinned = manifest.get(name)
    if pinned is None:
        raise PromptIntegrityError(f"{name} missing from manifest")
    if digest != pinned:
        raise PromptIntegrityError(f"{name} digest {digest} does not match manifest {pinned}")
    text = raw.decode("utf-8")
    return text[:-1] if text.endswith("\n") else text


@lru_cache(maxsize=1)
def registry() -> PromptRegistry:
    """The process-wide registry, loaded and integrity-checked once."""
    manifest_text = (resources.files(__name__) / "data" / "manifest.json").read_text("utf-8")
    manifest: dict[str, str] = json.loads(manifest_text)
    reg = PromptRegistry()
    for order, (stem, mode, stage, input_label, sample_slot) in enumerate(_TEMPLATE_TABLE):
        instruction = _load_data_file(f"{stem}.txt", manifest)
        slug = stem[len(mode.value) + 1 :]
        reg.register(
            PromptTemplate(
                id=f"{mode.value}/{slug}",
                mode=mode,
                target_stage=stage,
                instruction=instruction,
                input_label=input_label,
                order=order,
                sample_slot=sample_slot,
            )
        )
    return reg


def render(template_id: str, input_text: str, sample: str | None = None) -> RenderedPrompt:
    return registry().render(template_id, input_text, sample=sample)


def list_templates(mode: PromptMode | str) -> list[str]:
    return registry().list_templates(mode)


def extract_input_section(prompt_text: str) -> str:
    """Recover the INPUT section from a rendered prompt.

    Inverse of ``render`` for prompts produced by this registry: everything
    between the first ``\\nINPUT: `` marker and the final ``\\nOUTPUT:``.
    """
    start = prompt_text.index("\nINPUT: ") + len("\nINPUT: ")
    end = prompt_text.rindex("\nOUTPUT:")
    return prompt_text[start:end]
