"""Artifact chain model: stages, lifecycle records, and adjacent pair extraction.

A lifecycle record carries one aligned artifact chain (intent, detailed
requirement, SCXML design, pseudocode, code). Records are immutable values;
artifact text is normalized on construction so hashing and exact-match
comparison are stable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Iterator

_TRAILING_WS = re.compile(r"[ \t]+$", re.MULTILINE)


class Stage(IntEnum):
    """The five lifecycle stages, totally ordered from raw intent to code."""

    INTENT = 0
    REQUIREMENT = 1
    SCXML = 2
    PSEUDOCODE = 3
    CODE = 4

    @property
    def key(self) -> str:
        """Field name used for this stage in records and on disk."""
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "Stage":
        try:
            return cls[key.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown stage: {key!r}") from None


GENERATION_STAGES = (Stage.REQUIREMENT, Stage.SCXML, Stage.PSEUDOCODE, Stage.CODE)


class RecordSource(str, Enum):
    DOCUMENT = "document"
    CODE = "code"
    SEED = "seed"
    GENERATED = "generated"


def stage_successor(stage: Stage) -> Stage | None:
    """Next stage in the total order, or None for the last stage."""
    if stage is Stage.CODE:
        return None
    return Stage(stage.value + 1)


def normalize_artifact(text: str) -> str:
    """Normalize line endings to LF and strip trailing whitespace per line.

    Internal whitespace (indentation, blank lines) is preserved.
    """
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    return _TRAILING_WS.sub("", text)


@dataclass(frozen=True)
class LifecycleRecord:
    """One aligned chain of lifecycle artifacts.

    Artifact fields may be absent (None). ``fsm_description`` is optional
    metadata carried by dataset-construction routes; it is not a stage.
    """

    id: str
    source: RecordSource = RecordSource.GENERATED
    intent: str | None = None
    requirement: str | None = None
    scxml: str | None = None
    pseudocode: str | None = None
    code: str | None = None
    fsm_description: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("record id must be nonempty")
        if not isinstance(self.source, RecordSource):
            object.__setattr__(self, "source", RecordSource(self.source))
        for stage in Stage:
            value = getattr(self, stage.key)
            if value is not None:
                object.__setattr__(self, stage.key, normalize_artifact(value))
        if self.fsm_description is not None:
            object.__setattr__(self, "fsm_description", normalize_artifact(self.fsm_description))

    def artifact(self, stage: Stage) -> str | None:
        return getattr(self, stage.key)

    def with_artifact(self, stage: Stage, text: str) -> "LifecycleRecord":
        return replace(self, **{stage.key: text})

    @property
    def is_complete(self) -> bool:
        """True iff all five artifact fields are present and nonempty."""
        return all(self.artifact(stage) for stage in Stage)

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "source": self.source.value}
        for key in ("intent", "requirement", "scxml", "pseudocode", "code", "fsm_description"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_json(cls, data: dict) -> "LifecycleRecord":
        return cls(
            id=data["id"],
            source=RecordSource(data.get("source", "generated")),
            intent=data.get("intent"),
            requirement=data.get("requirement"),
            scxml=data.get("scxml"),
            pseudocode=data.get("pseudocode"),
            code=data.get("code"),
            fsm_description=data.get("fsm_description"),
        )


@dataclass(frozen=True)
class StagePair:
    """An (input artifact, output artifact) example spanning two stages.

    ``adjacent_pairs`` only ever emits pairs over adjacent stages; stage
    ablation additionally produces bridging pairs that skip the removed
    stage, so adjacency is not enforced here.
    """

    record_id: str
    from_stage: Stage
    to_stage: Stage
    input: str
    output: str

    def __post_init__(self) -> None:
        if self.to_stage <= self.from_stage:
            raise ValueError("to_stage must come after from_stage")
        if not self.input or not self.output:
            raise ValueError("pair input and output must be nonempty")

    @property
    def is_adjacent(self) -> bool:
        return self.to_stage.value == self.from_stage.value + 1


def adjacent_pairs(record: LifecycleRecord) -> list[StagePair]:
    """Extract one pair per adjacent stage boundary with both artifacts present.

    A complete record yields exactly four pairs in stage order; partial
    records yield fewer (possibly zero).
    """
    pairs: list[StagePair] = []
    for stage in GENERATION_STAGES:
        prev = Stage(stage.value - 1)
        input_text = record.artifact(prev)
        output_text = record.artifact(stage)
        if input_text and output_text:
            pairs.append(
                StagePair(
                    record_id=record.id,
                    from_stage=prev,
                    to_stage=stage,
                    input=input_text,
                    output=output_text,
                )
            )
    return pairs


@dataclass(frozen=True)
class RecordFinding:
    """One mechanical check failure on a record artifact."""

    field: str
    kind: str  # missing | empty | parse_error
    message: str = ""


@dataclass(frozen=True)
class RecordValidationReport:
    record_id: str
    findings: tuple[RecordFinding, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.findings


def validate_record(record: LifecycleRecord) -> RecordValidationReport:
    """Run the mechanizable checks on a record's artifacts.

    Findings are data, not failures: missing or empty artifact fields, an
    SCXML artifact that does not parse, and a code artifact that does not
    parse as Python.
    """
    from lifegen.scxml import parse_scxml

    findings: list[RecordFinding] = []
    for stage in Stage:
        value = record.artifact(stage)
        if value is None:
            findings.append(RecordFinding(stage.key, "missing", "artifact absent"))
        elif not value.strip():
            findings.append(RecordFinding(stage.key, "empty", "artifact is empty"))

    if record.scxml and record.scxml.strip():
        result = parse_scxml(record.scxml)
        if isinstance(result, list):
            detail = result[0].message if result else "unparsable"
            findings.append(RecordFinding("scxml", "parse_error", detail))

    if record.code and record.code.strip():
        import ast

        try:
            ast.parse(record.code)
        except SyntaxError as exc:
            findings.append(RecordFinding("code", "parse_error", str(exc)))

    return RecordValidationReport(record_id=record.id, findings=tuple(findings))


def save_records(records: Iterable[LifecycleRecord], path: str | Path) -> None:
    """Write records as JSON lines (one record per line, UTF-8)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")


def load_records(path: str | Path) -> list[LifecycleRecord]:
    """Read a JSON-lines record file, rejecting duplicate ids."""
    records: list[LifecycleRecord] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            record = LifecycleRecord.from_json(data)
            if record.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate record id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    return records


def iter_stage_artifacts(record: LifecycleRecord) -> Iterator[tuple[Stage, str]]:
    """Yield (stage, text) for every populated artifact in stage order."""
    for stage in Stage:
        value = record.artifact(stage)
        if value:
            yield stage, value
