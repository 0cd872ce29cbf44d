"""Dataset factory: build aligned records, review them, split and export.

Three construction routes mirror the corpus sources: FSM descriptions
extracted from standards documents (with their hand-extracted pseudocode),
state-machine Python programs, and evolution of existing seed records.
Generated records flow through accept/reject review decisions; accepted,
complete records can be split 80/20, nested-subsampled for data ablations,
stage-ablated into bridged pair sets, and exported as instruction-tuning
JSONL.
"""

from __future__ import annotations

import ast
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from lifegen.gateway import Backend, GatewayError, generate
from lifegen.pipeline import extract_fenced
from lifegen.prompts import PromptMode, registry
from lifegen.records import (
    GENERATION_STAGES,
    LifecycleRecord,
    RecordSource,
    Stage,
    StagePair,
    adjacent_pairs,
)

SEED_FIELD_TO_STAGE = {"raw": "intent", "detail": "requirement", "pseudocode": "pseudocode", "code": "code"}
SEED_FIELDS = ("raw", "detail", "fsm", "pseudocode", "code")


class DatasetTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class BuildFinding:
    subject: str  # record id or source index
    kind: str  # incomplete | unparsable | json_parse_error | missing_field
    message: str = ""


@dataclass
class BuildResult:
    records: list[LifecycleRecord] = field(default_factory=list)
    findings: list[BuildFinding] = field(default_factory=list)


@dataclass(frozen=True)
class DocumentSource:
    """One standards-document extraction: FSM prose plus its pseudocode."""

    fsm_description: str
    pseudocode: str


def build_from_document(
    sources: Sequence[DocumentSource],
    backend: Backend,
    id_prefix: str = "doc",
) -> BuildResult:
    """Document route: four generations per FSM description.

    Intent, detailed requirement and SCXML are generated from the FSM
    description; code is generated from the supplied pseudocode. A backend
    failure leaves a partial record plus an ``incomplete`` finding.
    """
    reg = registry()
    result = BuildResult()
    for index, source in enumerate(sources):
        record_id = f"{id_prefix}-{index:04d}"
        fields: dict[str, str] = {"fsm_description": source.fsm_description}
        steps = [
            ("intent", "from_document/intent", source.fsm_description),
            ("requirement", "from_document/requirement", source.fsm_description),
            ("scxml", "from_document/scxml", source.fsm_description),
        ]
        failed = False
        for field_name, template_id, input_text in steps:
            try:
                fields[field_name] = generate(backend, reg.render(template_id, input_text)).text
            except GatewayError as exc:
                result.findings.append(BuildFinding(record_id, "incomplete", str(exc)))
                failed = True
                break
        if not failed:
            fields["pseudocode"] = source.pseudocode
            try:
                fields["code"] = generate(
                    backend, reg.render("from_document/code", source.pseudocode)
                ).text
            except GatewayError as exc:
                result.findings.append(BuildFinding(record_id, "incomplete", str(exc)))
        result.records.append(
            LifecycleRecord(id=record_id, source=RecordSource.DOCUMENT, **fields)
        )
    return result


def build_from_code(
    programs: Sequence[str],
    backend: Backend,
    pseudocode_sample: str | None = None,
    id_prefix: str = "code",
) -> BuildResult:
    """Code route: five generations per parsable state-machine program.

    The program is first summarized into an FSM description; intent,
    requirement and SCXML derive from that description, and pseudocode is
    reconstructed from the program (imitating ``pseudocode_sample`` when
    given). Unparsable programs are skipped with a finding.
    """
    reg = registry()
    result = BuildResult()
    for index, program in enumerate(programs):
        record_id = f"{id_prefix}-{index:04d}"
        try:
            ast.parse(program)
        except SyntaxError as exc:
            result.findings.append(BuildFinding(record_id, "unparsable", str(exc)))
            continue
        fields: dict[str, str] = {"code": program}
        try:
            fsm = generate(backend, reg.render("from_code/fsm_description", program)).text
            fields["fsm_description"] = fsm
            fields["intent"] = generate(backend, reg.render("from_code/intent", fsm)).text
            fields["requirement"] = generate(backend, reg.render("from_code/requirement", fsm)).text
            fields["scxml"] = generate(backend, reg.render("from_code/scxml", fsm)).text
            fields["pseudocode"] = generate(
                backend, reg.render("from_code/pseudocode", program, sample=pseudocode_sample)
            ).text
        except GatewayError as exc:
            result.findings.append(BuildFinding(record_id, "incomplete", str(exc)))
        result.records.append(LifecycleRecord(id=record_id, source=RecordSource.CODE, **fields))
    return result


def seed_payload(record: LifecycleRecord) -> str:
    """Serialize a seed record into the five-field JSON the evolution prompt expects."""
    fsm = record.fsm_description or record.scxml or ""
    payload = {
        "raw": record.intent,
        "detail": record.requirement,
        "fsm": fsm,
        "pseudocode": record.pseudocode,
        "code": record.code,
    }
    return json.dumps(payload, ensure_ascii=False, indent=2)


def evolve_from_seeds(
    seeds: Sequence[LifecycleRecord],
    backend: Backend,
    count: int,
    id_prefix: str = "seed",
) -> BuildResult:
    """Seed route: evolve new records, one generation per requested sample.

    Seeds are sampled round-robin. Each response must be a JSON object with
    raw/detail/fsm/pseudocode/code string fields; anything else is rejected
    with a finding. Evolved records carry the natural-language ``fsm`` text
    as fsm_description and await review before entering any manifest.
    """
    if not seeds:
        raise ValueError("at least one seed record required")
    incomplete = [s.id for s in seeds if not s.is_complete]
    if incomplete:
        raise ValueError(f"seeds must be complete records, got partial: {incomplete}")

    reg = registry()
    result = BuildResult()
    for index in range(count):
        seed = seeds[index % len(seeds)]
        record_id = f"{id_prefix}-{index:04d}"
        try:
            response = generate(
                backend, reg.render("from_seeds/evolve", seed_payload(seed))
            ).text
        except GatewayError as exc:
            result.findings.append(BuildFinding(record_id, "incomplete", str(exc)))
            continue
        try:
            data = json.loads(extract_fenced(response))
        except json.JSONDecodeError as exc:
            result.findings.append(BuildFinding(record_id, "json_parse_error", str(exc)))
            continue
        if not isinstance(data, dict):
            result.findings.append(BuildFinding(record_id, "json_parse_error", "not a JSON object"))
            continue
        missing = [f for f in SEED_FIELDS if not isinstance(data.get(f), str) or not data[f]]
        if missing:
            result.findings.append(
                BuildFinding(record_id, "missing_field", f"fields absent or empty: {missing}")
            )
            continue
        result.records.append(
            LifecycleRecord(
                id=record_id,
                source=RecordSource.SEED,
                intent=data["raw"],
                requirement=data["detail"],
                fsm_description=data["fsm"],
                pseudocode=data["pseudocode"],
                code=data["code"],
            )
        )
    return result


# --- review ---------------------------------------------------------------------


@dataclass(frozen=True)
class ReviewDecision:
    record_id: str
    verdict: str  # accepted | rejected
    reviewer: str
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.verdict not in ("accepted", "rejected"):
            raise ValueError(f"verdict must be accepted or rejected, got {self.verdict!r}")

    def to_json(self) -> dict:
        out = {"record_id": self.record_id, "verdict": self.verdict, "reviewer": self.reviewer}
        if self.reason:
            out["reason"] = self.reason
        return out


def save_decisions(decisions: Iterable[ReviewDecision], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for decision in decisions:
            fh.write(json.dumps(decision.to_json(), ensure_ascii=False) + "\n")


def load_decisions(path: str | Path) -> list[ReviewDecision]:
    decisions = []
    seen: set[tuple[str, str]] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            decision = ReviewDecision(
                record_id=data["record_id"],
                verdict=data["verdict"],
                reviewer=data["reviewer"],
                reason=data.get("reason"),
            )
            key = (decision.record_id, decision.reviewer)
            if key in seen:
                raise ValueError(f"{path}:{lineno}: duplicate decision for {key}")
            seen.add(key)
            decisions.append(decision)
    return decisions


def apply_review(
    records: Sequence[LifecycleRecord], decisions: Sequence[ReviewDecision]
) -> list[LifecycleRecord]:
    """Records accepted by review: at least one decision and none rejecting."""
    verdicts: dict[str, set[str]] = {}
    for decision in decisions:
        verdicts.setdefault(decision.record_id, set()).add(decision.verdict)
    return [
        r
        for r in records
        if verdicts.get(r.id) == {"accepted"}
    ]


def dedup_records(records: Sequence[LifecycleRecord]) -> list[LifecycleRecord]:
    """Drop records whose five artifacts are identical to an earlier record.

    Useful when merging routes or evolved batches; keeps first occurrence.
    """
    seen: set[tuple] = set()
    unique: list[LifecycleRecord] = []
    for record in records:
        key = tuple(record.artifact(stage) for stage in Stage)
        if key in seen:
            continue
        seen.add(key)
        unique.append(record)
    return unique


# --- split / subsample / ablation -------------------------------------------------


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    split_seed: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    sources: dict[str, int] = field(default_factory=dict)

    @property
    def records(self) -> int:
        return len(self.train_ids) + len(self.test_ids)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "records": self.records,
            "sources": dict(sorted(self.sources.items())),
            "split_seed": self.split_seed,
            "split": {"train_ids": list(self.train_ids), "test_ids": list(self.test_ids)},
        }

    @classmethod
    def from_json(cls, data: dict) -> "DatasetManifest":
        return cls(
            name=data["name"],
            split_seed=data["split_seed"],
            train_ids=tuple(data["split"]["train_ids"]),
            test_ids=tuple(data["split"]["test_ids"]),
            sources={k: int(v) for k, v in data.get("sources", {}).items()},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))


def split(
    records: Sequence[LifecycleRecord],
    test_fraction: float = 0.20,
    seed: int = 0,
    name: str = "dataset",
) -> DatasetManifest:
    """Deterministic shuffled train/test split over accepted, complete records."""
    if len(records) < 5:
        raise DatasetTooSmallError(f"need at least 5 records, got {len(records)}")
    incomplete = [r.id for r in records if not r.is_complete]
    if incomplete:
        raise ValueError(f"split requires complete records; incomplete: {incomplete}")

    ids = sorted(r.id for r in records)
    if len(set(ids)) != len(ids):
        raise ValueError("record ids must be unique")
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_test = round(test_fraction * len(ids))
    test_ids = tuple(sorted(ids[:n_test]))
    train_ids = tuple(sorted(ids[n_test:]))
    sources = Counter(r.source.value for r in records)
    return DatasetManifest(
        name=name,
        split_seed=seed,
        train_ids=train_ids,
        test_ids=test_ids,
        sources=dict(sources),
    )


def subsample(
    train_ids: Sequence[str],
    fractions: Sequence[float] = (1.0, 0.8, 0.6, 0.4, 0.2),
    seed: int = 0,
) -> dict[float, frozenset[str]]:
    """Nested training subsets: each smaller fraction is a prefix of the larger.

    Sizes are round(fraction * len(train_ids)).
    """
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise ValueError(f"fractions must be in (0, 1], got {fraction}")
    order = sorted(train_ids)
    rng = random.Random(seed)
    rng.shuffle(order)
    return {
        fraction: frozenset(order[: round(fraction * len(order))]) for fraction in fractions
    }


ABLATABLE_STAGES = (Stage.REQUIREMENT, Stage.SCXML, Stage.PSEUDOCODE)


def ablate_stage(records: Sequence[LifecycleRecord], removed_stage: Stage) -> list[StagePair]:
    """Pair set with one stage removed and its neighbors bridged.

    Per complete record: the two pairs adjacent to the removed stage are
    replaced by a single bridging pair from its predecessor straight to its
    successor, so exactly three pairs remain.
    """
    if removed_stage not in ABLATABLE_STAGES:
        raise ValueError(f"cannot ablate stage {removed_stage.key}")
    before = Stage(removed_stage.value - 1)
    after = Stage(removed_stage.value + 1)
    pairs: list[StagePair] = []
    for record in records:
        if not record.is_complete:
            continue
        for pair in adjacent_pairs(record):
            if pair.to_stage is removed_stage:
                pairs.append(
                    StagePair(
                        record_id=record.id,
                        from_stage=before,
                        to_stage=after,
                        input=record.artifact(before),
                        output=record.artifact(after),
                    )
                )
            elif pair.from_stage is not removed_stage:
                pairs.append(pair)
    return pairs


# --- instruction export ------------------------------------------------------------


def export_instruction_pairs(
    records: Sequence[LifecycleRecord],
    mode: PromptMode | str,
    out_path: str | Path,
    train_ids: Iterable[str] | None = None,
) -> int:
    """Write {instruction, input, output} JSONL for fine-tuning export.

    multi_step emits the four adjacent pairs per record with the matching
    stage instructions; one_step emits intent-to-artifact triples. When
    ``train_ids`` is given only those records are exported, which keeps the
    held-out split out of the training file.
    """
    mode = PromptMode(mode)
    if mode not in (PromptMode.MULTI_STEP, PromptMode.ONE_STEP):
        raise ValueError("export mode must be multi_step or one_step")
    reg = registry()
    keep = set(train_ids) if train_ids is not None else None

    lines: list[str] = []
    for record in records:
        if keep is not None and record.id not in keep:
            continue
        if mode is PromptMode.MULTI_STEP:
            for pair in adjacent_pairs(record):
                template = reg.for_stage(mode, pair.to_stage)
                lines.append(
                    json.dumps(
                        {"instruction": template.instruction, "input": pair.input, "output": pair.output},
                        ensure_ascii=False,
                    )
                )
        else:
            if not record.intent:
                continue
            for stage in GENERATION_STAGES:
                output = record.artifact(stage)
                if not output:
                    continue
                template = reg.for_stage(mode, stage)
                lines.append(
                    json.dumps(
                        {"instruction": template.instruction, "input": record.intent, "output": output},
                        ensure_ascii=False,
                    )
                )

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return len(lines)


def export_stage_pairs(pairs: Sequence[StagePair], out_path: str | Path) -> int:
    """Write a pair set (e.g. a stage-ablation variant) as instruction JSONL.

    Bridged pairs reuse the multi-step instruction of their target stage;
    that stage's wording is the closest available for the substituted input.
    """
    reg = registry()
    lines = []
    for pair in pairs:
        template = reg.for_stage(PromptMode.MULTI_STEP, pair.to_stage)
        lines.append(
            json.dumps(
                {"instruction": template.instruction, "input": pair.input, "output": pair.output},
                ensure_ascii=False,
            )
        )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return len(lines)


def audit_no_leakage(
    export_path: str | Path,
    records: Sequence[LifecycleRecord],
    test_ids: Iterable[str],
) -> list[str]:
    """Report test-split artifact texts appearing in an exported file.

    Returns the offending record ids (empty list = audit passed).
    """
    test_id_set = set(test_ids)
    by_id = {r.id: r for r in records}
    exported_texts: set[str] = set()
    with Path(export_path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            exported_texts.add(data["input"])
            exported_texts.add(data["output"])

    leaked = []
    for record_id in sorted(test_id_set):
        record = by_id.get(record_id)
        if record is None:
            continue
        artifacts = [record.artifact(stage) for stage in Stage]
        if any(a in exported_texts for a in artifacts if a):
            leaked.append(record_id)
    return leaked
