"""Evaluation harness: turn persisted runs into the four report shapes.

Reports are computed from stored run state, never from live generation.
Every report embeds a fingerprint of the evaluation configuration (test
split ids plus metric parameters); delta and ablation reports refuse to
combine inputs whose fingerprints differ. Emission to markdown, CSV and
JSON is deterministic and idempotent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from lifegen.metrics import MetricRow, evaluate_stage
from lifegen.pipeline import RunState, extract_fenced
from lifegen.records import GENERATION_STAGES, LifecycleRecord, Stage

STAGE_LABELS = {
    Stage.REQUIREMENT: "Requirements Analysis",
    Stage.SCXML: "Architectural Design",
    Stage.PSEUDOCODE: "Detailed Design",
    Stage.CODE: "Code Generation",
}
STAGE_ABBREV = {
    Stage.REQUIREMENT: "RA",
    Stage.SCXML: "AD",
    Stage.PSEUDOCODE: "DD",
    Stage.CODE: "CG",
}
STAGE_COLUMNS = {
    Stage.REQUIREMENT: ("em", "bleu", "rouge_l"),
    Stage.SCXML: ("em", "bleu", "tfidf"),
    Stage.PSEUDOCODE: ("em", "bleu", "rouge_l"),
    Stage.CODE: ("em", "bleu", "codebleu"),
}
DELTA_STAGES = (Stage.SCXML, Stage.PSEUDOCODE, Stage.CODE)

DEFAULT_METRIC_CONFIG = {
    "em_granularity": "line",
    "bleu_max_n": 4,
    "bleu_smoothing": True,
    "rouge_beta": 1.2,
    "codebleu_weights": [0.25, 0.25, 0.25, 0.25],
    "keyword_weight": 5.0,
    "text_tokenizer": "whitespace_lower",
    "code_tokenizer": "python_lexer",
}


class MissingReferenceError(KeyError):
    pass


class MismatchedReportsError(ValueError):
    pass


class TestSplitMismatchError(ValueError):
    pass


def config_fingerprint(
    reference_ids: Sequence[str],
    metric_config: Mapping | None = None,
    backends: Sequence[str] = (),
) -> str:
    payload = {
        "reference_ids": sorted(reference_ids),
        "metrics": dict(metric_config or DEFAULT_METRIC_CONFIG),
        "backends": sorted(backends),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EvaluationReport:
    kind: str  # stagewise | step_delta | data_ablation | stage_ablation
    rows: tuple[dict, ...]
    config_fingerprint: str
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "config_fingerprint": self.config_fingerprint,
            "metadata": self.metadata,
            "rows": list(self.rows),
        }


def candidate_text(run: RunState, stage: Stage) -> str:
    """Stage output prepared for metrics: fenced blocks stripped for structured stages."""
    raw = run.artifacts[stage]
    if stage in (Stage.SCXML, Stage.PSEUDOCODE, Stage.CODE):
        return extract_fenced(raw)
    return raw


def _reference_map(references: Sequence[LifecycleRecord] | Mapping[str, LifecycleRecord]) -> dict[str, LifecycleRecord]:
    if isinstance(references, Mapping):
        return dict(references)
    return {r.id: r for r in references}


def stagewise_report(
    runs: Sequence[RunState],
    references: Sequence[LifecycleRecord] | Mapping[str, LifecycleRecord],
) -> EvaluationReport:
    """Per-model, per-stage metric rows with the stage's column group.

    Each run must name its reference record; a run contributes to every
    stage it holds an artifact for, so multi-step and one-step run sets
    both evaluate with the same code path.
    """
    refs = _reference_map(references)
    used_ids: set[str] = set()
    by_model: dict[str, list[RunState]] = {}
    for run in runs:
        if not run.reference_id or run.reference_id not in refs:
            raise MissingReferenceError(f"run {run.run_id} has no reference record")
        used_ids.add(run.reference_id)
        by_model.setdefault(run.backend, []).append(run)

    rows: list[dict] = []
    for model in sorted(by_model):
        for stage in GENERATION_STAGES:
            pairs = []
            for run in by_model[model]:
                if stage not in run.artifacts:
                    continue
                reference = refs[run.reference_id].artifact(stage)
                if reference is None:
                    raise MissingReferenceError(
                        f"reference {run.reference_id} lacks a {stage.key} artifact"
                    )
                pairs.append((candidate_text(run, stage), reference))
            if pairs:
                row = evaluate_stage(pairs, stage, model=model)
                rows.append(row.to_json())

    fingerprint = config_fingerprint(sorted(used_ids), backends=sorted(by_model))
    return EvaluationReport(
        kind="stagewise",
        rows=tuple(rows),
        config_fingerprint=fingerprint,
        metadata={"n_references": len(used_ids), "backends": sorted(by_model)},
    )


def _row_key(row: dict) -> tuple[str, str]:
    return (row["model"], row["stage"])


def step_delta_report(multi: EvaluationReport, single: EvaluationReport) -> EvaluationReport:
    """Per-metric deltas (single minus multi) over the AD/DD/CG stages.

    Negative deltas mean multi-step inference scored higher. The
    requirements-analysis stage is excluded: both inference modes share
    its prompt, so the comparison is vacuous there.
    """
    if multi.config_fingerprint != single.config_fingerprint:
        raise MismatchedReportsError("reports were built under different configurations")
    single_rows = {_row_key(r): r for r in single.rows}
    delta_stage_keys = {s.key for s in DELTA_STAGES}

    rows: list[dict] = []
    for multi_row in multi.rows:
        if multi_row["stage"] not in delta_stage_keys:
            continue
        key = _row_key(multi_row)
        if key not in single_rows:
            raise MismatchedReportsError(f"single-step report lacks row {key}")
        single_row = single_rows[key]
        deltas = {
            metric: single_row[metric] - multi_row[metric]
            for metric in ("em", "bleu", "rouge_l", "tfidf", "codebleu")
            if metric in multi_row and metric in single_row
        }
        rows.append(
            {
                "model": multi_row["model"],
                "stage": multi_row["stage"],
                "n_samples": multi_row["n_samples"],
                **deltas,
            }
        )

    return EvaluationReport(
        kind="step_delta",
        rows=tuple(rows),
        config_fingerprint=multi.config_fingerprint,
        metadata={"sign": "single_minus_multi"},
    )


def data_ablation_report(per_fraction: Mapping[float, EvaluationReport]) -> EvaluationReport:
    """Stagewise row groups per training fraction, fractions descending."""
    if not per_fraction:
        raise ValueError("no fraction reports given")
    fingerprints = {report.config_fingerprint for report in per_fraction.values()}
    if len(fingerprints) != 1:
        raise TestSplitMismatchError("fraction reports evaluate different test splits")

    rows: list[dict] = []
    for fraction in sorted(per_fraction, reverse=True):
        label = f"{round(fraction * 100)}%"
        for row in per_fraction[fraction].rows:
            rows.append({"fraction": label, **row})
    return EvaluationReport(
        kind="data_ablation",
        rows=tuple(rows),
        config_fingerprint=next(iter(fingerprints)),
        metadata={"fractions": [f"{round(f * 100)}%" for f in sorted(per_fraction, reverse=True)]},
    )


ABLATION_LABELS = {
    Stage.REQUIREMENT: "-RA",
    Stage.SCXML: "-AD",
    Stage.PSEUDOCODE: "-DD",
}


def stage_ablation_report(
    variants: Mapping[Stage, EvaluationReport],
    baseline: EvaluationReport,
) -> EvaluationReport:
    """Code-generation metrics for the full pipeline and each stage-removed variant.

    Adds the relative CodeBLEU change against the baseline for every row.
    """
    fingerprints = {baseline.config_fingerprint} | {
        r.config_fingerprint for r in variants.values()
    }
    if len(fingerprints) != 1:
        raise TestSplitMismatchError("variant reports evaluate different test splits")

    def code_rows(report: EvaluationReport) -> list[dict]:
        return [r for r in report.rows if r["stage"] == Stage.CODE.key]

    baseline_rows = {r["model"]: r for r in code_rows(baseline)}
    rows: list[dict] = []
    for model, base_row in sorted(baseline_rows.items()):
        rows.append({"variant": "full", **base_row, "codebleu_rel_change": 0.0})
    for stage in (Stage.REQUIREMENT, Stage.SCXML, Stage.PSEUDOCODE):
        if stage not in variants:
            continue
        for row in code_rows(variants[stage]):
            base = baseline_rows.get(row["model"])
            if base is None:
                raise MismatchedReportsError(f"baseline lacks model {row['model']!r}")
            change = (row["codebleu"] - base["codebleu"]) / base["codebleu"] if base["codebleu"] else 0.0
            rows.append({"variant": ABLATION_LABELS[stage], **row, "codebleu_rel_change": change})

    return EvaluationReport(
        kind="stage_ablation",
        rows=tuple(rows),
        config_fingerprint=baseline.config_fingerprint,
        metadata={"variants": ["full"] + [ABLATION_LABELS[s] for s in ABLATION_LABELS if s in variants]},
    )


# --- emission -------------------------------------------------------------------


def _fmt(value: float) -> str:
    return f"{value:.4f}"


_METRIC_ORDER = ("em", "bleu", "rouge_l", "tfidf", "codebleu", "codebleu_rel_change")


def _row_metrics(row: dict) -> list[tuple[str, float]]:
    return [(m, row[m]) for m in _METRIC_ORDER if m in row]


def emit(report: EvaluationReport, formats: Sequence[str], out_dir: str | Path) -> list[Path]:
    """Write the report in the requested formats; returns the file paths.

    Output is byte-deterministic for a given report: rows are emitted in
    stored order and all metric values render to four decimals in the
    table formats.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []
    for fmt in formats:
        if fmt == "json":
            path = out_dir / f"{report.kind}.json"
            path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", "utf-8")
        elif fmt == "csv":
            path = out_dir / f"{report.kind}.csv"
            path.write_text(_to_csv(report), "utf-8")
        elif fmt in ("md", "markdown"):
            path = out_dir / f"{report.kind}.md"
            path.write_text(_to_markdown(report), "utf-8")
        else:
            raise ValueError(f"unknown format {fmt!r}")
        paths.append(path)
    return paths


def _to_csv(report: EvaluationReport) -> str:
    lines = ["model,stage,metric,value,n_samples"]
    for row in report.rows:
        model = row.get("model", "")
        prefix = row.get("fraction") or row.get("variant")
        if prefix:
            model = f"{model}@{prefix}" if model else prefix
        for metric, value in _row_metrics(row):
            lines.append(f"{model},{row['stage']},{metric},{_fmt(value)},{row.get('n_samples', 0)}")
    return "\n".join(lines) + "\n"


def _group_order(report: EvaluationReport) -> list[Stage]:
    if report.kind == "step_delta":
        return list(DELTA_STAGES)
    if report.kind == "stage_ablation":
        return [Stage.CODE]
    return list(GENERATION_STAGES)


def _to_markdown(report: EvaluationReport) -> str:
    stages = _group_order(report)
    label_key = "fraction" if report.kind == "data_ablation" else (
        "variant" if report.kind == "stage_ablation" else None
    )

    header: list[str] = [label_key or "model"]
    if label_key:
        header.append("model")
    for stage in stages:
        for metric in STAGE_COLUMNS[stage]:
            header.append(f"{STAGE_ABBREV[stage]} {metric}")
    if report.kind == "stage_ablation":
        header.append("CG codebleu rel. change")

    # one output line per (label, model) combination, rows grouped as stored
    grouped: dict[tuple[str, str], dict[Stage, dict]] = {}
    for row in report.rows:
        label = row.get(label_key, "") if label_key else ""
        key = (label, row.get("model", ""))
        grouped.setdefault(key, {})[Stage.from_key(row["stage"])] = row

    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for (label, model), stage_rows in grouped.items():
        cells = [label or model]
        if label_key:
            cells.append(model)
        for stage in stages:
            row = stage_rows.get(stage)
            for metric in STAGE_COLUMNS[stage]:
                cells.append(_fmt(row[metric]) if row and metric in row else "")
        if report.kind == "stage_ablation":
            row = stage_rows.get(Stage.CODE)
            cells.append(_fmt(row["codebleu_rel_change"]) if row else "")
        lines.append("| " + " | ".join(cells) + " |")

    title = {
        "stagewise": "Stage-wise performance",
        "step_delta": "Single-step minus multi-step deltas",
        "data_ablation": "Training-fraction ablation",
        "stage_ablation": "Stage ablation (code generation)",
    }[report.kind]
    return f"# {title}\n\nconfig: `{report.config_fingerprint[:12]}`\n\n" + "\n".join(lines) + "\n"
