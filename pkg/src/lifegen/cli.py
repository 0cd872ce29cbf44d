"""Command-line interface: lifegen <group> <command>.

Groups: scxml (validate/simulate), prompts (list/show), run/resume,
dataset (build/split/export/review/decide), metrics (score),
eval (stagewise/delta/data-ablation/stage-ablation), serve.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from lifegen import dataset as ds
from lifegen import evaluation as ev
from lifegen import metrics as mt
from lifegen import prompts as pr
from lifegen import scxml as sc
from lifegen.gateway import load_backends
from lifegen.pipeline import Pipeline, RunStore
from lifegen.records import LifecycleRecord, Stage, load_records, save_records


@click.group()
def main() -> None:
    """Lifecycle-staged code generation toolkit."""


# --- scxml ------------------------------------------------------------------


@main.group()
def scxml() -> None:
    """Parse, validate and simulate SCXML documents."""


def _parse_or_fail(path: str) -> sc.StateChart:
    result = sc.parse_scxml(Path(path).read_text("utf-8"))
    if isinstance(result, list):
        for error in result:
            click.echo(f"{error.kind}: {error.message} (line {error.line})", err=True)
        sys.exit(1)
    return result


@scxml.command("validate")
@click.argument("file", type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True, help="Emit findings as JSON.")
def scxml_validate(file: str, as_json: bool) -> None:
    """Exit 0 when the document has no error-severity findings."""
    chart = _parse_or_fail(file)
    report = sc.validate(chart)
    if as_json:
        click.echo(
            json.dumps(
                [
                    {"kind": f.kind, "severity": f.severity, "message": f.message}
                    for f in report.findings
                ],
                indent=2,
            )
        )
    else:
        for finding in report.findings:
            click.echo(f"{finding.severity}: {finding.kind}: {finding.message}")
        if report.ok:
            click.echo("ok")
    sys.exit(0 if report.ok else 1)


@scxml.command("simulate")
@click.argument("file", type=click.Path(exists=True))
@click.option("--events", required=True, help="Comma-separated event names.")
@click.option("--max-steps", default=1000, show_default=True)
def scxml_simulate(file: str, events: str, max_steps: int) -> None:
    """Run the chart over an event sequence and print the trace."""
    chart = _parse_or_fail(file)
    report = sc.validate(chart)
    if not report.ok:
        for finding in report.errors:
            click.echo(f"error: {finding.kind}: {finding.message}", err=True)
        sys.exit(1)
    event_list = [e for e in events.split(",") if e]
    try:
        trace = sc.simulate(chart, event_list, max_steps=max_steps)
    except sc.StepLimitError as exc:
        click.echo(f"step limit exceeded at {exc.partial.final_configuration}", err=True)
        sys.exit(1)
    for step in trace.steps:
        click.echo(f"{step.from_state} --{step.event}--> {step.to_state}")
    click.echo(f"final: {trace.final_configuration} (final state: {trace.reached_final})")


# --- prompts -----------------------------------------------------------------


@main.group()
def prompts() -> None:
    """Inspect the prompt registry."""


@prompts.command("list")
@click.option("--mode", default=None, help="multi_step, one_step, from_document, from_code, from_seeds.")
def prompts_list(mode: str | None) -> None:
    modes = [pr.PromptMode(mode)] if mode else list(pr.PromptMode)
    for m in modes:
        for template_id in pr.list_templates(m):
            click.echo(template_id)


@prompts.command("show")
@click.argument("template_id")
def prompts_show(template_id: str) -> None:
    try:
        template = pr.registry().get(template_id)
    except pr.UnknownTemplateError:
        click.echo(f"unknown template {template_id!r}", err=True)
        sys.exit(1)
    stage = template.target_stage.key if template.target_stage is not None else "-"
    click.echo(f"id: {template.id}\nmode: {template.mode.value}\nstage: {stage}")
    click.echo(f"input: {template.input_label}\n")
    click.echo(template.instruction)


# --- run / resume ---------------------------------------------------------------


def _load_intents(intent: str | None, intent_file: str | None) -> list[tuple[str | None, str]]:
    """(reference_id, intent) pairs from --intent or a JSONL/eplain intent file."""
    if intent:
        return [(None, intent)]
    if not intent_file:
        raise click.UsageError("provide --intent or --intent-file")
    pairs: list[tuple[str | None, str]] = []
    for line in Path(intent_file).read_text("utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("{"):
            data = json.loads(line)
            pairs.append((data.get("id"), data["intent"]))
        else:
            pairs.append((None, line))
    return pairs


def _stage_set(raw: str | None) -> frozenset[Stage]:
    if not raw:
        return frozenset()
    return frozenset(Stage.from_key(part) for part in raw.split(",") if part)


@main.command("run")
@click.option("--intent", default=None, help="Inline intent text.")
@click.option("--intent-file", default=None, type=click.Path(exists=True),
              help="JSONL of {id, intent} lines, or one plain intent per line.")
@click.option("--mode", type=click.Choice(["multi", "one"]), default="multi", show_default=True)
@click.option("--target-stage", default="code", show_default=True,
              help="One-step target: requirement, scxml, pseudocode or code.")
@click.option("--backend", "backend_name", required=True)
@click.option("--backends-file", required=True, type=click.Path(exists=True))
@click.option("--runs-dir", default="runs", show_default=True)
@click.option("--gate", default=None, help="Comma-separated stages to pause before.")
@click.option("--parallelism", default=1, show_default=True)
def run_command(
    intent: str | None,
    intent_file: str | None,
    mode: str,
    target_stage: str,
    backend_name: str,
    backends_file: str,
    runs_dir: str,
    gate: str | None,
    parallelism: int,
) -> None:
    """Execute pipeline runs for one or many intents."""
    backends = load_backends(backends_file)
    if backend_name not in backends:
        click.echo(f"unknown backend {backend_name!r}", err=True)
        sys.exit(1)
    backend = backends[backend_name]
    pipeline = Pipeline(RunStore(runs_dir))
    pairs = _load_intents(intent, intent_file)

    states = pipeline.batch_run(
        [p[1] for p in pairs],
        "one_step" if mode == "one" else "multi_step",
        backend,
        parallelism=parallelism,
        target_stage=Stage.from_key(target_stage),
        gates=_stage_set(gate),
        reference_ids=[p[0] for p in pairs],
    )
    failed = 0
    for state in states:
        click.echo(f"{state.run_id}\t{state.status}")
        failed += state.status == "failed"
    sys.exit(1 if failed else 0)


@main.command("resume")
@click.argument("run_id")
@click.option("--artifact", default=None, type=click.Path(exists=True),
              help="File with replacement text for the checkpoint artifact.")
@click.option("--backends-file", required=True, type=click.Path(exists=True))
@click.option("--runs-dir", default="runs", show_default=True)
def resume_command(run_id: str, artifact: str | None, backends_file: str, runs_dir: str) -> None:
    """Continue an awaiting_review run, optionally with an edited artifact."""
    store = RunStore(runs_dir)
    pipeline = Pipeline(store)
    state = store.load(run_id)
    backends = load_backends(backends_file)
    if state.backend not in backends:
        click.echo(f"run backend {state.backend!r} not in backends file", err=True)
        sys.exit(1)
    edited = Path(artifact).read_text("utf-8") if artifact else None
    state = pipeline.resume(run_id, edited_artifact=edited, backend=backends[state.backend])
    click.echo(f"{state.run_id}\t{state.status}")
    sys.exit(1 if state.status == "failed" else 0)


# --- dataset ----------------------------------------------------------------------


@main.group("dataset")
def dataset_group() -> None:
    """Build, review, split and export lifecycle datasets."""


@dataset_group.command("build")
@click.option("--route", type=click.Choice(["document", "code", "seed"]), required=True)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="document: JSONL of {fsm_description, pseudocode}; code: directory "
                   "of .py files; seed: records JSONL of complete seeds.")
@click.option("--backend", "backend_name", required=True)
@click.option("--backends-file", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--count", default=10, show_default=True, help="Seed route: samples to evolve.")
@click.option("--pseudocode-sample", default=None, type=click.Path(exists=True),
              help="Code route: example pseudocode interpolated into the prompt.")
def dataset_build(
    route: str,
    in_path: str,
    backend_name: str,
    backends_file: str,
    out: str,
    count: int,
    pseudocode_sample: str | None,
) -> None:
    """Run one construction route and write the produced records."""
    backends = load_backends(backends_file)
    backend = backends[backend_name]
    if route == "document":
        sources = [
            ds.DocumentSource(fsm_description=d["fsm_description"], pseudocode=d["pseudocode"])
            for d in map(json.loads, Path(in_path).read_text("utf-8").splitlines())
            if d
        ]
        result = ds.build_from_document(sources, backend)
    elif route == "code":
        programs = [p.read_text("utf-8") for p in sorted(Path(in_path).glob("*.py"))]
        sample = Path(pseudocode_sample).read_text("utf-8") if pseudocode_sample else None
        result = ds.build_from_code(programs, backend, pseudocode_sample=sample)
    else:
        seeds = load_records(in_path)
        result = ds.evolve_from_seeds(seeds, backend, count=count)

    save_records(result.records, out)
    for finding in result.findings:
        click.echo(f"finding: {finding.subject}: {finding.kind}: {finding.message}", err=True)
    click.echo(f"wrote {len(result.records)} records to {out}")


@dataset_group.command("split")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--test", "test_fraction", default=0.20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--name", default="dataset", show_default=True)
@click.option("--out", required=True, type=click.Path())
def dataset_split(records_path: str, test_fraction: float, seed: int, name: str, out: str) -> None:
    manifest = ds.split(load_records(records_path), test_fraction=test_fraction, seed=seed, name=name)
    manifest.save(out)
    click.echo(f"train={len(manifest.train_ids)} test={len(manifest.test_ids)} -> {out}")


@dataset_group.command("export")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True),
              help="Restrict the export to the manifest's training split.")
@click.option("--mode", type=click.Choice(["multi", "one"]), default="multi", show_default=True)
@click.option("--out", required=True, type=click.Path())
def dataset_export(records_path: str, manifest_path: str | None, mode: str, out: str) -> None:
    records = load_records(records_path)
    train_ids = None
    if manifest_path:
        train_ids = ds.DatasetManifest.load(manifest_path).train_ids
    n = ds.export_instruction_pairs(
        records, "multi_step" if mode == "multi" else "one_step", out, train_ids=train_ids
    )
    click.echo(f"wrote {n} instruction pairs to {out}")


@dataset_group.command("review")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--decisions", "decisions_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def dataset_review(records_path: str, decisions_path: str, out: str) -> None:
    """Write the accepted subset of records given review decisions."""
    records = load_records(records_path)
    decisions = ds.load_decisions(decisions_path)
    accepted = ds.apply_review(records, decisions)
    save_records(accepted, out)
    click.echo(f"accepted {len(accepted)}/{len(records)} records -> {out}")


@dataset_group.command("decide")
@click.option("--record-id", required=True)
@click.option("--verdict", type=click.Choice(["accepted", "rejected"]), required=True)
@click.option("--reviewer", required=True)
@click.option("--reason", default=None)
@click.option("--decisions", "decisions_path", required=True, type=click.Path())
def dataset_decide(record_id: str, verdict: str, reviewer: str, reason: str | None, decisions_path: str) -> None:
    """Append one review decision."""
    path = Path(decisions_path)
    existing = ds.load_decisions(path) if path.exists() else []
    existing.append(ds.ReviewDecision(record_id, verdict, reviewer, reason))
    ds.save_decisions(existing, path)
    click.echo(f"recorded {verdict} for {record_id}")


# --- metrics -----------------------------------------------------------------------


@main.command("metrics")
@click.argument("action", type=click.Choice(["score"]))
@click.option("--stage", required=True, help="requirement, scxml, pseudocode or code.")
@click.option("--candidate", required=True, type=click.Path(exists=True))
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--idf-corpus", default=None, type=click.Path(exists=True),
              help="SCXML stage: JSONL records used to fit IDF (defaults to the reference).")
@click.option("--json", "as_json", is_flag=True)
def metrics_command(
    action: str, stage: str, candidate: str, reference: str, idf_corpus: str | None, as_json: bool
) -> None:
    """Score a candidate artifact against a reference."""
    stage_enum = Stage.from_key(stage)
    cand = Path(candidate).read_text("utf-8")
    ref = Path(reference).read_text("utf-8")

    values: dict = {"em": mt.exact_match(cand, ref)}
    breakdown = None
    if stage_enum is Stage.CODE:
        values["bleu"] = mt.bleu(cand, ref, tokenizer=mt.code_tokens)
        breakdown = mt.codebleu(cand, ref)
        values["codebleu"] = breakdown.combined
    else:
        values["bleu"] = mt.bleu(cand, ref)
        if stage_enum is Stage.SCXML:
            corpus = [ref]
            if idf_corpus:
                corpus = [r.scxml for r in load_records(idf_corpus) if r.scxml]
            values["tfidf"] = mt.tfidf_cosine(cand, ref, corpus)
        else:
            values["rouge_l"] = mt.rouge_l(cand, ref)

    if as_json:
        payload = dict(values)
        if breakdown is not None:
            payload["codebleu_breakdown"] = breakdown.to_json()
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for name, value in values.items():
            click.echo(f"{name}: {value:.4f}")


# --- eval -------------------------------------------------------------------------


@main.group("eval")
def eval_group() -> None:
    """Build reports from persisted runs."""


def _load_refs(refs_path: str, manifest_path: str | None) -> dict[str, LifecycleRecord]:
    records = {r.id: r for r in load_records(refs_path)}
    if manifest_path:
        manifest = ds.DatasetManifest.load(manifest_path)
        records = {i: records[i] for i in manifest.test_ids if i in records}
    return records


def _runs_for(refs: dict[str, LifecycleRecord], runs_dir: str) -> list:
    runs = [s for s in RunStore(runs_dir).list_runs() if s.reference_id in refs]
    if not runs:
        raise click.UsageError(f"no runs in {runs_dir} reference the given records")
    return runs


def _emit(report: ev.EvaluationReport, out: str, formats: str) -> None:
    paths = ev.emit(report, [f for f in formats.split(",") if f], out)
    for path in paths:
        click.echo(str(path))


@eval_group.command("stagewise")
@click.option("--runs", "runs_dir", required=True, type=click.Path(exists=True))
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "formats", default="md,csv,json", show_default=True)
def eval_stagewise(runs_dir: str, refs_path: str, manifest_path: str | None, out: str, formats: str) -> None:
    refs = _load_refs(refs_path, manifest_path)
    report = ev.stagewise_report(_runs_for(refs, runs_dir), refs)
    _emit(report, out, formats)


@eval_group.command("delta")
@click.option("--multi-runs", required=True, type=click.Path(exists=True))
@click.option("--single-runs", required=True, type=click.Path(exists=True))
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "formats", default="md,csv,json", show_default=True)
def eval_delta(
    multi_runs: str, single_runs: str, refs_path: str, manifest_path: str | None, out: str, formats: str
) -> None:
    refs = _load_refs(refs_path, manifest_path)
    multi = ev.stagewise_report(_runs_for(refs, multi_runs), refs)
    single = ev.stagewise_report(_runs_for(refs, single_runs), refs)
    _emit(ev.step_delta_report(multi, single), out, formats)


@eval_group.command("data-ablation")
@click.option("--runs", "labeled_runs", multiple=True, required=True,
              help="fraction=runs_dir, e.g. --runs 1.0=runs_full --runs 0.2=runs_small.")
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "formats", default="md,csv,json", show_default=True)
def eval_data_ablation(
    labeled_runs: tuple[str, ...], refs_path: str, manifest_path: str | None, out: str, formats: str
) -> None:
    refs = _load_refs(refs_path, manifest_path)
    per_fraction = {}
    for item in labeled_runs:
        fraction_text, _, runs_dir = item.partition("=")
        per_fraction[float(fraction_text)] = ev.stagewise_report(_runs_for(refs, runs_dir), refs)
    _emit(ev.data_ablation_report(per_fraction), out, formats)


@eval_group.command("stage-ablation")
@click.option("--baseline-runs", required=True, type=click.Path(exists=True))
@click.option("--variant", "variants", multiple=True, required=True,
              help="stage=runs_dir with stage in requirement|scxml|pseudocode.")
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "formats", default="md,csv,json", show_default=True)
def eval_stage_ablation(
    baseline_runs: str,
    variants: tuple[str, ...],
    refs_path: str,
    manifest_path: str | None,
    out: str,
    formats: str,
) -> None:
    refs = _load_refs(refs_path, manifest_path)
    baseline = ev.stagewise_report(_runs_for(refs, baseline_runs), refs)
    variant_reports = {}
    for item in variants:
        stage_key, _, runs_dir = item.partition("=")
        variant_reports[Stage.from_key(stage_key)] = ev.stagewise_report(_runs_for(refs, runs_dir), refs)
    _emit(ev.stage_ablation_report(variant_reports, baseline), out, formats)


# --- serve -------------------------------------------------------------------------


@main.command("serve")
@click.option("--addr", default="127.0.0.1:8080", show_default=True)
@click.option("--backends-file", required=True, type=click.Path(exists=True))
@click.option("--runs-dir", default="runs", show_default=True)
@click.option("--ui-dir", default=None, type=click.Path(),
              help="Static review-client bundle served at /ui.")
def serve_command(addr: str, backends_file: str, runs_dir: str, ui_dir: str | None) -> None:
    """Start the HTTP service (token via LIFEGEN_API_TOKEN)."""
    import uvicorn

    from lifegen.api import create_app

    host, _, port = addr.partition(":")
    app = create_app(RunStore(runs_dir), load_backends(backends_file), ui_dir=ui_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080))


if __name__ == "__main__":
    main()
