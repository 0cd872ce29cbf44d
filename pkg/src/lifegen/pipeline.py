"""Pipeline orchestration: staged runs with inheritance, gates and resume.

A multi-step run walks Requirement -> Scxml -> Pseudocode -> Code, feeding
each stage's stored output verbatim into the next stage's prompt INPUT
slot. Gates pause the run just before a gated stage is generated so the
input artifact can be reviewed or edited; ``resume`` continues from the
checkpoint. Every run persists to its own directory (state.json, one file
per artifact, transcript.jsonl) and survives process restarts.

Completions are stored raw; ``extract_fenced`` strips a markdown code fence
when downstream validation or metrics need the bare artifact.
"""

from __future__ import annotations

import json
import re
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from lifegen.gateway import Backend, GatewayError, generate
from lifegen.prompts import PromptMode, registry
from lifegen.records import GENERATION_STAGES, Stage, stage_successor

Clock = Callable[[], str]

_FENCE = re.compile(r"```[^\n]*\n(.*?)\n?```", re.DOTALL)

PROVENANCE_GENERATED = "generated"
PROVENANCE_HUMAN = "human_edited"

DEFAULT_GATES = frozenset({Stage.REQUIREMENT, Stage.SCXML})


class RunNotFoundError(KeyError):
    pass


class NotAwaitingReviewError(RuntimeError):
    pass


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def extract_fenced(text: str) -> str:
    """Contents of the first markdown code fence, or the text unchanged."""
    match = _FENCE.search(text)
    return match.group(1) if match else text


@dataclass
class RunState:
    """Persisted execution state of one pipeline run."""

    run_id: str
    mode: str  # multi_step | one_step | gated
    backend: str
    input_intent: str
    artifacts: dict[Stage, str] = field(default_factory=dict)
    provenance: dict[Stage, str] = field(default_factory=dict)
    status: str = "running"  # running | awaiting_review | completed | failed
    checkpoint_stage: Stage | None = None
    gates: frozenset[Stage] = frozenset()
    target_stage: Stage | None = None
    reference_id: str | None = None
    error: str | None = None
    scxml_findings: list[dict] | None = None
    created_at: str = ""
    updated_at: str = ""
    transcript_path: str = "transcript.jsonl"

    def artifact_or_intent(self, stage: Stage) -> str:
        """Stage artifact, with Intent mapping to the run's input intent."""
        if stage is Stage.INTENT:
            return self.input_intent
        return self.artifacts[stage]

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "mode": self.mode,
            "backend": self.backend,
            "status": self.status,
            "input_intent": self.input_intent,
            "checkpoint_stage": self.checkpoint_stage.key if self.checkpoint_stage is not None else None,
            "gates": sorted(s.key for s in self.gates),
            "target_stage": self.target_stage.key if self.target_stage is not None else None,
            "reference_id": self.reference_id,
            "error": self.error,
            "scxml_findings": self.scxml_findings,
            "provenance": {s.key: p for s, p in sorted(self.provenance.items())},
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "transcript_path": self.transcript_path,
        }

    @classmethod
    def from_json(cls, data: dict, artifacts: dict[Stage, str]) -> "RunState":
        return cls(
            run_id=data["run_id"],
            mode=data["mode"],
            backend=data["backend"],
            input_intent=data["input_intent"],
            artifacts=artifacts,
            provenance={Stage.from_key(k): v for k, v in data.get("provenance", {}).items()},
            status=data["status"],
            checkpoint_stage=Stage.from_key(data["checkpoint_stage"]) if data.get("checkpoint_stage") else None,
            gates=frozenset(Stage.from_key(k) for k in data.get("gates", [])),
            target_stage=Stage.from_key(data["target_stage"]) if data.get("target_stage") else None,
            reference_id=data.get("reference_id"),
            error=data.get("error"),
            scxml_findings=data.get("scxml_findings"),
            created_at=data.get("created_at", ""),
            updated_at=data.get("updated_at", ""),
            transcript_path=data.get("transcript_path", "transcript.jsonl"),
        )


class RunStore:
    """Directory-backed run persistence with per-run write serialization."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()

    def lock(self, run_id: str) -> threading.RLock:
        with self._registry_lock:
            return self._locks.setdefault(run_id, threading.RLock())

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def save(self, state: RunState, clock: Clock = utc_now) -> None:
        with self.lock(state.run_id):
            state.updated_at = clock()
            run_dir = self.run_dir(state.run_id)
            artifacts_dir = run_dir / "artifacts"
            artifacts_dir.mkdir(parents=True, exist_ok=True)
            for stage, text in state.artifacts.items():
                (artifacts_dir / f"{stage.value}_{stage.key}.txt").write_text(text, encoding="utf-8")
            payload = json.dumps(state.to_json(), indent=2, ensure_ascii=False, sort_keys=True)
            tmp = run_dir / "state.json.tmp"
            tmp.write_text(payload + "\n", encoding="utf-8")
            tmp.replace(run_dir / "state.json")

    def append_transcript(self, state: RunState, entry: dict) -> None:
        with self.lock(state.run_id):
            path = self.run_dir(state.run_id) / state.transcript_path
            with path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def load(self, run_id: str) -> RunState:
        run_dir = self.run_dir(run_id)
        state_path = run_dir / "state.json"
        if not state_path.exists():
            raise RunNotFoundError(run_id)
        data = json.loads(state_path.read_text("utf-8"))
        artifacts: dict[Stage, str] = {}
        artifacts_dir = run_dir / "artifacts"
        if artifacts_dir.exists():
            for file in artifacts_dir.glob("*.txt"):
                stage_key = file.stem.split("_", 1)[1]
                artifacts[Stage.from_key(stage_key)] = file.read_text("utf-8")
        return RunState.from_json(data, artifacts)

    def list_runs(self, status: str | None = None) -> list[RunState]:
        """All runs, newest update first; optionally filtered by status."""
        states = []
        for state_path in self.root.glob("*/state.json"):
            state = self.load(state_path.parent.name)
            if status is None or state.status == status:
                states.append(state)
        states.sort(key=lambda s: (s.updated_at, s.run_id), reverse=True)
        return states


def new_run_id() -> str:
    return uuid.uuid4().hex[:12]


class Pipeline:
    """Executes and resumes runs against a run store."""

    def __init__(self, store: RunStore, clock: Clock = utc_now):
        self.store = store
        self.clock = clock
        self.registry = registry()

    # -- run modes -------------------------------------------------------

    def create_run(
        self,
        intent: str,
        mode: str,
        backend_name: str,
        gates: frozenset[Stage] | set[Stage] = frozenset(),
        target_stage: Stage | None = None,
        run_id: str | None = None,
        reference_id: str | None = None,
    ) -> RunState:
        """Persist a fresh run in running status without generating yet."""
        if not intent:
            raise ValueError("intent must be nonempty")
        if mode not in ("multi_step", "one_step", "gated"):
            raise ValueError(f"unknown mode {mode!r}")
        gates = frozenset(gates)
        if mode == "one_step":
            if target_stage is None or target_stage is Stage.INTENT:
                raise ValueError("one_step runs need a target stage after Intent")
        elif mode == "gated" and not gates:
            gates = DEFAULT_GATES
        elif gates:
            mode = "gated"
        state = RunState(
            run_id=run_id or new_run_id(),
            mode=mode,
            backend=backend_name,
            input_intent=intent,
            gates=gates if mode != "one_step" else frozenset(),
            target_stage=target_stage if mode == "one_step" else None,
            reference_id=reference_id,
            created_at=self.clock(),
        )
        self.store.save(state, self.clock)
        return state

    def execute(self, state: RunState, backend: Backend) -> RunState:
        """Drive a freshly created run to its next stop (gate, end or failure)."""
        if state.mode == "one_step":
            return self._execute_one_step(state, backend)
        return self._advance(state, backend)

    def run_multi_step(
        self,
        intent: str,
        backend: Backend,
        gates: frozenset[Stage] | set[Stage] = frozenset(),
        run_id: str | None = None,
        reference_id: str | None = None,
    ) -> RunState:
        """Generate all four stages with contextual inheritance.

        If the next stage is gated, the run pauses in awaiting_review with
        the just-produced stage as checkpoint.
        """
        state = self.create_run(
            intent,
            "gated" if gates else "multi_step",
            backend.name,
            gates=gates,
            run_id=run_id,
            reference_id=reference_id,
        )
        return self._advance(state, backend)

    def run_one_step(
        self,
        intent: str,
        target_stage: Stage,
        backend: Backend,
        run_id: str | None = None,
        reference_id: str | None = None,
    ) -> RunState:
        """Map the raw intent directly to one target artifact."""
        state = self.create_run(
            intent,
            "one_step",
            backend.name,
            target_stage=target_stage,
            run_id=run_id,
            reference_id=reference_id,
        )
        return self._execute_one_step(state, backend)

    def _execute_one_step(self, state: RunState, backend: Backend) -> RunState:
        target_stage = state.target_stage
        assert target_stage is not None
        template = self.registry.for_stage(PromptMode.ONE_STEP, target_stage)
        try:
            result = generate(
                backend,
                self.registry.render(template.id, state.input_intent),
                transcript=lambda entry: self.store.append_transcript(state, entry),
            )
        except GatewayError as exc:
            state.status = "failed"
            state.error = str(exc)
            self.store.save(state, self.clock)
            return state
        state.artifacts[target_stage] = result.text
        state.provenance[target_stage] = PROVENANCE_GENERATED
        state.status = "completed"
        self._attach_scxml_findings(state)
        self.store.save(state, self.clock)
        return state

    def begin_resume(self, run_id: str, edited_artifact: str | None = None) -> RunState:
        """Validate and claim an awaiting_review run; applies an edit if given.

        Marks the run running so concurrent approvals cannot double-resume;
        follow with ``finish_resume`` to actually continue generation.
        """
        with self.store.lock(run_id):
            state = self.store.load(run_id)
            if state.status != "awaiting_review":
                raise NotAwaitingReviewError(f"run {run_id} is {state.status}, not awaiting_review")
            if edited_artifact is not None:
                self.edit_checkpoint(state, edited_artifact)
            state.status = "running"
            self.store.save(state, self.clock)
        return state

    def finish_resume(self, state: RunState, backend: Backend) -> RunState:
        skip_gate = stage_successor(state.checkpoint_stage) if state.checkpoint_stage is not None else None
        return self._advance(state, backend, skip_gate_for=skip_gate)

    def resume(self, run_id: str, edited_artifact: str | None = None, backend: Backend | None = None) -> RunState:
        """Continue an awaiting_review run, optionally replacing the checkpoint artifact."""
        if backend is None:
            raise ValueError("resume requires the backend to continue with")
        state = self.begin_resume(run_id, edited_artifact)
        return self.finish_resume(state, backend)

    def edit_checkpoint(self, state: RunState, text: str) -> RunState:
        """Replace the checkpoint artifact with reviewer-provided text."""
        if state.status != "awaiting_review" or state.checkpoint_stage is None:
            raise NotAwaitingReviewError(f"run {state.run_id} has no checkpoint to edit")
        stage = state.checkpoint_stage
        if stage is Stage.INTENT:
            state.input_intent = text
        else:
            state.artifacts[stage] = text
        state.provenance[stage] = PROVENANCE_HUMAN
        self.store.save(state, self.clock)
        return state

    def approve(self, run_id: str, backend: Backend) -> RunState:
        """Resume without edits (review sign-off)."""
        return self.resume(run_id, edited_artifact=None, backend=backend)

    def batch_run(
        self,
        intents: Sequence[str],
        mode: str,
        backend_provider: Backend | Callable[[int], Backend],
        parallelism: int = 1,
        target_stage: Stage | None = None,
        gates: frozenset[Stage] = frozenset(),
        reference_ids: Sequence[str] | None = None,
    ) -> list[RunState]:
        """Run every intent with per-run failure isolation, in input order."""
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")

        def backend_for(index: int) -> Backend:
            if callable(backend_provider):
                return backend_provider(index)
            return backend_provider

        def run_one(index: int) -> RunState:
            intent = intents[index]
            reference_id = reference_ids[index] if reference_ids else None
            if mode == "one_step":
                stage = target_stage or Stage.CODE
                return self.run_one_step(intent, stage, backend_for(index), reference_id=reference_id)
            return self.run_multi_step(
                intent, backend_for(index), gates=gates, reference_id=reference_id
            )

        if parallelism == 1:
            return [run_one(i) for i in range(len(intents))]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(run_one, range(len(intents))))

    # -- internals ---------------------------------------------------------

    def _advance(self, state: RunState, backend: Backend, skip_gate_for: Stage | None = None) -> RunState:
        """Generate stages from the current checkpoint until gate, end or failure."""
        start = state.checkpoint_stage if state.checkpoint_stage is not None else Stage.INTENT
        stage = stage_successor(start)
        state.status = "running"
        while stage is not None:
            if stage in state.gates and stage is not skip_gate_for:
                previous = Stage(stage.value - 1)
                state.status = "awaiting_review"
                state.checkpoint_stage = previous
                self.store.save(state, self.clock)
                return state
            template = self.registry.for_stage(PromptMode.MULTI_STEP, stage)
            input_text = state.artifact_or_intent(Stage(stage.value - 1))
            try:
                result = generate(
                    backend,
                    self.registry.render(template.id, input_text),
                    transcript=lambda entry: self.store.append_transcript(state, entry),
                )
            except GatewayError as exc:
                state.status = "failed"
                state.error = str(exc)
                self.store.save(state, self.clock)
                return state
            state.artifacts[stage] = result.text
            state.provenance[stage] = PROVENANCE_GENERATED
            state.checkpoint_stage = stage
            self.store.save(state, self.clock)
            stage = stage_successor(stage)
        state.status = "completed"
        state.checkpoint_stage = None
        self._attach_scxml_findings(state)
        self.store.save(state, self.clock)
        return state

    def _attach_scxml_findings(self, state: RunState) -> None:
        """Validate the SCXML artifact, if any; findings never block the run."""
        text = state.artifacts.get(Stage.SCXML)
        if not text:
            return
        state.scxml_findings = validate_scxml_text(extract_fenced(text))


def validate_scxml_text(text: str) -> list[dict]:
    """Parse+validate SCXML text into plain finding dictionaries."""
    from lifegen.scxml import parse_scxml, validate

    result = parse_scxml(text)
    if isinstance(result, list):
        return [
            {"kind": e.kind, "severity": "error", "message": e.message, "line": e.line}
            for e in result
        ]
    report = validate(result)
    return [
        {"kind": f.kind, "severity": f.severity, "message": f.message, "subject": f.subject}
        for f in report.findings
    ]
