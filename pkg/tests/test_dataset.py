import json

import pytest

from lifegen.dataset import (
    DatasetTooSmallError,
    DocumentSource,
    ReviewDecision,
    apply_review,
    audit_no_leakage,
    ablate_stage,
    build_from_code,
    build_from_document,
    evolve_from_seeds,
    export_instruction_pairs,
    load_decisions,
    save_decisions,
    seed_payload,
    split,
    subsample,
)
from lifegen.gateway import scripted_backend
from lifegen.prompts import extract_input_section, registry
from lifegen.records import LifecycleRecord, RecordSource, Stage

VALID_SCXML = '<scxml initial="a"><state id="a"/></scxml>'


def make_record(i: int, source: RecordSource = RecordSource.DOCUMENT) -> LifecycleRecord:
    return LifecycleRecord(
        id=f"rec-{i:03d}",
        source=source,
        intent=f"intent {i} for the device",
        requirement=f"requirement {i} with several more words",
        scxml=f'<scxml initial="st{i}"><state id="st{i}"/></scxml>',
        pseudocode=f"pseudo {i}: loop and emit",
        code=f"x = {i}\ny = x + 1",
    )


class TestDocumentRoute:
    def test_four_calls_complete_record(self):
        backend = scripted_backend(["the intent", "the requirement", VALID_SCXML, "the code"])
        source = DocumentSource(fsm_description="fsm text", pseudocode="pseudo text")
        result = build_from_document([source], backend)
        assert result.findings == []
        (record,) = result.records
        assert record.is_complete
        assert record.source is RecordSource.DOCUMENT
        assert record.pseudocode == "pseudo text"
        assert record.fsm_description == "fsm text"
        assert len(backend.prompts) == 4
        # first three steps read the FSM description, the last the pseudocode
        assert [extract_input_section(p) for p in backend.prompts] == [
            "fsm text",
            "fsm text",
            "fsm text",
            "pseudo text",
        ]

    def test_empty_input(self):
        result = build_from_document([], scripted_backend([]))
        assert result.records == [] and result.findings == []

    def test_failure_on_second_call(self):
        backend = scripted_backend(["only the intent"])
        result = build_from_document(
            [DocumentSource(fsm_description="f", pseudocode="p")], backend
        )
        (record,) = result.records
        assert record.intent == "only the intent"
        assert record.requirement is None and record.code is None
        assert [f.kind for f in result.findings] == ["incomplete"]


class TestCodeRoute:
    PROGRAM = "state = 'idle'\nprint(state)"

    def test_five_calls_complete_record(self):
        backend = scripted_backend(["fsm desc", "the intent", "the requirement", VALID_SCXML, "the pseudo"])
        result = build_from_code([self.PROGRAM], backend)
        assert result.findings == []
        (record,) = result.records
        assert record.is_complete
        assert record.code == self.PROGRAM
        assert record.fsm_description == "fsm desc"
        assert len(backend.prompts) == 5
        # summary and pseudocode read the program; the middle three read the summary
        sections = [extract_input_section(p) for p in backend.prompts]
        assert sections == [self.PROGRAM, "fsm desc", "fsm desc", "fsm desc", self.PROGRAM]

    def test_unparsable_program_skipped(self):
        result = build_from_code(["def broken(:"], scripted_backend([]))
        assert result.records == []
        assert [f.kind for f in result.findings] == ["unparsable"]

    def test_two_programs_ten_calls(self):
        backend = scripted_backend([f"r{i}" for i in range(10)])
        result = build_from_code([self.PROGRAM, "y = 2"], backend)
        assert len(backend.prompts) == 10
        assert len(result.records) == 2

    def test_pseudocode_sample_substituted(self):
        backend = scripted_backend(["a", "b", "c", "d", "e"])
        build_from_code([self.PROGRAM], backend, pseudocode_sample="SAMPLE PSEUDO")
        assert "The pseudo-code example is as follows: SAMPLE PSEUDO," in backend.prompts[4]


class TestSeedRoute:
    def make_evolved_json(self) -> str:
        return json.dumps(
            {
                "raw": "new intent",
                "detail": "new requirement",
                "fsm": "new fsm description",
                "pseudocode": "new pseudo",
                "code": "z = 1",
            }
        )

    def test_well_formed_json_yields_record(self):
        backend = scripted_backend([self.make_evolved_json()])
        result = evolve_from_seeds([make_record(1)], backend, count=1)
        assert result.findings == []
        (record,) = result.records
        assert record.source is RecordSource.SEED
        assert record.intent == "new intent"
        assert record.fsm_description == "new fsm description"
        assert record.scxml is None  # natural-language design, not SCXML

    def test_fenced_json_accepted(self):
        backend = scripted_backend([f"```json\n{self.make_evolved_json()}\n```"])
        result = evolve_from_seeds([make_record(1)], backend, count=1)
        assert len(result.records) == 1

    def test_not_json_rejected_with_finding(self):
        backend = scripted_backend(["not json"])
        result = evolve_from_seeds([make_record(1)], backend, count=1)
        assert result.records == []
        assert [f.kind for f in result.findings] == ["json_parse_error"]

    def test_missing_field_rejected(self):
        backend = scripted_backend([json.dumps({"raw": "x", "detail": "y"})])
        result = evolve_from_seeds([make_record(1)], backend, count=1)
        assert [f.kind for f in result.findings] == ["missing_field"]

    def test_round_robin_sampling(self):
        backend = scripted_backend([self.make_evolved_json()] * 3)
        seeds = [make_record(1), make_record(2)]
        evolve_from_seeds(seeds, backend, count=3)
        assert len(backend.prompts) == 3
        assert seed_payload(seeds[0]) in backend.prompts[0]
        assert seed_payload(seeds[1]) in backend.prompts[1]
        assert seed_payload(seeds[0]) in backend.prompts[2]

    def test_incomplete_seed_rejected(self):
        partial = LifecycleRecord(id="p", intent="i")
        with pytest.raises(ValueError, match="complete"):
            evolve_from_seeds([partial], scripted_backend([]), count=1)


class TestSplit:
    def test_hundred_records_seed7(self):
        records = [make_record(i) for i in range(100)]
        manifest = split(records, seed=7)
        assert len(manifest.train_ids) == 80
        assert len(manifest.test_ids) == 20
        assert set(manifest.train_ids).isdisjoint(manifest.test_ids)

    def test_deterministic(self):
        records = [make_record(i) for i in range(40)]
        a, b = split(records, seed=7), split(records, seed=7)
        assert a.train_ids == b.train_ids and a.test_ids == b.test_ids
        c = split(records, seed=8)
        assert c.test_ids != a.test_ids

    def test_ten_records(self):
        manifest = split([make_record(i) for i in range(10)], seed=1)
        assert (len(manifest.train_ids), len(manifest.test_ids)) == (8, 2)

    def test_too_small(self):
        with pytest.raises(DatasetTooSmallError):
            split([make_record(i) for i in range(4)], seed=0)

    def test_incomplete_rejected(self):
        records = [make_record(i) for i in range(5)] + [LifecycleRecord(id="p", intent="i")]
        with pytest.raises(ValueError, match="incomplete"):
            split(records, seed=0)

    def test_manifest_round_trip(self, tmp_path):
        manifest = split([make_record(i) for i in range(10)], seed=3, name="toy")
        path = tmp_path / "manifest.json"
        manifest.save(path)
        loaded = manifest.load(path)
        assert loaded == manifest
        assert loaded.records == 10


class TestSubsample:
    def test_fraction_ladder_sizes(self):
        ids = [f"id{i}" for i in range(100)]
        subsets = subsample(ids, seed=5)
        assert {f: len(s) for f, s in subsets.items()} == {1.0: 100, 0.8: 80, 0.6: 60, 0.4: 40, 0.2: 20}

    def test_nested(self):
        ids = [f"id{i}" for i in range(50)]
        subsets = subsample(ids, seed=5)
        fractions = sorted(subsets)
        for small, large in zip(fractions, fractions[1:]):
            assert subsets[small] <= subsets[large]

    def test_full_fraction_is_whole_set(self):
        ids = [f"id{i}" for i in range(30)]
        assert subsample(ids, seed=0)[1.0] == frozenset(ids)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            subsample(["a"], fractions=[0.0], seed=0)


class TestAblation:
    def test_remove_requirement(self):
        record = make_record(1)
        pairs = ablate_stage([record], Stage.REQUIREMENT)
        boundaries = [(p.from_stage, p.to_stage) for p in pairs]
        assert boundaries == [
            (Stage.INTENT, Stage.SCXML),
            (Stage.SCXML, Stage.PSEUDOCODE),
            (Stage.PSEUDOCODE, Stage.CODE),
        ]
        bridge = pairs[0]
        assert bridge.input == record.intent and bridge.output == record.scxml

    def test_remove_scxml_bridges_requirement_to_pseudocode(self):
        pairs = ablate_stage([make_record(1)], Stage.SCXML)
        assert (Stage.REQUIREMENT, Stage.PSEUDOCODE) in [(p.from_stage, p.to_stage) for p in pairs]
        assert len(pairs) == 3

    def test_remove_pseudocode_bridges_scxml_to_code(self):
        pairs = ablate_stage([make_record(1)], Stage.PSEUDOCODE)
        assert (Stage.SCXML, Stage.CODE) in [(p.from_stage, p.to_stage) for p in pairs]

    def test_three_pairs_per_complete_record(self):
        records = [make_record(i) for i in range(4)]
        for stage in (Stage.REQUIREMENT, Stage.SCXML, Stage.PSEUDOCODE):
            assert len(ablate_stage(records, stage)) == 3 * len(records)

    def test_incomplete_records_skipped(self):
        partial = LifecycleRecord(id="p", intent="i", requirement="r")
        assert ablate_stage([partial], Stage.SCXML) == []

    def test_terminal_stages_rejected(self):
        with pytest.raises(ValueError):
            ablate_stage([], Stage.CODE)
        with pytest.raises(ValueError):
            ablate_stage([], Stage.INTENT)


class TestExport:
    def test_multi_step_lines(self, tmp_path):
        out = tmp_path / "train.jsonl"
        n = export_instruction_pairs([make_record(1)], "multi_step", out)
        assert n == 4
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert all(set(l) == {"instruction", "input", "output"} for l in lines)
        reg = registry()
        assert lines[0]["instruction"] == reg.get("multi_step/requirement").instruction
        assert lines[1]["instruction"] == reg.get("multi_step/scxml").instruction

    def test_one_step_lines(self, tmp_path):
        out = tmp_path / "train.jsonl"
        assert export_instruction_pairs([make_record(1)], "one_step", out) == 4
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        record = make_record(1)
        assert all(l["input"] == record.intent for l in lines)

    def test_train_filter_blocks_leakage(self, tmp_path):
        records = [make_record(i) for i in range(10)]
        manifest = split(records, seed=2)
        out = tmp_path / "train.jsonl"
        export_instruction_pairs(records, "multi_step", out, train_ids=manifest.train_ids)
        assert audit_no_leakage(out, records, manifest.test_ids) == []

    def test_audit_catches_leakage(self, tmp_path):
        records = [make_record(i) for i in range(10)]
        manifest = split(records, seed=2)
        out = tmp_path / "leaky.jsonl"
        export_instruction_pairs(records, "multi_step", out)  # no filter: leaks test ids
        assert audit_no_leakage(out, records, manifest.test_ids) != []


class TestReview:
    def test_accept_reject(self):
        records = [make_record(1), make_record(2), make_record(3)]
        decisions = [
            ReviewDecision("rec-001", "accepted", "alex"),
            ReviewDecision("rec-002", "rejected", "alex", reason="inconsistent"),
        ]
        accepted = apply_review(records, decisions)
        assert [r.id for r in accepted] == ["rec-001"]

    def test_any_rejection_blocks(self):
        records = [make_record(1)]
        decisions = [
            ReviewDecision("rec-001", "accepted", "alex"),
            ReviewDecision("rec-001", "rejected", "sam"),
        ]
        assert apply_review(records, decisions) == []

    def test_decision_round_trip(self, tmp_path):
        path = tmp_path / "decisions.jsonl"
        decisions = [ReviewDecision("rec-001", "accepted", "alex", reason="ok")]
        save_decisions(decisions, path)
        assert load_decisions(path) == decisions

    def test_duplicate_decision_rejected(self, tmp_path):
        path = tmp_path / "decisions.jsonl"
        save_decisions(
            [ReviewDecision("r", "accepted", "alex"), ReviewDecision("r", "rejected", "alex")], path
        )
        with pytest.raises(ValueError, match="duplicate"):
            load_decisions(path)

    def test_invalid_verdict(self):
        with pytest.raises(ValueError):
            ReviewDecision("r", "maybe", "alex")


class TestDedup:
    def test_identical_artifact_chains_collapse(self):
        from lifegen.dataset import dedup_records

        a = make_record(1)
        twin = LifecycleRecord(
            id="other-id",
            source=RecordSource.CODE,
            intent=a.intent,
            requirement=a.requirement,
            scxml=a.scxml,
            pseudocode=a.pseudocode,
            code=a.code,
        )
        b = make_record(2)
        assert dedup_records([a, twin, b]) == [a, b]
