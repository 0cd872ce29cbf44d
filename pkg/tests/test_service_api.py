import time

import pytest
from fastapi.testclient import TestClient

from lifegen.api import create_app
from lifegen.gateway import ScriptedBackend
from lifegen.pipeline import RunStore
from lifegen.prompts import extract_input_section

GOOD_SCXML = '<scxml initial="a"><state id="a"/></scxml>'
BAD_SCXML = '<scxml initial="a"><state id="a"><transition event="go" target="zz"/></state></scxml>'


@pytest.fixture()
def service(tmp_path):
    backends = {
        "full": ScriptedBackend(["R", GOOD_SCXML, "P", "C"], name="full"),
        "gated": ScriptedBackend(["R", GOOD_SCXML, "P", "C"], name="gated"),
    }
    store = RunStore(tmp_path / "runs")
    app = create_app(store, backends, token=None)
    return TestClient(app), backends


def wait_status(client, run_id, wanted, timeout=5.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        body = client.get(f"/runs/{run_id}").json()
        if body["status"] in wanted:
            return body
        time.sleep(0.01)
    raise AssertionError(f"run {run_id} never reached {wanted}")


class TestCreateAndGet:
    def test_multi_step_completes_with_four_artifacts(self, service):
        client, _ = service
        response = client.post("/runs", json={"intent": "make it", "backend": "full"})
        assert response.status_code == 201
        run_id = response.json()["run_id"]
        body = wait_status(client, run_id, {"completed"})
        assert set(body["artifacts"]) == {"requirement", "scxml", "pseudocode", "code"}

    def test_unknown_backend(self, service):
        client, _ = service
        response = client.post("/runs", json={"intent": "x", "backend": "nope"})
        assert response.status_code == 400
        assert response.json()["code"] == "unknown_backend"

    def test_invalid_mode(self, service):
        client, _ = service
        response = client.post("/runs", json={"intent": "x", "backend": "full", "mode": "warp"})
        assert response.status_code == 400
        assert response.json()["code"] == "invalid_mode"

    def test_unknown_run_404(self, service):
        client, _ = service
        response = client.get("/runs/zzz")
        assert response.status_code == 404
        assert response.json()["code"] == "run_not_found"

    def test_gated_run_waits_and_lists(self, service):
        client, _ = service
        response = client.post(
            "/runs", json={"intent": "gate me", "backend": "gated", "gates": ["scxml"]}
        )
        run_id = response.json()["run_id"]
        body = wait_status(client, run_id, {"awaiting_review"})
        assert body["checkpoint_stage"] == "requirement"
        listing = client.get("/runs", params={"status": "awaiting_review"}).json()
        assert [r["run_id"] for r in listing] == [run_id]


class TestReviewFlow:
    def gated_run(self, client) -> str:
        response = client.post(
            "/runs", json={"intent": "gate me", "backend": "gated", "gates": ["scxml"]}
        )
        run_id = response.json()["run_id"]
        wait_status(client, run_id, {"awaiting_review"})
        return run_id

    def test_patch_then_approve_feeds_edit_downstream(self, service):
        client, backends = service
        run_id = self.gated_run(client)
        patched = client.patch(
            f"/runs/{run_id}/artifact", json={"stage": "requirement", "text": "edited req"}
        )
        assert patched.status_code == 200
        assert patched.json()["provenance"]["requirement"] == "human_edited"
        assert patched.json()["status"] == "awaiting_review"
        # artifact text round-trips byte-identically
        assert client.get(f"/runs/{run_id}").json()["artifacts"]["requirement"] == "edited req"

        approved = client.post(f"/runs/{run_id}/approve")
        assert approved.status_code == 200
        wait_status(client, run_id, {"completed"})
        # the resumed generation received the edited requirement as INPUT
        assert extract_input_section(backends["gated"].prompts[1]) == "edited req"

    def test_patch_wrong_stage(self, service):
        client, _ = service
        run_id = self.gated_run(client)
        response = client.patch(f"/runs/{run_id}/artifact", json={"stage": "code", "text": "x"})
        assert response.status_code == 400
        assert response.json()["code"] == "stage_mismatch"

    def test_patch_completed_run_conflicts(self, service):
        client, _ = service
        response = client.post("/runs", json={"intent": "go", "backend": "full"})
        run_id = response.json()["run_id"]
        wait_status(client, run_id, {"completed"})
        patch = client.patch(f"/runs/{run_id}/artifact", json={"stage": "code", "text": "x"})
        assert patch.status_code == 409
        assert patch.json()["code"] == "not_awaiting_review"

    def test_double_approve_conflicts(self, service):
        client, _ = service
        run_id = self.gated_run(client)
        first = client.post(f"/runs/{run_id}/approve")
        assert first.status_code == 200
        second = client.post(f"/runs/{run_id}/approve")
        assert second.status_code == 409

    def test_validation_endpoint_reports_dangling_target(self, service):
        client, _ = service
        run_id = self.gated_run(client)
        client.patch(f"/runs/{run_id}/artifact", json={"stage": "requirement", "text": BAD_SCXML})
        # requirement checkpoints report no findings; scxml artifacts do
        response = client.get(f"/runs/{run_id}/validation", params={"stage": "requirement"})
        assert response.json()["findings"] == []

    def test_validation_of_scxml_artifact(self, tmp_path):
        backends = {"bad": ScriptedBackend(["R", BAD_SCXML], name="bad")}
        app = create_app(RunStore(tmp_path / "runs"), backends, token=None)
        client = TestClient(app)
        response = client.post(
            "/runs", json={"intent": "x", "backend": "bad", "gates": ["pseudocode"]}
        )
        run_id = response.json()["run_id"]
        wait_status(client, run_id, {"awaiting_review"})
        findings = client.get(f"/runs/{run_id}/validation").json()["findings"]
        assert any(f["kind"] == "DanglingTarget" for f in findings)


class TestAuth:
    def test_token_required_when_configured(self, tmp_path):
        app = create_app(RunStore(tmp_path / "runs"), {}, token="sekrit")
        client = TestClient(app)
        assert client.get("/runs").status_code == 401
        ok = client.get("/runs", headers={"Authorization": "Bearer sekrit"})
        assert ok.status_code == 200

    def test_openapi_served_at_spec(self, tmp_path):
        app = create_app(RunStore(tmp_path / "runs"), {}, token=None)
        client = TestClient(app)
        spec = client.get("/spec").json()
        assert "/runs/{run_id}/approve" in spec["paths"]
