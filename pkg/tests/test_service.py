import json
import time

import pytest
from fastapi.testclient import TestClient

from pmcausal.service import create_app
from pmcausal.simulation import main_scenario, scenario_to_json


def scenario_doc(**overrides):
    doc = scenario_to_json(main_scenario(n_replicates=3, superpop_size=1200, master_seed=11))
    doc["simulation"].update(overrides)
    return doc


def wait_done(client, run_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        handle = client.get(f"/runs/{run_id}").json()
        if handle["state"] in ("done", "failed"):
            return handle
        time.sleep(0.02)
    raise TimeoutError("run did not finish")


@pytest.fixture
def client():
    with TestClient(create_app()) as c:
        yield c


class TestHealth:
    def test_ok_with_version(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        import pmcausal

        assert body["version"] == pmcausal.__version__

    def test_responds_during_active_run(self, client):
        scenario_id = client.post("/scenarios", json=scenario_doc(n_replicates=200)).json()["scenario_id"]
        run = client.post("/runs", json={"scenario_id": scenario_id}).json()
        assert client.get("/health").status_code == 200
        wait_done(client, run["run_id"])


class TestScenarios:
    def test_valid_scenario_created(self, client):
        response = client.post("/scenarios", json=scenario_doc())
        assert response.status_code == 201
        assert "scenario_id" in response.json()

    def test_negative_prevalence_400_names_field(self, client):
        doc = scenario_doc()
        doc["covariates"][0]["prevalence"] = -0.4
        response = client.post("/scenarios", json=doc)
        assert response.status_code == 400
        assert "prevalence" in response.json()["detail"]

    def test_resubmitting_identical_body_creates_new_id(self, client):
        doc = scenario_doc()
        first = client.post("/scenarios", json=doc).json()["scenario_id"]
        second = client.post("/scenarios", json=doc).json()["scenario_id"]
        assert first != second

    def test_stored_scenario_retrievable(self, client):
        doc = scenario_doc()
        sid = client.post("/scenarios", json=doc).json()["scenario_id"]
        assert client.get(f"/scenarios/{sid}").json() == doc

    def test_non_json_body_400(self, client):
        response = client.post("/scenarios", content=b"not json", headers={"content-type": "application/json"})
        assert response.status_code == 400


class TestRuns:
    def test_queued_then_progress_reaches_total(self, client):
        sid = client.post("/scenarios", json=scenario_doc()).json()["scenario_id"]
        response = client.post("/runs", json={"scenario_id": sid})
        assert response.status_code == 202
        handle = response.json()
        assert handle["state"] in ("queued", "running")
        final = wait_done(client, handle["run_id"])
        assert final["state"] == "done"
        assert final["progress"] == {"completed": 3, "total": 3}

    def test_unknown_scenario_404(self, client):
        assert client.post("/runs", json={"scenario_id": "nope"}).status_code == 404

    def test_unknown_run_404(self, client):
        assert client.get("/runs/nope").status_code == 404
        assert client.get("/runs/nope/result").status_code == 404

    def test_result_409_while_running(self, client):
        sid = client.post("/scenarios", json=scenario_doc(n_replicates=400)).json()["scenario_id"]
        run = client.post("/runs", json={"scenario_id": sid}).json()
        response = client.get(f"/runs/{run['run_id']}/result")
        assert response.status_code in (409, 200)  # tolerate a very fast machine
        if response.status_code == 409:
            assert "state" in response.json()
        wait_done(client, run["run_id"])

    def test_queue_full_409(self):
        with TestClient(create_app(queue_capacity=1)) as client:
            sid = client.post("/scenarios", json=scenario_doc(n_replicates=500)).json()["scenario_id"]
            first = client.post("/runs", json={"scenario_id": sid})
            assert first.status_code == 202
            second = client.post("/runs", json={"scenario_id": sid})
            assert second.status_code == 409
            wait_done(client, first.json()["run_id"])

    def test_bad_method_selection_400(self, client):
        sid = client.post("/scenarios", json=scenario_doc()).json()["scenario_id"]
        response = client.post("/runs", json={"scenario_id": sid, "methods": ["magic"]})
        assert response.status_code == 400

    def test_result_payload_shape_and_determinism(self, client):
        sid = client.post("/scenarios", json=scenario_doc()).json()["scenario_id"]
        payloads = []
        for _ in range(2):
            run = client.post("/runs", json={"scenario_id": sid}).json()
            wait_done(client, run["run_id"])
            payloads.append(client.get(f"/runs/{run['run_id']}/result").json())
        assert json.dumps(payloads[0], sort_keys=True) == json.dumps(payloads[1], sort_keys=True)
        body = payloads[0]
        assert body["n_replicates"] == 3
        assert set(body["truth"].keys()) == {"CE1", "CE2", "CE3"}
        assert len(body["replicates"]["CE1"]["std"]) == 3

    def test_overrides_respected(self, client):
        sid = client.post("/scenarios", json=scenario_doc()).json()["scenario_id"]
        run = client.post(
            "/runs",
            json={"scenario_id": sid, "overrides": {"n_replicates": 2}, "methods": ["naive", "std"], "estimands": ["CE1"]},
        ).json()
        wait_done(client, run["run_id"])
        body = client.get(f"/runs/{run['run_id']}/result").json()
        assert body["n_replicates"] == 2
        assert body["methods"] == ["naive", "std"]
        assert body["estimands"] == ["CE1"]

    def test_invalid_override_rejected_up_front(self, client):
        sid = client.post("/scenarios", json=scenario_doc()).json()["scenario_id"]
        response = client.post("/runs", json={"scenario_id": sid, "overrides": {"cohort_size": 5000}})
        assert response.status_code == 400

    def test_failed_run_exposes_reason(self, monkeypatch):
        def explode(*args, **kwargs):
            raise RuntimeError("worker exploded")

        monkeypatch.setattr("pmcausal.service.run_experiment", explode)
        with TestClient(create_app()) as client:
            sid = client.post("/scenarios", json=scenario_doc()).json()["scenario_id"]
            run = client.post("/runs", json={"scenario_id": sid}).json()
            final = wait_done(client, run["run_id"])
            assert final["state"] == "failed"
            assert "worker exploded" in final["error"]
            assert client.get(f"/runs/{run['run_id']}/result").status_code == 409

    def test_completed_run_immutable(self, client):
        sid = client.post("/scenarios", json=scenario_doc()).json()["scenario_id"]
        run = client.post("/runs", json={"scenario_id": sid}).json()
        wait_done(client, run["run_id"])
        first = client.get(f"/runs/{run['run_id']}/result").json()
        second = client.get(f"/runs/{run['run_id']}/result").json()
        assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)


class TestPersistence:
    def test_scenario_and_result_written(self, tmp_path):
        with TestClient(create_app(persist_dir=tmp_path)) as client:
            sid = client.post("/scenarios", json=scenario_doc()).json()["scenario_id"]
            run = client.post("/runs", json={"scenario_id": sid}).json()
            wait_done(client, run["run_id"])
            assert (tmp_path / f"scenario-{sid}.json").exists()
            assert (tmp_path / f"result-{run['run_id']}.json").exists()
