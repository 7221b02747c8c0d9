import base64
import json
import re
import threading

import pytest
from fastapi.testclient import TestClient

from prefbo.objectives import make_objective, make_source_field
from prefbo.service import PROTOCOL_VERSION, create_app

PREVIEW_PATH = re.compile(r"^/previews/[0-9a-f]{32}\.pgm$")

SMALL = {
    "task": "warp-affine6",
    "task_seed": 3,
    "field_size": 16,
    "budget": 2,
    "choices_per_round": 3,
    "init_batches": 2,
    "seed": 7,
}


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "data")
    with TestClient(app) as c:
        yield c


def _create(client, **overrides):
    payload = {**SMALL, **overrides}
    response = client.post("/api/v1/sessions", json=payload)
    assert response.status_code == 201, response.text
    return response.json()


def test_healthz(client):
    response = client.get("/api/v1/healthz")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "protocol_version": PROTOCOL_VERSION}


def test_create_session_shape(client):
    body = _create(client)
    assert body["protocol_version"] == PROTOCOL_VERSION
    assert body["state"] == "awaiting-choice"
    assert body["kind"] == "round"
    assert body["round"] == 1
    assert body["total_rounds"] == 4
    assert body["remaining_rounds"] == 4
    assert body["remaining_budget"] == 2
    assert body["choices_per_round"] == 3
    assert PREVIEW_PATH.match(body["target_preview"])
    batch = body["batch"]
    assert batch["round"] == 1
    assert len(batch["previews"]) == 3
    assert all(PREVIEW_PATH.match(p) for p in batch["previews"])
    assert body["final"] is None


def test_preview_bytes_are_pgm(client):
    body = _create(client)
    response = client.get(body["target_preview"])
    assert response.status_code == 200
    assert response.headers["content-type"].startswith("image/x-portable-graymap")
    assert response.content.startswith(b"P5")
    assert client.get("/previews/not-a-preview.pgm").status_code == 404
    assert client.get("/previews/" + "0" * 32 + ".pgm").status_code == 404


def test_unknown_session_and_bad_batch(client):
    assert client.get("/api/v1/sessions/nope/batch").status_code == 404
    body = _create(client)
    sid = body["session_id"]
    response = client.post(
        f"/api/v1/sessions/{sid}/choices",
        json={"batch_id": "bogus", "winners": [0]},
    )
    assert response.status_code == 409


def test_out_of_range_choices_per_round_rejected(client):
    response = client.post("/api/v1/sessions", json={**SMALL, "choices_per_round": 13})
    assert response.status_code == 422
    response = client.post("/api/v1/sessions", json={**SMALL, "init_batches": 0})
    assert response.status_code == 422
    response = client.post("/api/v1/sessions", json={**SMALL, "task": "warp-affine7"})
    assert response.status_code == 400


def _drive_to_final(client, body):
    responses = [body]
    while body["final"] is None:
        batch = body["batch"]
        response = client.post(
            f"/api/v1/sessions/{body['session_id']}/choices",
            json={"batch_id": batch["batch_id"], "winners": [0]},
        )
        assert response.status_code == 200, response.text
        body = response.json()
        responses.append(body)
    return body, responses


def test_full_session_to_final(client):
    body = _create(client)
    final_body, responses = _drive_to_final(client, body)
    assert final_body["kind"] == "final"
    assert final_body["state"] == "finished"
    assert final_body["remaining_rounds"] == 0
    assert final_body["remaining_budget"] == 0
    assert final_body["batch"] is None
    final = final_body["final"]
    assert len(final["theta"]) == 6
    assert final["rounds_completed"] == 4
    assert PREVIEW_PATH.match(final["render"])
    assert PREVIEW_PATH.match(final["target_preview"])
    render = client.get(final["render"])
    assert render.status_code == 200
    assert render.content.startswith(b"P5")

    # rounds advance one at a time
    assert [r["round"] for r in responses[:-1]] == [1, 2, 3, 4]

    sid = final_body["session_id"]
    final_again = client.get(f"/api/v1/sessions/{sid}/final")
    assert final_again.status_code == 200
    assert final_again.json()["final"]["theta"] == final["theta"]

    status = client.get(f"/api/v1/sessions/{sid}/status").json()
    assert status["state"] == "finished"
    assert len(status["trajectory"]) == 4
    assert all(PREVIEW_PATH.match(t["incumbent_preview"]) for t in status["trajectory"])

    # a choice against a finished session is refused
    refused = client.post(
        f"/api/v1/sessions/{sid}/choices",
        json={"batch_id": "anything", "winners": [0]},
    )
    assert refused.status_code == 409


def test_double_submit_consumes_one_round(client):
    body = _create(client)
    sid = body["session_id"]
    batch_id = body["batch"]["batch_id"]
    first = client.post(
        f"/api/v1/sessions/{sid}/choices", json={"batch_id": batch_id, "winners": [1]}
    )
    assert first.status_code == 200
    second = client.post(
        f"/api/v1/sessions/{sid}/choices", json={"batch_id": batch_id, "winners": [1]}
    )
    assert second.status_code == 409
    status = client.get(f"/api/v1/sessions/{sid}/status").json()
    assert status["round"] == 1
    assert len(status["trajectory"]) == 1


def test_concurrent_duplicate_submissions(client):
    body = _create(client)
    sid = body["session_id"]
    batch_id = body["batch"]["batch_id"]
    codes = []
    lock = threading.Lock()

    def submit():
        response = client.post(
            f"/api/v1/sessions/{sid}/choices",
            json={"batch_id": batch_id, "winners": [0]},
        )
        with lock:
            codes.append(response.status_code)

    threads = [threading.Thread(target=submit) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(codes) == [200, 409]
    status = client.get(f"/api/v1/sessions/{sid}/status").json()
    assert status["round"] == 1


def test_invalid_winner_positions_rejected(client):
    body = _create(client)
    sid = body["session_id"]
    batch_id = body["batch"]["batch_id"]
    for winners in ([], [5], [0, 0], [0, 1]):
        response = client.post(
            f"/api/v1/sessions/{sid}/choices",
            json={"batch_id": batch_id, "winners": winners},
        )
        assert response.status_code == 400, winners
    # the round is still pending after rejected submissions
    status = client.get(f"/api/v1/sessions/{sid}/status").json()
    assert status["round"] == 0
    assert status["state"] == "awaiting-choice"


def test_subset_likelihood_accepts_multiple_winners(client):
    body = _create(client, likelihood="subset-logit")
    sid = body["session_id"]
    response = client.post(
        f"/api/v1/sessions/{sid}/choices",
        json={"batch_id": body["batch"]["batch_id"], "winners": [0, 2]},
    )
    assert response.status_code == 200
    assert response.json()["round"] == 2


def test_zero_budget_session_finishes_after_init(client):
    body = _create(client, budget=0, init_batches=1)
    assert body["total_rounds"] == 1
    final_body, _ = _drive_to_final(client, body)
    assert final_body["final"]["rounds_completed"] == 1


def test_custom_task_upload(client):
    source = make_source_field(11, size=16)
    encoded = base64.b64encode(source.to_pgm()).decode("ascii")
    hidden = [0.0] * 24
    hidden[0] = 0.05
    hidden[1] = -0.04
    body = _create(
        client,
        source_pgm_base64=encoded,
        hidden_theta=hidden,
        components=[0, 1],
    )
    assert body["choices_per_round"] == 3
    assert len(body["batch"]["previews"]) == 3
    missing = client.post(
        "/api/v1/sessions", json={**SMALL, "source_pgm_base64": encoded}
    )
    assert missing.status_code == 400


def _walk(node, found):
    if isinstance(node, dict):
        for key, value in node.items():
            found["keys"].add(key)
            _walk(value, found)
    elif isinstance(node, list):
        for value in node:
            _walk(value, found)
    elif isinstance(node, float):
        found["floats"].append(node)


def test_no_hidden_state_leaks(client):
    body = _create(client)
    final_body, responses = _drive_to_final(client, body)
    sid = final_body["session_id"]
    responses.append(client.get(f"/api/v1/sessions/{sid}/status").json())
    responses.append(client.get(f"/api/v1/sessions/{sid}/batch").json())

    found = {"keys": set(), "floats": []}
    for response in responses:
        _walk(response, found)
    for key in found["keys"]:
        assert "hidden" not in key.lower()
        assert "regret" not in key.lower()
        assert "objective" not in key.lower()

    # the hidden warp parameters never appear anywhere in the wire traffic
    task = make_objective(
        SMALL["task"], task_seed=SMALL["task_seed"], size=SMALL["field_size"]
    )
    hidden = [float(v) for v in task.payload["hidden_theta"] if v != 0.0]
    assert hidden
    for value in hidden:
        assert all(value != seen for seen in found["floats"])


def test_restart_restores_sessions(tmp_path):
    data_dir = tmp_path / "data"
    app = create_app(data_dir)
    with TestClient(app) as client:
        body = _create(client)
        sid = body["session_id"]
        batch_id = body["batch"]["batch_id"]
        first = client.post(
            f"/api/v1/sessions/{sid}/choices",
            json={"batch_id": batch_id, "winners": [2]},
        )
        assert first.status_code == 200
        next_batch = first.json()["batch"]

    # a fresh process over the same data directory picks the session back up
    revived = create_app(data_dir)
    with TestClient(revived) as client:
        status = client.get(f"/api/v1/sessions/{sid}/status")
        assert status.status_code == 200
        body = status.json()
        assert body["round"] == 1
        assert body["state"] == "awaiting-choice"
        assert body["batch"]["batch_id"] == next_batch["batch_id"]
        assert body["batch"]["previews"] == next_batch["previews"]
        assert len(body["trajectory"]) == 1
        assert PREVIEW_PATH.match(body["trajectory"][0]["incumbent_preview"])

        # the stale pre-restart token is refused, then play on to the end
        stale = client.post(
            f"/api/v1/sessions/{sid}/choices",
            json={"batch_id": batch_id, "winners": [0]},
        )
        assert stale.status_code == 409
        current = client.get(f"/api/v1/sessions/{sid}/batch").json()
        final_body, _ = _drive_to_final(client, current)
        assert final_body["final"]["rounds_completed"] == 4

    # session files live under <data_dir>/sessions/<id>.json
    stored = json.loads((data_dir / "sessions" / f"{sid}.json").read_text("utf-8"))
    assert stored["session_id"] == sid
