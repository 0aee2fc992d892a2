import pytest
from fastapi.testclient import TestClient

from knee_xai.api import main as api
from knee_xai.core.schemas import PhantomParams
from knee_xai.data import generate_phantom, write_phantom_set
from knee_xai.harness import Trainer


@pytest.fixture
def client(monkeypatch):
    monkeypatch.setattr(api, "_orchestrator", None)
    return TestClient(api.app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_phantom_summary_is_reproducible(client, tiny_params):
    body = {"params": tiny_params.model_dump(mode="json"), "index": 2}
    first = client.post("/phantom", json=body).json()
    assert first == client.post("/phantom", json=body).json()
    expected = generate_phantom(tiny_params, 2)
    assert first["patient_id"] == expected.patient_id
    assert first["shape"] == list(expected.data.shape)
    assert (first["lesion_pixels"] > 0) == (expected.label == 1)


def test_phantom_rejects_bad_parameters(client):
    response = client.post("/phantom", json={"params": {"edge": 24}})
    assert response.status_code == 422


def test_missing_checkpoint_is_a_client_error(client, tmp_path):
    response = client.post("/evaluate", json={"checkpoint": str(tmp_path / "none.ckpt")})
    assert response.status_code == 400
    response = client.post("/attribute", json={"checkpoint": str(tmp_path / "none.ckpt"),
                                               "volume": str(tmp_path / "v.npy"), "out_dir": str(tmp_path)})
    assert response.status_code == 400


def test_report_needs_records(client, tmp_path):
    (tmp_path / "empty").mkdir()
    response = client.post("/report", json={"runs_dir": str(tmp_path / "empty"), "out_dir": str(tmp_path / "r")})
    assert response.status_code == 400


@pytest.mark.slow
def test_evaluate_attribute_and_report(client, make_config, tmp_path):
    record = Trainer().train(make_config(name="served", epochs=1)).record
    data = write_phantom_set(PhantomParams(edge=16, s_range=(2, 3), lesion_size=(2, 2), seed=9), 4,
                             tmp_path / "held_out")

    scored = client.post("/evaluate", json={"checkpoint": record.final_checkpoint, "data": str(data)})
    assert scored.status_code == 200
    assert scored.json()["n_samples"] == 4

    maps = client.post("/attribute", json={"checkpoint": record.final_checkpoint,
                                           "volume": str(tmp_path / "held_out" / "volume_0000.npy"),
                                           "method": "saliency", "out_dir": str(tmp_path / "maps")})
    assert maps.status_code == 200
    assert maps.json()["method"] == "saliency"
    assert (tmp_path / "maps" / "index.json").exists()

    table = client.post("/report", json={"runs_dir": str(tmp_path / "served"), "out_dir": str(tmp_path / "r")})
    assert table.status_code == 200
    assert table.json()["runs"] == 1
    assert "| served |" in table.json()["table"]
