"""HTTP service endpoints over the in-process test client."""

import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from rnncast import __version__
from rnncast.service.app import create_app
from rnncast.timeseries import gen_mso

_SPACE = {
    "nh": ["set", [60]],
    "rho": ["set", [0.9]],
    "rc": ["set", [0.3]],
    "xi_var": ["set", [0.0]],
    "omega_i": ["set", [0.5]],
    "omega_o": ["set", [0.5]],
    "omega_f": ["set", [0.1]],
    "lambda2": ["set", [0.02]],
}

_FIXED = {"architecture": "esn", "nh": 60, "rho": 0.9, "rc": 0.3,
          "xi_var": 0.0, "omega_i": 0.5, "omega_o": 0.5, "omega_f": 0.1,
          "lambda2": 0.02}

_SEARCH_REQ = {"task": "narma", "architecture": "esn", "n": 600,
               "budget": 2, "master_seed": 5, "space": _SPACE}


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


class TestBasics:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "version": __version__}

    def test_presets_inventory(self, client):
        blob = client.get("/presets").json()
        assert sorted(blob["architectures"]) == \
            ["ernn", "esn", "gru", "lstm", "narx"]
        assert len(blob["fixed_configs"]) == 30
        assert set(blob["search_spaces"]) == set(blob["architectures"])
        assert blob["fixed_configs"]["esn-mg"]["nh"] == 800


class TestGenerate:
    def test_mso_values(self, client):
        r = client.post("/series/generate", json={"task": "mso", "n": 50})
        assert r.status_code == 200
        values = np.array(r.json()["values"])
        assert values[0] == 0.0
        np.testing.assert_allclose(values, gen_mso(50), rtol=1e-15)
        assert "input" not in r.json()

    def test_narma_returns_drive(self, client):
        r = client.post("/series/generate",
                        json={"task": "narma", "n": 80, "seed": 3})
        blob = r.json()
        assert len(blob["values"]) == 80 and len(blob["input"]) == 80
        again = client.post("/series/generate",
                            json={"task": "narma", "n": 80, "seed": 3})
        assert again.json() == blob

    def test_validation(self, client):
        assert client.post("/series/generate",
                           json={"task": "mso", "n": 0}).status_code == 422
        assert client.post("/series/generate",
                           json={"task": "lorenz",
                                 "n": 10}).status_code == 422


class TestMetrics:
    def test_hand_example(self, client):
        r = client.post("/metrics/nrmse",
                        json={"predictions": [[1.0], [1.0]],
                              "targets": [[0.0], [2.0]]})
        assert r.json() == {"nrmse": 1.0, "psi": 0.0}

    def test_perfect_prediction(self, client):
        r = client.post("/metrics/nrmse",
                        json={"predictions": [[1.0], [2.0]],
                              "targets": [[1.0], [2.0]]})
        assert r.json()["nrmse"] == 0.0 and r.json()["psi"] == 1.0

    def test_constant_truth_is_client_error(self, client):
        r = client.post("/metrics/nrmse",
                        json={"predictions": [[1.0], [1.0]],
                              "targets": [[2.0], [2.0]]})
        assert r.status_code == 400


class TestSearch:
    def test_synchronous_search(self, client):
        r = client.post("/search", json=_SEARCH_REQ)
        assert r.status_code == 200
        blob = r.json()
        assert len(blob["trials"]) == 2
        assert blob["best_config"]["nh"] == 60
        assert np.isfinite(blob["best_valid_nrmse"])

    def test_deterministic_across_requests(self, client):
        a = client.post("/search", json=_SEARCH_REQ).json()
        b = client.post("/search", json=_SEARCH_REQ).json()
        strip = lambda rep: [(t["index"], t["config"], t["valid_nrmse"])
                             for t in rep["trials"]]
        assert strip(a) == strip(b)

    def test_space_architecture_mismatch(self, client):
        req = dict(_SEARCH_REQ, space=dict(_SPACE, tau_f=["set", [10]]))
        assert client.post("/search", json=req).status_code == 400

    def test_background_job_roundtrip(self, client):
        r = client.post("/jobs/search", json=_SEARCH_REQ)
        assert r.status_code == 202
        job_id = r.json()["job_id"]
        final = None
        for _ in range(200):
            s = client.get(f"/jobs/{job_id}").json()
            if s["status"] in ("done", "failed"):
                final = s
                break
            time.sleep(0.05)
        assert final is not None and final["status"] == "done"
        sync = client.post("/search", json=_SEARCH_REQ).json()
        assert final["result"]["best_valid_nrmse"] == \
            sync["best_valid_nrmse"]

    def test_unknown_job(self, client):
        assert client.get("/jobs/deadbeef").status_code == 404


class TestEval:
    REQ = {"task": "narma", "architecture": "esn", "n": 600,
           "restarts": 2, "master_seed": 11, "fixed": _FIXED}

    def test_report_shape(self, client):
        r = client.post("/eval", json=self.REQ)
        assert r.status_code == 200
        blob = r.json()
        assert blob["restarts"] == 2 and len(blob["per_restart"]) == 2
        assert blob["psi_best"] == 1.0 - blob["test_nrmse_best"]
        assert "predictions" not in blob

    def test_include_predictions(self, client):
        r = client.post("/eval",
                        json=dict(self.REQ, include_predictions=True))
        blob = r.json()
        assert len(blob["predictions"]) == len(blob["truth"])
        preds = np.array(blob["predictions"])
        truth = np.array(blob["truth"])
        num = np.mean((preds - truth) ** 2)
        den = np.mean((truth - truth.mean()) ** 2)
        assert np.sqrt(num / den) == pytest.approx(
            blob["test_nrmse_best"], rel=1e-12)

    def test_fixed_architecture_mismatch(self, client):
        req = dict(self.REQ, architecture="ernn")
        assert client.post("/eval", json=req).status_code == 400

    def test_unknown_architecture_rejected(self, client):
        req = dict(self.REQ, architecture="tcn")
        assert client.post("/eval", json=req).status_code == 422
