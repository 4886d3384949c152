import json

import pytest
from fastapi.testclient import TestClient

from prototrain.data import load
from prototrain.service import app

client = TestClient(app, raise_server_exceptions=False)


def gen_payload(out_path, n_per_class=60, rate=0.3, with_noise=True):
    payload = {
        "synthetic": {
            "num_classes": 3,
            "subclusters_per_class": 2,
            "dim": 8,
            "samples_per_class": n_per_class,
            "subcluster_spread": 1.5,
            "center_separation": 6.0,
            "seed": 5,
        },
        "out_path": str(out_path),
    }
    if with_noise:
        payload["noise"] = {"kind": "uniform", "rate": rate, "seed": 6}
    return payload


def train_payload(dataset, out_dir, **overrides):
    train = {
        "num_epochs": 6,
        "start_epoch": 4,
        "alpha": 0.5,
        "batch_size": 16,
        "seed": 42,
        "test_fraction": 0.25,
        "selector": {"m": 30, "p": 2},
        "model": {"architecture": "one_hidden", "hidden_units": 16},
        "optimizer": {"learning_rate": 0.02},
    }
    train.update(overrides)
    return {"dataset": str(dataset), "out_dir": str(out_dir), "train": train}


class TestHealth:
    def test_health(self):
        r = client.get("/health")
        assert r.status_code == 200
        assert r.json()["status"] == "ok"


class TestGenerate:
    def test_generate_writes_dataset(self, tmp_path):
        out = tmp_path / "ds.smpd"
        r = client.post("/datasets/generate", json=gen_payload(out))
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["n_samples"] == 180
        assert body["num_classes"] == 3
        assert 0.25 <= body["noise_rate"] <= 0.35
        ds = load(str(out))
        assert ds.n_samples == 180

    def test_zero_rate_reports_zero(self, tmp_path):
        out = tmp_path / "ds.smpd"
        payload = gen_payload(out, rate=0.0)
        r = client.post("/datasets/generate", json=payload)
        assert r.status_code == 200
        assert r.json()["noise_rate"] == 0.0

    def test_csv_extension_writes_csv(self, tmp_path):
        out = tmp_path / "ds.csv"
        r = client.post("/datasets/generate", json=gen_payload(out))
        assert r.status_code == 200
        assert open(out).readline().startswith("f0,")

    def test_missing_field_names_it(self, tmp_path):
        payload = gen_payload(tmp_path / "x.smpd")
        del payload["synthetic"]["dim"]
        r = client.post("/datasets/generate", json=payload)
        assert r.status_code == 422
        assert "dim" in json.dumps(r.json())

    def test_invalid_value_is_config_error(self, tmp_path):
        payload = gen_payload(tmp_path / "x.smpd")
        payload["synthetic"]["subcluster_spread"] = -1.0
        r = client.post("/datasets/generate", json=payload)
        assert r.status_code == 422

    def test_verified_fraction(self, tmp_path):
        out = tmp_path / "ds.smpd"
        payload = gen_payload(out)
        payload["verified_fraction"] = 0.2
        r = client.post("/datasets/generate", json=payload)
        assert r.status_code == 200
        ds = load(str(out))
        assert ds.verified_mask is not None and ds.verified_mask.sum() > 0


@pytest.fixture()
def dataset_path(tmp_path):
    out = tmp_path / "ds.smpd"
    r = client.post("/datasets/generate", json=gen_payload(out))
    assert r.status_code == 200
    return out


class TestTrain:
    def test_train_writes_artifacts(self, tmp_path, dataset_path):
        out_dir = tmp_path / "run"
        r = client.post("/runs/train", json=train_payload(dataset_path, out_dir))
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["validated"] is True
        assert body["epochs"] == 6
        assert body["final_correction_accuracy"] is not None
        for name in ("metrics.jsonl", "checkpoint.smpm", "manifest.json", "summary.json",
                     "corrected_initial.csv", "corrected_final.csv", "prototypes.csv"):
            assert (out_dir / name).exists(), name
        records = [json.loads(l) for l in (out_dir / "metrics.jsonl").read_text().splitlines()]
        assert len(records) == 6
        assert records[0]["corrected_loss"] is None
        assert records[-1]["corrected_loss"] is not None
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["master_seed"] == 42
        # digest is recomputable from the stored config
        from prototrain.runner import canonical_digest

        assert canonical_digest(manifest["config"]) == manifest["config_digest"]

    def test_missing_dataset_is_data_error(self, tmp_path):
        r = client.post("/runs/train", json=train_payload(tmp_path / "none.smpd", tmp_path / "run"))
        assert r.status_code == 404
        assert r.json()["detail"]["kind"] == "data"

    def test_invalid_train_config(self, tmp_path, dataset_path):
        payload = train_payload(dataset_path, tmp_path / "run", start_epoch=99)
        r = client.post("/runs/train", json=payload)
        assert r.status_code == 400
        assert r.json()["detail"]["kind"] == "config"

    def test_warmup_only_metrics(self, tmp_path, dataset_path):
        payload = train_payload(dataset_path, tmp_path / "run", start_epoch=7)
        r = client.post("/runs/train", json=payload)
        assert r.status_code == 200
        body = r.json()
        assert body["final_correction_accuracy"] is None
        records = [json.loads(l) for l in (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()]
        assert all(rec["corrected_loss"] is None for rec in records)

    def test_checkpoint_every_writes_midrun_checkpoints(self, tmp_path, dataset_path):
        out_dir = tmp_path / "run"
        payload = train_payload(dataset_path, out_dir, checkpoint_every=3)
        r = client.post("/runs/train", json=payload)
        assert r.status_code == 200, r.text
        assert (out_dir / "checkpoint_epoch0003.smpm").exists()
        assert (out_dir / "checkpoint_epoch0006.smpm").exists()


class TestEvalAndReport:
    def test_eval_checkpoint(self, tmp_path, dataset_path):
        out_dir = tmp_path / "run"
        assert client.post("/runs/train", json=train_payload(dataset_path, out_dir)).status_code == 200
        r = client.post(
            "/evaluations",
            json={"checkpoint": str(out_dir / "checkpoint.smpm"), "dataset": str(dataset_path)},
        )
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["n_samples"] == 180
        assert body["accuracy_vs_true"] is not None
        assert len(body["per_class_accuracy"]) == 3

    def test_report_tables(self, tmp_path, dataset_path):
        out_dir = tmp_path / "run"
        assert client.post("/runs/train", json=train_payload(dataset_path, out_dir)).status_code == 200
        r = client.post("/reports", json={"run_dir": str(out_dir)})
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["overall"]["noisy_baseline"] is not None
        assert body["per_class"] is not None and len(body["per_class"]) == 3
        assert len(body["epochs"]) == 6

    def test_report_warmup_only_marks_absent(self, tmp_path, dataset_path):
        out_dir = tmp_path / "run"
        payload = train_payload(dataset_path, out_dir, start_epoch=7)
        assert client.post("/runs/train", json=payload).status_code == 200
        r = client.post("/reports", json={"run_dir": str(out_dir)})
        assert r.status_code == 200
        body = r.json()
        assert body["overall"]["correction_initial"] is None
        assert body["per_class"] is None

    def test_report_missing_run_dir(self, tmp_path):
        r = client.post("/reports", json={"run_dir": str(tmp_path / "nope")})
        assert r.status_code == 404
        assert r.json()["detail"]["kind"] == "data"


class TestSweep:
    def test_single_cell_sweep(self, tmp_path, dataset_path):
        out_dir = tmp_path / "sweep"
        payload = {
            **train_payload(dataset_path, out_dir),
            "axis": "alpha",
            "values": [0.5],
            "repeats": 1,
            "threads": 1,
        }
        r = client.post("/sweeps", json=payload)
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["cells"] == 1 and body["failed_cells"] == 0
        rows = (out_dir / "sweep.csv").read_text().splitlines()
        assert len(rows) == 2
        assert (out_dir / "sweep.json").exists()
