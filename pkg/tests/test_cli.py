import json
import subprocess
import sys

import pytest

from prototrain.cli import main


def write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


def gen_config(tmp_path, rate=0.3):
    return write_json(
        tmp_path / "gen.json",
        {
            "synthetic": {
                "num_classes": 3,
                "subclusters_per_class": 2,
                "dim": 8,
                "samples_per_class": 60,
                "subcluster_spread": 1.5,
                "center_separation": 6.0,
                "seed": 5,
            },
            "noise": {"kind": "uniform", "rate": rate, "seed": 6},
        },
    )


def train_config(tmp_path, dataset, out_dir, **overrides):
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
    return write_json(
        tmp_path / "train.json",
        {"dataset": str(dataset), "out_dir": str(out_dir), "train": train},
    )


@pytest.fixture()
def dataset_path(tmp_path, capsys):
    cfg = gen_config(tmp_path)
    out = tmp_path / "ds.smpd"
    assert main(["gen-data", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    return out


class TestGenData:
    def test_writes_file_and_prints_stats(self, tmp_path, capsys):
        cfg = gen_config(tmp_path)
        out = tmp_path / "ds.smpd"
        assert main(["gen-data", "--config", cfg, "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert out.exists()
        assert "N=180" in printed and "K=3" in printed and "noise_rate=" in printed

    def test_zero_rate_prints_zero(self, tmp_path, capsys):
        cfg = gen_config(tmp_path, rate=0.0)
        out = tmp_path / "ds.smpd"
        assert main(["gen-data", "--config", cfg, "--out", str(out)]) == 0
        assert "noise_rate=0.0000" in capsys.readouterr().out

    def test_missing_field_exits_2_naming_field(self, tmp_path, capsys):
        payload = json.loads(open(gen_config(tmp_path)).read())
        del payload["synthetic"]["num_classes"]
        cfg = write_json(tmp_path / "bad.json", payload)
        code = main(["gen-data", "--config", cfg, "--out", str(tmp_path / "x.smpd")])
        assert code == 2
        assert "num_classes" in capsys.readouterr().err

    def test_config_file_missing_exits_2(self, tmp_path, capsys):
        code = main(["gen-data", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x.smpd")])
        assert code == 2

    def test_seed_override_changes_data(self, tmp_path, capsys):
        cfg = gen_config(tmp_path)
        a, b, c = tmp_path / "a.smpd", tmp_path / "b.smpd", tmp_path / "c.smpd"
        assert main(["gen-data", "--config", cfg, "--out", str(a)]) == 0
        assert main(["gen-data", "--config", cfg, "--out", str(b), "--seed", "123"]) == 0
        assert main(["gen-data", "--config", cfg, "--out", str(c), "--seed", "123"]) == 0
        assert a.read_bytes() != b.read_bytes()
        assert b.read_bytes() == c.read_bytes()


class TestTrain:
    def test_summary_line_and_artifacts(self, tmp_path, dataset_path, capsys):
        out_dir = tmp_path / "run"
        cfg = train_config(tmp_path, dataset_path, out_dir)
        assert main(["train", "--config", cfg]) == 0
        printed = capsys.readouterr().out
        assert "test_acc=" in printed and "corrected_acc=" in printed
        assert (out_dir / "metrics.jsonl").exists()

    def test_byte_identical_metrics_across_runs_and_threads(self, tmp_path, dataset_path, capsys):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        cfg = train_config(tmp_path, dataset_path, out1)
        assert main(["train", "--config", cfg, "--threads", "1"]) == 0
        assert main(["train", "--config", cfg, "--out", str(out2), "--threads", "8"]) == 0
        capsys.readouterr()
        assert (out1 / "metrics.jsonl").read_bytes() == (out2 / "metrics.jsonl").read_bytes()

    def test_warmup_only_jsonl(self, tmp_path, dataset_path, capsys):
        out_dir = tmp_path / "run"
        cfg = train_config(tmp_path, dataset_path, out_dir, start_epoch=7)
        assert main(["train", "--config", cfg]) == 0
        assert "corrected_acc=n/a" in capsys.readouterr().out
        records = [json.loads(l) for l in (out_dir / "metrics.jsonl").read_text().splitlines()]
        assert len(records) == 6
        assert all(r["corrected_loss"] is None for r in records)

    def test_missing_dataset_exits_3(self, tmp_path, capsys):
        cfg = train_config(tmp_path, tmp_path / "none.smpd", tmp_path / "run")
        assert main(["train", "--config", cfg]) == 3

    def test_bad_config_exits_2(self, tmp_path, dataset_path, capsys):
        cfg = train_config(tmp_path, dataset_path, tmp_path / "run", alpha=3.0)
        assert main(["train", "--config", cfg]) == 2


class TestSweepEvalReport:
    def test_single_cell_sweep_csv(self, tmp_path, dataset_path, capsys):
        out_dir = tmp_path / "sweep"
        payload = json.loads(open(train_config(tmp_path, dataset_path, out_dir)).read())
        payload.update({"axis": "alpha", "values": [0.5], "repeats": 1})
        cfg = write_json(tmp_path / "sweep.json", payload)
        assert main(["sweep", "--config", cfg]) == 0
        rows = (out_dir / "sweep.csv").read_text().splitlines()
        assert len(rows) == 2

    def test_eval_prints_accuracy(self, tmp_path, dataset_path, capsys):
        out_dir = tmp_path / "run"
        cfg = train_config(tmp_path, dataset_path, out_dir)
        assert main(["train", "--config", cfg]) == 0
        capsys.readouterr()
        code = main(
            ["eval", "--checkpoint", str(out_dir / "checkpoint.smpm"), "--dataset", str(dataset_path)]
        )
        assert code == 0
        assert "accuracy_vs_true=" in capsys.readouterr().out

    def test_report_renders_tables(self, tmp_path, dataset_path, capsys):
        out_dir = tmp_path / "run"
        cfg = train_config(tmp_path, dataset_path, out_dir)
        assert main(["train", "--config", cfg]) == 0
        capsys.readouterr()
        assert main(["report", "--run-dir", str(out_dir)]) == 0
        printed = capsys.readouterr().out
        assert "noisy baseline" in printed
        assert "per-class label accuracy:" in printed
        assert "epochs:" in printed

    def test_report_warmup_only_marks_absent(self, tmp_path, dataset_path, capsys):
        out_dir = tmp_path / "run"
        cfg = train_config(tmp_path, dataset_path, out_dir, start_epoch=7)
        assert main(["train", "--config", cfg]) == 0
        capsys.readouterr()
        assert main(["report", "--run-dir", str(out_dir)]) == 0
        printed = capsys.readouterr().out
        assert "corrected (initial)   absent" in printed

    def test_report_missing_dir_exits_3(self, tmp_path, capsys):
        assert main(["report", "--run-dir", str(tmp_path / "nope")]) == 3


class TestConsoleEntry:
    def test_module_invocation(self, tmp_path):
        cfg = gen_config(tmp_path)
        out = tmp_path / "ds.smpd"
        proc = subprocess.run(
            [sys.executable, "-m", "prototrain.cli", "gen-data", "--config", cfg, "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert out.exists()
