"""Artifact-level operations behind the service endpoints: generate datasets,
run trainings and sweeps, evaluate checkpoints, and assemble reports.

Every run directory gets a manifest holding the effective config, its sha256
digest, the master seed, and the artifact paths, which is enough to reproduce
the run exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from typing import Optional

import numpy as np

from . import __version__
from .data import (
    NoiseModel,
    NoisyDataset,
    SyntheticSpec,
    achieved_noise_rate,
    generate_synthetic,
    inject_noise,
    load,
    load_csv,
    mark_verified,
    save,
    save_csv,
    split_dataset,
)
from .errors import DataError
from .evalreport import SweepSpec, run_sweep, write_sweep_csv, write_sweep_json
from .model import TrainerState, load_checkpoint, save_checkpoint
from .rng import STREAM_VERIFY, derive_seed
from .selftrain import TrainConfig, config_digest, train_on_dataset

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.smpm"
CORRECTED_INITIAL_FILE = "corrected_initial.csv"
CORRECTED_FINAL_FILE = "corrected_final.csv"
PROTOTYPES_FILE = "prototypes.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"
SWEEP_CSV_FILE = "sweep.csv"
SWEEP_JSON_FILE = "sweep.json"


def canonical_digest(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()


def load_dataset(path: str) -> NoisyDataset:
    if str(path).endswith(".csv"):
        return load_csv(path)
    return load(path)


def _save_dataset(ds: NoisyDataset, path: str) -> None:
    if str(path).endswith(".csv"):
        save_csv(ds, path)
    else:
        save(ds, path)


def generate_artifact(
    spec: SyntheticSpec,
    noise: Optional[NoiseModel],
    out_path: str,
    verified_fraction: float = 0.0,
) -> dict:
    ds = generate_synthetic(spec)
    if noise is not None:
        ds = inject_noise(ds, noise)
    if verified_fraction > 0.0:
        ds = mark_verified(ds, verified_fraction, derive_seed(spec.seed, STREAM_VERIFY))
    rate = achieved_noise_rate(ds)
    _save_dataset(ds, out_path)
    return {
        "path": str(out_path),
        "n_samples": ds.n_samples,
        "num_classes": ds.num_classes,
        "dim": ds.dim,
        "noise_rate": rate,
    }


def _write_jsonl_line(fh, record: dict) -> None:
    fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
    fh.write("\n")


def _write_corrected_csv(path: str, corrected, ds: NoisyDataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["index", "noisy", "corrected"]
        if ds.true_labels is not None:
            header.append("true")
        writer.writerow(header)
        for i in range(ds.n_samples):
            row = [i, int(ds.noisy_labels[i]), int(corrected.labels[i])]
            if ds.true_labels is not None:
                row.append(int(ds.true_labels[i]))
            writer.writerow(row)


def _write_prototypes_csv(path: str, protos) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "slot", "source_index", "rho", "eta"])
        for row in protos.csv_rows():
            writer.writerow(row)


def _write_manifest(out_dir: str, payload: dict, master_seed: int, artifacts: dict, notes: list[str]) -> str:
    manifest = {
        "tool_version": __version__,
        "master_seed": master_seed,
        "config": payload,
        "config_digest": canonical_digest(payload),
        "artifacts": artifacts,
        "notes": notes,
    }
    path = os.path.join(out_dir, MANIFEST_FILE)
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def train_artifact(cfg: TrainConfig, dataset_path: str, out_dir: str, payload: dict) -> dict:
    """Run a training and write metrics.jsonl, checkpoint, label dumps, summary, manifest."""
    ds = load_dataset(dataset_path)
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, METRICS_FILE)
    with open(metrics_path, "w") as metrics_fh:
        outcome = train_on_dataset(
            ds, cfg, on_epoch=lambda report: _write_jsonl_line(metrics_fh, report.jsonl_record())
        )
    result = outcome.result

    checkpoint_path = os.path.join(out_dir, CHECKPOINT_FILE)
    state = TrainerState(
        epoch=cfg.num_epochs,
        velocities=result.optimizer_state.velocities,
        master_seed=cfg.seed,
        config_digest=config_digest(cfg),
    )
    save_checkpoint(result.model, checkpoint_path, state)

    artifacts = {
        "dataset": str(dataset_path),
        "metrics": METRICS_FILE,
        "checkpoint": CHECKPOINT_FILE,
    }
    if result.corrected_initial is not None:
        _write_corrected_csv(
            os.path.join(out_dir, CORRECTED_INITIAL_FILE), result.corrected_initial, outcome.ds_train
        )
        _write_corrected_csv(
            os.path.join(out_dir, CORRECTED_FINAL_FILE), result.corrected_final, outcome.ds_train
        )
        artifacts["corrected_initial"] = CORRECTED_INITIAL_FILE
        artifacts["corrected_final"] = CORRECTED_FINAL_FILE
    if result.final_prototypes is not None:
        _write_prototypes_csv(os.path.join(out_dir, PROTOTYPES_FILE), result.final_prototypes)
        artifacts["prototypes"] = PROTOTYPES_FILE

    reports = result.reports
    corrected_accs = [r.corrected_label_accuracy for r in reports if r.corrected_label_accuracy is not None]
    summary = {
        "epochs": len(reports),
        "final_test_accuracy": reports[-1].test_accuracy,
        "final_train_accuracy": reports[-1].train_accuracy,
        "noisy_baseline": outcome.noisy_baseline,
        "initial_correction_accuracy": corrected_accs[0] if corrected_accs else None,
        "final_correction_accuracy": corrected_accs[-1] if corrected_accs else None,
        "notes": result.notes,
    }
    with open(os.path.join(out_dir, SUMMARY_FILE), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    artifacts["summary"] = SUMMARY_FILE

    _write_manifest(out_dir, payload, cfg.seed, artifacts, result.notes)
    _validate_run_dir(out_dir, expected_epochs=len(reports))
    return {**summary, "out_dir": str(out_dir), "artifacts": artifacts, "validated": True}


def _validate_run_dir(out_dir: str, expected_epochs: int) -> None:
    metrics_path = os.path.join(out_dir, METRICS_FILE)
    with open(metrics_path) as fh:
        lines = [line for line in fh if line.strip()]
    if len(lines) != expected_epochs:
        raise DataError(
            f"metrics file holds {len(lines)} records, expected {expected_epochs}"
        )
    load_checkpoint(os.path.join(out_dir, CHECKPOINT_FILE))
    if not os.path.exists(os.path.join(out_dir, MANIFEST_FILE)):
        raise DataError("manifest missing after run")


def sweep_artifact(spec: SweepSpec, dataset_path: str, out_dir: str, payload: dict, threads: int = 1) -> dict:
    ds = load_dataset(dataset_path)
    os.makedirs(out_dir, exist_ok=True)
    result = run_sweep(spec, ds, threads=threads)
    csv_path = os.path.join(out_dir, SWEEP_CSV_FILE)
    json_path = os.path.join(out_dir, SWEEP_JSON_FILE)
    write_sweep_csv(result, csv_path)
    write_sweep_json(result, json_path)
    artifacts = {"dataset": str(dataset_path), "sweep_csv": SWEEP_CSV_FILE, "sweep_json": SWEEP_JSON_FILE}
    _write_manifest(out_dir, payload, spec.base.seed, artifacts, [])
    errors = [c.error for c in result.cells if c.error is not None]
    return {
        "out_dir": str(out_dir),
        "axis": result.axis,
        "cells": len(result.cells),
        "failed_cells": len(errors),
        "errors": errors,
        "aggregates": [
            {
                "value": a.value,
                "count": a.count,
                "mean_test_acc": a.mean_test_accuracy,
                "std_test_acc": a.std_test_accuracy,
                "mean_corr_acc_initial": a.mean_correction_initial,
                "mean_corr_acc_final": a.mean_correction_final,
            }
            for a in result.aggregates
        ],
        "artifacts": artifacts,
        "validated": True,
    }


def evaluate_artifact(checkpoint_path: str, dataset_path: str) -> dict:
    """Accuracy of a checkpointed model on a dataset (vs true labels when present)."""
    model, _ = load_checkpoint(checkpoint_path)
    ds = load_dataset(dataset_path)
    if ds.dim != model.d_in or ds.num_classes != model.num_classes:
        raise DataError(
            f"checkpoint expects d={model.d_in}, K={model.num_classes}; "
            f"dataset has d={ds.dim}, K={ds.num_classes}"
        )
    preds = model.predict(ds.features.astype(np.float64))
    out = {
        "n_samples": ds.n_samples,
        "accuracy_vs_noisy": float((preds == ds.noisy_labels).mean()) if ds.n_samples else 0.0,
        "accuracy_vs_true": None,
        "per_class_accuracy": None,
    }
    if ds.true_labels is not None and ds.n_samples:
        out["accuracy_vs_true"] = float((preds == ds.true_labels).mean())
        per_class = []
        for c in range(ds.num_classes):
            mask = ds.true_labels == c
            per_class.append(float((preds[mask] == c).mean()) if mask.any() else None)
        out["per_class_accuracy"] = per_class
    return out


def _read_corrected_csv(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        labels = [int(row["corrected"]) for row in reader]
    return np.asarray(labels, dtype=np.int32)


def report_artifact(run_dir: str) -> dict:
    """Assemble report tables for a completed run directory."""
    manifest_path = os.path.join(run_dir, MANIFEST_FILE)
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest in {run_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    artifacts = manifest.get("artifacts", {})

    summary = {}
    summary_path = os.path.join(run_dir, artifacts.get("summary", SUMMARY_FILE))
    if os.path.exists(summary_path):
        with open(summary_path) as fh:
            summary = json.load(fh)

    epochs = []
    metrics_path = os.path.join(run_dir, artifacts.get("metrics", METRICS_FILE))
    if os.path.exists(metrics_path):
        with open(metrics_path) as fh:
            epochs = [json.loads(line) for line in fh if line.strip()]

    overall = {
        "noisy_baseline": summary.get("noisy_baseline"),
        "correction_initial": summary.get("initial_correction_accuracy"),
        "correction_final": summary.get("final_correction_accuracy"),
        "final_test_accuracy": summary.get("final_test_accuracy"),
    }

    per_class = None
    dataset_path = artifacts.get("dataset")
    has_corrections = "corrected_initial" in artifacts
    if dataset_path and has_corrections:
        ds = load_dataset(dataset_path)
        if ds.true_labels is not None:
            cfg_block = manifest.get("config", {}).get("train", {})
            test_fraction = cfg_block.get("test_fraction", 0.2)
            seed = manifest.get("master_seed", 0)
            ds_train = ds
            if test_fraction:
                ds_train, _ = split_dataset(ds, test_fraction, seed)
            initial = _read_corrected_csv(os.path.join(run_dir, artifacts["corrected_initial"]))
            final = _read_corrected_csv(os.path.join(run_dir, artifacts["corrected_final"]))
            if initial.shape[0] == ds_train.n_samples:
                rows = []
                true = ds_train.true_labels
                for c in range(ds_train.num_classes):
                    mask = true == c
                    rows.append(
                        {
                            "class": c,
                            "noisy_accuracy": float((ds_train.noisy_labels[mask] == c).mean()) if mask.any() else None,
                            "corrected_initial_accuracy": float((initial[mask] == c).mean()) if mask.any() else None,
                            "corrected_final_accuracy": float((final[mask] == c).mean()) if mask.any() else None,
                        }
                    )
                per_class = rows

    return {
        "run_dir": str(run_dir),
        "overall": overall,
        "per_class": per_class,
        "epochs": epochs,
        "notes": manifest.get("notes", []),
        "config_digest": manifest.get("config_digest"),
    }
