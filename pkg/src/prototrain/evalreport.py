"""Ablation sweeps over one config axis, plus per-class correction reports.

Each sweep cell is a fully independent training run.  The cell seed depends
only on (base seed, repeat index) so repeats are paired across values and the
per-cell results are invariant to the order of the values list.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .correction import CorrectedLabels
from .data import NoisyDataset
from .errors import ConfigError, DataError
from .selftrain import TrainConfig, train_on_dataset

AXIS_PROTOTYPES = "prototype_count"
AXIS_ALPHA = "alpha"
AXIS_SAMPLES = "sample_count"
AXIS_SELECTOR = "selector"
AXES = (AXIS_PROTOTYPES, AXIS_ALPHA, AXIS_SAMPLES, AXIS_SELECTOR)


@dataclass
class SweepSpec:
    axis: str
    values: list
    repeats: int
    base: TrainConfig

    def validate(self) -> None:
        if self.axis not in AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep values must be nonempty")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        self.base.validate()


@dataclass
class SweepCell:
    axis: str
    value: object
    seed: int
    test_accuracy: Optional[float] = None
    correction_initial: Optional[float] = None
    correction_final: Optional[float] = None
    error: Optional[str] = None


@dataclass
class SweepAggregate:
    value: object
    count: int
    mean_test_accuracy: Optional[float]
    std_test_accuracy: Optional[float]
    mean_correction_initial: Optional[float]
    mean_correction_final: Optional[float]


@dataclass
class SweepResult:
    axis: str
    repeats: int
    cells: list[SweepCell]
    aggregates: list[SweepAggregate] = field(default_factory=list)


def apply_axis(cfg: TrainConfig, axis: str, value) -> TrainConfig:
    if axis == AXIS_PROTOTYPES:
        return replace(cfg, selector=replace(cfg.selector, p=int(value)))
    if axis == AXIS_ALPHA:
        return replace(cfg, alpha=float(value))
    if axis == AXIS_SAMPLES:
        return replace(cfg, selector=replace(cfg.selector, m=int(value)))
    if axis == AXIS_SELECTOR:
        return replace(cfg, selector=replace(cfg.selector, kind=str(value)))
    raise ConfigError(f"unknown sweep axis {axis!r}")


def _run_cell(spec: SweepSpec, ds: NoisyDataset, value, repeat: int) -> SweepCell:
    seed = spec.base.seed + repeat
    cell = SweepCell(axis=spec.axis, value=value, seed=seed)
    try:
        cfg = replace(apply_axis(spec.base, spec.axis, value), seed=seed)
        outcome = train_on_dataset(ds, cfg)
        reports = outcome.result.reports
        cell.test_accuracy = reports[-1].test_accuracy
        corrected = [r.corrected_label_accuracy for r in reports if r.corrected_label_accuracy is not None]
        if corrected:
            cell.correction_initial = corrected[0]
            cell.correction_final = corrected[-1]
    except Exception as exc:
        cell.error = str(exc)
    return cell


def run_sweep(spec: SweepSpec, ds: NoisyDataset, threads: int = 1) -> SweepResult:
    """Train one run per (value, repeat); failures are recorded and skipped in aggregates."""
    spec.validate()
    jobs = [(value, r) for value in spec.values for r in range(spec.repeats)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(lambda job: _run_cell(spec, ds, *job), jobs))
    else:
        cells = [_run_cell(spec, ds, value, r) for value, r in jobs]
    aggregates = []
    for value in spec.values:
        ok = [c for c in cells if c.value == value and c.error is None]
        aggregates.append(_aggregate(value, ok))
    return SweepResult(axis=spec.axis, repeats=spec.repeats, cells=cells, aggregates=aggregates)


def _mean_std(values: list[Optional[float]]) -> tuple[Optional[float], Optional[float]]:
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    arr = np.asarray(present, dtype=np.float64)
    return float(arr.mean()), float(arr.std())  # population std


def _aggregate(value, cells: list[SweepCell]) -> SweepAggregate:
    mean_test, std_test = _mean_std([c.test_accuracy for c in cells])
    mean_init, _ = _mean_std([c.correction_initial for c in cells])
    mean_final, _ = _mean_std([c.correction_final for c in cells])
    return SweepAggregate(
        value=value,
        count=len(cells),
        mean_test_accuracy=mean_test,
        std_test_accuracy=std_test,
        mean_correction_initial=mean_init,
        mean_correction_final=mean_final,
    )


def write_sweep_csv(result: SweepResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "seed", "test_acc", "corr_acc_initial", "corr_acc_final"])
        for c in result.cells:
            if c.error is not None:
                continue
            writer.writerow(
                [
                    c.axis,
                    c.value,
                    c.seed,
                    repr(c.test_accuracy),
                    "" if c.correction_initial is None else repr(c.correction_initial),
                    "" if c.correction_final is None else repr(c.correction_final),
                ]
            )


def sweep_json_payload(result: SweepResult) -> dict:
    return {
        "axis": result.axis,
        "repeats": result.repeats,
        "cells": [
            {
                "value": c.value,
                "seed": c.seed,
                "test_acc": c.test_accuracy,
                "corr_acc_initial": c.correction_initial,
                "corr_acc_final": c.correction_final,
                "error": c.error,
            }
            for c in result.cells
        ],
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
    }


def write_sweep_json(result: SweepResult, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(sweep_json_payload(result), fh, sort_keys=True, indent=2)
        fh.write("\n")


@dataclass
class PerClassRow:
    class_id: int
    noisy_accuracy: float
    corrected_initial_accuracy: Optional[float]
    corrected_final_accuracy: Optional[float]


def per_class_report(
    initial: Optional[CorrectedLabels],
    final: Optional[CorrectedLabels],
    ds: NoisyDataset,
) -> list[PerClassRow]:
    """Per-true-class label accuracy: noisy baseline vs initial and final corrections."""
    if ds.true_labels is None:
        raise DataError("per-class report needs true labels")
    true = ds.true_labels
    rows = []
    for c in range(ds.num_classes):
        mask = true == c
        if not mask.any():
            rows.append(PerClassRow(c, 0.0, None, None))
            continue
        rows.append(
            PerClassRow(
                class_id=c,
                noisy_accuracy=float((ds.noisy_labels[mask] == c).mean()),
                corrected_initial_accuracy=(
                    None if initial is None else float((initial.labels[mask] == c).mean())
                ),
                corrected_final_accuracy=(
                    None if final is None else float((final.labels[mask] == c).mean())
                ),
            )
        )
    return rows
