"""Iterative self-training: warmup on noisy labels, then per-epoch prototype
election, label correction, and joint-loss SGD.

Epoch structure after warmup: sample candidates per class with the current
model's features, elect prototypes, correct every training label, then run one
shuffled mini-batch pass optimizing the convex combination of the noisy-label
and corrected-label cross-entropies.  All randomness comes from named streams
derived from (master seed, epoch), so a run can be resumed mid-way or replayed
exactly.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .correction import VOTE_AVERAGE, VOTE_KINDS, CorrectedLabels, correct_labels
from .data import NoisyDataset, split_dataset
from .errors import ConfigError, DataError
from .model import (
    ClassifierModel,
    OptimConfig,
    OptimState,
    TrainerState,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .prototypes import PrototypeSet, SelectorConfig, build_prototype_set
from .rng import STREAM_SELECT, STREAM_SHUFFLE, child_rng, derive_seed


@dataclass
class ModelSpec:
    architecture: str = "one_hidden"
    hidden_units: int = 32


@dataclass
class TrainConfig:
    num_epochs: int
    start_epoch: int            # first label-correction epoch; num_epochs+1 = never
    alpha: float                # corrected-label weight after start_epoch
    batch_size: int
    seed: int
    selector: SelectorConfig
    optimizer: OptimConfig
    model: ModelSpec = field(default_factory=ModelSpec)
    restrict_to_verified: bool = False
    test_fraction: float = 0.2
    vote: str = VOTE_AVERAGE
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None

    def validate(self) -> None:
        if self.num_epochs < 1:
            raise ConfigError("num_epochs must be >= 1")
        if not 1 <= self.start_epoch <= self.num_epochs + 1:
            raise ConfigError("start_epoch must be in [1, num_epochs + 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must be in [0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in [0, 1)")
        if self.vote not in VOTE_KINDS:
            raise ConfigError(f"unknown vote kind {self.vote!r}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        self.selector.validate()
        self.optimizer.validate()
        if self.model.architecture == "one_hidden" and self.model.hidden_units < 1:
            raise ConfigError("hidden_units must be >= 1")


@dataclass
class EpochReport:
    epoch: int
    total_loss: float
    noisy_loss: float
    corrected_loss: Optional[float]
    train_accuracy: float
    test_accuracy: float
    corrected_label_accuracy: Optional[float]
    prototype_warnings: int
    duration_seconds: float

    def jsonl_record(self) -> dict:
        # duration is wall-clock and would break byte-identical metrics files
        return {
            "epoch": int(self.epoch),
            "total_loss": float(self.total_loss),
            "noisy_loss": float(self.noisy_loss),
            "corrected_loss": None if self.corrected_loss is None else float(self.corrected_loss),
            "train_accuracy": float(self.train_accuracy),
            "test_accuracy": float(self.test_accuracy),
            "corrected_label_accuracy": (
                None if self.corrected_label_accuracy is None else float(self.corrected_label_accuracy)
            ),
            "prototype_warnings": int(self.prototype_warnings),
        }


@dataclass
class RunResult:
    model: ClassifierModel
    optimizer_state: OptimState
    reports: list[EpochReport]
    corrected_initial: Optional[CorrectedLabels]
    corrected_final: Optional[CorrectedLabels]
    final_prototypes: Optional[PrototypeSet]
    notes: list[str] = field(default_factory=list)


def config_digest(cfg: TrainConfig) -> str:
    """sha256 over the canonical JSON form of the config."""
    payload = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _check_compat(ds_train: NoisyDataset, ds_test: NoisyDataset, model: ClassifierModel) -> None:
    if ds_train.dim != model.d_in or ds_train.num_classes != model.num_classes:
        raise DataError(
            f"model expects d={model.d_in}, K={model.num_classes}; "
            f"training set has d={ds_train.dim}, K={ds_train.num_classes}"
        )
    if ds_test.n_samples and (ds_test.dim != ds_train.dim or ds_test.num_classes != ds_train.num_classes):
        raise DataError("train and test sets must share d and K")


def _accuracy(model: ClassifierModel, features: np.ndarray, labels: np.ndarray) -> float:
    if features.shape[0] == 0:
        return 0.0
    return float((model.predict(features) == labels).mean())


def run(
    ds_train: NoisyDataset,
    ds_test: NoisyDataset,
    model: ClassifierModel,
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[EpochReport], None]] = None,
) -> RunResult:
    cfg.validate()
    _check_compat(ds_train, ds_test, model)
    opt = OptimState.for_model(model, cfg.optimizer)
    return _run_loop(model, opt, 1, cfg, ds_train, ds_test, notes=[], on_epoch=on_epoch)


def resume(
    checkpoint_path: str,
    cfg: TrainConfig,
    ds_train: NoisyDataset,
    ds_test: NoisyDataset,
    on_epoch: Optional[Callable[[EpochReport], None]] = None,
) -> RunResult:
    """Continue a checkpointed run; its remaining epochs match an uninterrupted run."""
    cfg.validate()
    model, state = load_checkpoint(checkpoint_path, require_state=True)
    spec = cfg.model
    if model.architecture != spec.architecture or (
        model.architecture == "one_hidden" and model.hidden != spec.hidden_units
    ):
        raise DataError("incompatible checkpoint: architecture differs from the config")
    _check_compat(ds_train, ds_test, model)
    if state.epoch >= cfg.num_epochs:
        raise ConfigError(
            f"checkpoint is at epoch {state.epoch}; config trains only {cfg.num_epochs} epochs"
        )
    notes = []
    if state.config_digest != config_digest(cfg):
        notes.append("resume: config digest differs from the checkpointed run (override recorded)")
    if state.master_seed != cfg.seed:
        notes.append("resume: master seed differs from the checkpointed run")
    opt = OptimState(config=cfg.optimizer, velocities=state.velocities)
    return _run_loop(model, opt, state.epoch + 1, cfg, ds_train, ds_test, notes=notes, on_epoch=on_epoch)


def _run_loop(
    model: ClassifierModel,
    opt: OptimState,
    first_epoch: int,
    cfg: TrainConfig,
    ds_train: NoisyDataset,
    ds_test: NoisyDataset,
    notes: list[str],
    on_epoch: Optional[Callable[[EpochReport], None]] = None,
) -> RunResult:
    x_train = ds_train.features.astype(np.float64)
    y_train = ds_train.noisy_labels.astype(np.int64)
    x_test = ds_test.features.astype(np.float64)
    test_labels = (
        ds_test.true_labels if ds_test.true_labels is not None else ds_test.noisy_labels
    )
    test_labels = np.asarray(test_labels, dtype=np.int64)
    n = ds_train.n_samples
    digest = config_digest(cfg)

    reports: list[EpochReport] = []
    corrected_initial: Optional[CorrectedLabels] = None
    corrected_final: Optional[CorrectedLabels] = None
    final_protos: Optional[PrototypeSet] = None

    for epoch in range(first_epoch, cfg.num_epochs + 1):
        t0 = time.perf_counter()
        lr = cfg.optimizer.lr_at_epoch(epoch)

        corrected_now: Optional[CorrectedLabels] = None
        warnings_count = 0
        if epoch >= cfg.start_epoch:
            sel = replace(cfg.selector, seed=derive_seed(cfg.seed, STREAM_SELECT, epoch))
            try:
                protos = build_prototype_set(ds_train, model.features, sel, cfg.restrict_to_verified)
                corrected_now = correct_labels(
                    ds_train, model.features, protos, source_epoch=epoch, vote=cfg.vote
                )
            except Exception as exc:
                exc.args = (f"epoch {epoch} (label correction): {exc}",)
                raise
            warnings_count = len(protos.warnings)
            final_protos = protos
            corrected_final = corrected_now
            if corrected_initial is None:
                corrected_initial = corrected_now

        alpha_eff = cfg.alpha if corrected_now is not None else 0.0
        y_hat = None if corrected_now is None else corrected_now.labels.astype(np.int64)

        perm = child_rng(cfg.seed, STREAM_SHUFFLE, epoch).permutation(n)
        noisy_sum = 0.0
        corr_sum = 0.0
        try:
            for start in range(0, n, cfg.batch_size):
                batch = perm[start : start + cfg.batch_size]
                grads, ce_noisy, ce_corr = model.loss_and_grads(
                    x_train[batch],
                    y_train[batch],
                    None if y_hat is None else y_hat[batch],
                    alpha_eff,
                )
                noisy_sum += ce_noisy * batch.size
                if ce_corr is not None:
                    corr_sum += ce_corr * batch.size
                sgd_step(model, grads, opt, lr)
        except Exception as exc:
            exc.args = (f"epoch {epoch} (training): {exc}",)
            raise

        noisy_loss = noisy_sum / n
        corrected_loss = corr_sum / n if y_hat is not None else None
        total_loss = (1.0 - alpha_eff) * noisy_loss + (
            alpha_eff * corrected_loss if corrected_loss is not None else 0.0
        )
        corr_acc = None
        if corrected_now is not None and ds_train.true_labels is not None:
            corr_acc = float((corrected_now.labels == ds_train.true_labels).mean())

        report = EpochReport(
            epoch=epoch,
            total_loss=float(total_loss),
            noisy_loss=float(noisy_loss),
            corrected_loss=corrected_loss,
            train_accuracy=_accuracy(model, x_train, y_train),
            test_accuracy=_accuracy(model, x_test, test_labels),
            corrected_label_accuracy=corr_acc,
            prototype_warnings=warnings_count,
            duration_seconds=time.perf_counter() - t0,
        )
        reports.append(report)
        if on_epoch is not None:
            on_epoch(report)

        if cfg.checkpoint_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            state = TrainerState(
                epoch=epoch,
                velocities={k: v.copy() for k, v in opt.velocities.items()},
                master_seed=cfg.seed,
                config_digest=digest,
            )
            save_checkpoint(model, f"{cfg.checkpoint_dir}/checkpoint_epoch{epoch:04d}.smpm", state)

    return RunResult(
        model=model,
        optimizer_state=opt,
        reports=reports,
        corrected_initial=corrected_initial,
        corrected_final=corrected_final,
        final_prototypes=final_protos,
        notes=notes,
    )


@dataclass
class TrainOutcome:
    result: RunResult
    ds_train: NoisyDataset
    ds_test: NoisyDataset
    noisy_baseline: Optional[float]


def train_on_dataset(
    ds: NoisyDataset,
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[EpochReport], None]] = None,
) -> TrainOutcome:
    """Split the dataset, build a seeded model, and run the loop."""
    cfg.validate()
    ds.validate()
    if cfg.test_fraction > 0.0:
        ds_train, ds_test = split_dataset(ds, cfg.test_fraction, cfg.seed)
    else:
        ds_train, ds_test = ds, ds
    if ds_train.n_samples == 0:
        raise DataError("training split is empty")
    hidden = cfg.model.hidden_units if cfg.model.architecture == "one_hidden" else 0
    model = ClassifierModel.create(
        cfg.model.architecture, ds.dim, ds.num_classes, hidden, seed=cfg.seed
    )
    result = run(ds_train, ds_test, model, cfg, on_epoch=on_epoch)
    baseline = None
    if ds_train.true_labels is not None:
        baseline = float((ds_train.noisy_labels == ds_train.true_labels).mean())
    return TrainOutcome(result=result, ds_train=ds_train, ds_test=ds_test, noisy_baseline=baseline)
