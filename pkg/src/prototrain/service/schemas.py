"""Pydantic request/response models; each request converts to core dataclasses."""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..data import NoiseModel, SyntheticSpec
from ..evalreport import SweepSpec
from ..model import OptimConfig
from ..prototypes import SelectorConfig
from ..selftrain import ModelSpec, TrainConfig


class SyntheticSpecModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(ge=1)
    subclusters_per_class: int = Field(ge=1)
    dim: int = Field(ge=1)
    samples_per_class: int = Field(ge=1)
    subcluster_spread: float = Field(gt=0)
    center_separation: float = Field(gt=0)
    seed: int

    def to_core(self) -> SyntheticSpec:
        return SyntheticSpec(**self.model_dump())


class NoiseModelModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["uniform", "transition", "feature_dependent"]
    rate: float = Field(default=0.0, ge=0.0, le=1.0)
    matrix: Optional[list[list[float]]] = None
    seed: int = 0

    def to_core(self) -> NoiseModel:
        transition = None if self.matrix is None else np.asarray(self.matrix, dtype=np.float64)
        return NoiseModel(kind=self.kind, rate=self.rate, transition=transition, seed=self.seed)


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    synthetic: SyntheticSpecModel
    noise: Optional[NoiseModelModel] = None
    verified_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    out_path: str


class GenerateResponse(BaseModel):
    path: str
    n_samples: int
    num_classes: int
    dim: int
    noise_rate: float


class SelectorConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    m: int = Field(ge=1)
    p: int = Field(ge=1)
    sc_quantile: float = Field(default=0.6, gt=0.0, lt=1.0)
    eta_threshold: float = 0.95
    kind: Literal["cosine_density_peak", "euclidean_density_peak", "kmeans_plus_plus"] = (
        "cosine_density_peak"
    )
    seed: int = 0

    def to_core(self) -> SelectorConfig:
        return SelectorConfig(**self.model_dump())


class OptimConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(gt=0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=5e-3, ge=0.0)
    lr_decay_factor: float = Field(default=10.0, ge=1.0)
    lr_decay_period: int = Field(default=5, ge=1)

    def to_core(self) -> OptimConfig:
        return OptimConfig(**self.model_dump())


class ModelSpecModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    architecture: Literal["linear_softmax", "one_hidden"] = "one_hidden"
    hidden_units: int = Field(default=32, ge=1)

    def to_core(self) -> ModelSpec:
        return ModelSpec(**self.model_dump())


class TrainConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_epochs: int = Field(ge=1)
    start_epoch: int = Field(ge=1)
    alpha: float = Field(ge=0.0, le=1.0)
    batch_size: int = Field(ge=1)
    seed: int
    selector: SelectorConfigModel
    optimizer: OptimConfigModel
    model: ModelSpecModel = ModelSpecModel()
    restrict_to_verified: bool = False
    test_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    vote: Literal["average", "max"] = "average"
    checkpoint_every: int = Field(default=0, ge=0)

    def to_core(self, checkpoint_dir: Optional[str] = None) -> TrainConfig:
        return TrainConfig(
            num_epochs=self.num_epochs,
            start_epoch=self.start_epoch,
            alpha=self.alpha,
            batch_size=self.batch_size,
            seed=self.seed,
            selector=self.selector.to_core(),
            optimizer=self.optimizer.to_core(),
            model=self.model.to_core(),
            restrict_to_verified=self.restrict_to_verified,
            test_fraction=self.test_fraction,
            vote=self.vote,
            checkpoint_every=self.checkpoint_every,
            checkpoint_dir=checkpoint_dir,
        )


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: str
    out_dir: str
    train: TrainConfigModel


class TrainResponse(BaseModel):
    out_dir: str
    epochs: int
    final_test_accuracy: float
    final_train_accuracy: float
    noisy_baseline: Optional[float]
    initial_correction_accuracy: Optional[float]
    final_correction_accuracy: Optional[float]
    notes: list[str]
    artifacts: dict[str, str]
    validated: bool


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: str
    out_dir: str
    axis: Literal["prototype_count", "alpha", "sample_count", "selector"]
    values: list = Field(min_length=1)
    repeats: int = Field(default=1, ge=1)
    train: TrainConfigModel
    threads: int = Field(default=1, ge=1)

    def to_core(self) -> SweepSpec:
        return SweepSpec(
            axis=self.axis, values=list(self.values), repeats=self.repeats, base=self.train.to_core()
        )


class SweepAggregateModel(BaseModel):
    value: object
    count: int
    mean_test_acc: Optional[float]
    std_test_acc: Optional[float]
    mean_corr_acc_initial: Optional[float]
    mean_corr_acc_final: Optional[float]


class SweepResponse(BaseModel):
    out_dir: str
    axis: str
    cells: int
    failed_cells: int
    errors: list[str]
    aggregates: list[SweepAggregateModel]
    artifacts: dict[str, str]
    validated: bool


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint: str
    dataset: str


class EvalResponse(BaseModel):
    n_samples: int
    accuracy_vs_noisy: float
    accuracy_vs_true: Optional[float]
    per_class_accuracy: Optional[list[Optional[float]]]


class ReportRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_dir: str


class ReportResponse(BaseModel):
    run_dir: str
    overall: dict
    per_class: Optional[list[dict]]
    epochs: list[dict]
    notes: list[str]
    config_digest: Optional[str]


class HealthResponse(BaseModel):
    status: str
    version: str
