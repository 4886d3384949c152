import json
from pathlib import Path

import pytest

from prototrain.data import NoiseModel, SyntheticSpec, generate_synthetic, inject_noise
from prototrain.model import OptimConfig
from prototrain.prototypes import SelectorConfig
from prototrain.selftrain import ModelSpec, TrainConfig

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def load_benchmark_configs():
    with open(CONFIG_DIR / "benchmark_gen.json") as fh:
        gen = json.load(fh)
    with open(CONFIG_DIR / "benchmark_train.json") as fh:
        train = json.load(fh)
    return gen, train


def train_config_from_json(block: dict, **overrides) -> TrainConfig:
    cfg = TrainConfig(
        num_epochs=block["num_epochs"],
        start_epoch=block["start_epoch"],
        alpha=block["alpha"],
        batch_size=block["batch_size"],
        seed=block["seed"],
        selector=SelectorConfig(**block["selector"]),
        optimizer=OptimConfig(**block["optimizer"]),
        model=ModelSpec(**block["model"]),
        test_fraction=block.get("test_fraction", 0.2),
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture(scope="session")
def benchmark_dataset():
    """The pinned noisy benchmark dataset used across integration tests."""
    gen, _ = load_benchmark_configs()
    spec = SyntheticSpec(**gen["synthetic"])
    noise = NoiseModel(kind=gen["noise"]["kind"], rate=gen["noise"]["rate"], seed=gen["noise"]["seed"])
    return inject_noise(generate_synthetic(spec), noise)


@pytest.fixture(scope="session")
def benchmark_train_config():
    _, train = load_benchmark_configs()
    return train_config_from_json(train["train"])


@pytest.fixture()
def small_dataset():
    """A quick 3-class dataset for loop-level tests."""
    spec = SyntheticSpec(
        num_classes=3,
        subclusters_per_class=2,
        dim=8,
        samples_per_class=120,
        subcluster_spread=1.5,
        center_separation=6.0,
        seed=5,
    )
    return inject_noise(generate_synthetic(spec), NoiseModel(kind="uniform", rate=0.3, seed=6))


@pytest.fixture()
def small_train_config():
    return TrainConfig(
        num_epochs=8,
        start_epoch=4,
        alpha=0.5,
        batch_size=16,
        seed=42,
        selector=SelectorConfig(m=40, p=2),
        optimizer=OptimConfig(learning_rate=0.02, lr_decay_period=5),
        model=ModelSpec(architecture="one_hidden", hidden_units=16),
        test_fraction=0.25,
    )
