"""Small differentiable classifiers: forward, losses, analytic gradients, SGD.

Two architectures: a plain softmax over the inputs (features are the inputs
themselves) and a one-hidden-layer rectifier net (features are the hidden
activations).  All math is float64; checkpoints store float32 parameter arrays
for interchange plus an optional exact float64 trainer-state trailer so that a
resumed run reproduces an uninterrupted one bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .rng import STREAM_INIT, child_rng

ARCH_LINEAR = "linear_softmax"
ARCH_HIDDEN = "one_hidden"
ARCHITECTURES = (ARCH_LINEAR, ARCH_HIDDEN)

_LOG_FLOOR = 1e-12

_CKPT_MAGIC = b"SMPM"
_CKPT_VERSION = 1
_CKPT_FLAG_STATE = 1 << 0
_ARCH_CODES = {ARCH_LINEAR: 0, ARCH_HIDDEN: 1}
_ARCH_NAMES = {v: k for k, v in _ARCH_CODES.items()}


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


class ClassifierModel:
    """Softmax classifier with parameters held in a name -> float64 array dict."""

    def __init__(self, architecture: str, d_in: int, num_classes: int, hidden: int = 0,
                 params: Optional[dict[str, np.ndarray]] = None):
        if architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {architecture!r}")
        if architecture == ARCH_HIDDEN and hidden < 1:
            raise ConfigError("one_hidden requires hidden >= 1")
        self.architecture = architecture
        self.d_in = int(d_in)
        self.num_classes = int(num_classes)
        self.hidden = int(hidden) if architecture == ARCH_HIDDEN else 0
        if params is None:
            params = {name: np.zeros(shape) for name, shape in self._shapes().items()}
        self.params = {name: np.asarray(arr, dtype=np.float64) for name, arr in params.items()}
        for name, shape in self._shapes().items():
            if name not in self.params or self.params[name].shape != shape:
                raise ConfigError(f"parameter {name} must have shape {shape}")

    def _shapes(self) -> dict[str, tuple]:
        if self.architecture == ARCH_LINEAR:
            return {"W": (self.num_classes, self.d_in), "b": (self.num_classes,)}
        return {
            "W1": (self.hidden, self.d_in),
            "b1": (self.hidden,),
            "W2": (self.num_classes, self.hidden),
            "b2": (self.num_classes,),
        }

    def param_names(self) -> tuple[str, ...]:
        return tuple(self._shapes().keys())

    @property
    def feature_dim(self) -> int:
        return self.d_in if self.architecture == ARCH_LINEAR else self.hidden

    @classmethod
    def create(cls, architecture: str, d_in: int, num_classes: int, hidden: int = 0,
               seed: int = 0) -> "ClassifierModel":
        """Seeded init: Glorot-uniform weights, zero biases."""
        model = cls(architecture, d_in, num_classes, hidden)
        rng = child_rng(seed, STREAM_INIT)
        if architecture == ARCH_LINEAR:
            model.params["W"] = _glorot(rng, num_classes, d_in)
        else:
            model.params["W1"] = _glorot(rng, hidden, d_in)
            model.params["W2"] = _glorot(rng, num_classes, hidden)
        return model

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"input batch must be (n, {self.d_in}); got {x.shape}")
        return x

    def _forward_cache(self, x: np.ndarray) -> dict[str, np.ndarray]:
        x = self._check_input(x)
        if self.architecture == ARCH_LINEAR:
            logits = x @ self.params["W"].T + self.params["b"]
            feats = x
            cache = {"x": x, "feats": feats, "logits": logits}
        else:
            pre = x @ self.params["W1"].T + self.params["b1"]
            feats = np.maximum(pre, 0.0)
            logits = feats @ self.params["W2"].T + self.params["b2"]
            cache = {"x": x, "pre": pre, "feats": feats, "logits": logits}
        if not np.isfinite(logits).all():
            raise ValueError("non-finite activations")
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        cache["probs"] = e / e.sum(axis=1, keepdims=True)
        return cache

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(probabilities n x K, features n x d_G)."""
        cache = self._forward_cache(x)
        return cache["probs"], cache["feats"]

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0].argmax(axis=1)

    def loss_and_grads(
        self,
        x: np.ndarray,
        y: np.ndarray,
        y_hat: Optional[np.ndarray],
        alpha: float,
    ) -> tuple[dict[str, np.ndarray], float, Optional[float]]:
        """Gradients of (1-alpha)*CE(., y) + alpha*CE(., y_hat) plus both branch losses."""
        _check_alpha(alpha)
        if y_hat is None and alpha != 0.0:
            raise ValueError("alpha > 0 requires corrected labels")
        cache = self._forward_cache(x)
        probs = cache["probs"]
        n = probs.shape[0]
        ce_noisy = cross_entropy(probs, y)
        ce_corr = None if y_hat is None else cross_entropy(probs, y_hat)
        target = np.zeros_like(probs)
        target[np.arange(n), _check_labels(y, probs.shape[1])] += 1.0 - alpha
        if y_hat is not None:
            target[np.arange(n), _check_labels(y_hat, probs.shape[1])] += alpha
        dlogits = (probs - target) / n
        grads: dict[str, np.ndarray] = {}
        if self.architecture == ARCH_LINEAR:
            grads["W"] = dlogits.T @ cache["x"]
            grads["b"] = dlogits.sum(axis=0)
        else:
            grads["W2"] = dlogits.T @ cache["feats"]
            grads["b2"] = dlogits.sum(axis=0)
            dfeats = dlogits @ self.params["W2"]
            dpre = dfeats * (cache["pre"] > 0.0)
            grads["W1"] = dpre.T @ cache["x"]
            grads["b1"] = dpre.sum(axis=0)
        return grads, ce_noisy, ce_corr

    def clone(self) -> "ClassifierModel":
        return ClassifierModel(
            self.architecture,
            self.d_in,
            self.num_classes,
            self.hidden,
            params={k: v.copy() for k, v in self.params.items()},
        )


def _check_labels(labels: np.ndarray, k: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    return y


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1]; got {alpha}")


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """-(1/n) sum log probs[i][y_i], with the log argument floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    y = _check_labels(labels, probs.shape[1])
    picked = probs[np.arange(probs.shape[0]), y]
    return float(-np.log(np.maximum(picked, _LOG_FLOOR)).mean())


def joint_loss(probs: np.ndarray, y: np.ndarray, y_hat: np.ndarray, alpha: float) -> float:
    """(1-alpha)*CE(probs, y) + alpha*CE(probs, y_hat)."""
    _check_alpha(alpha)
    return (1.0 - alpha) * cross_entropy(probs, y) + alpha * cross_entropy(probs, y_hat)


def backward(
    model: ClassifierModel,
    x: np.ndarray,
    y: np.ndarray,
    y_hat: Optional[np.ndarray],
    alpha: float,
) -> dict[str, np.ndarray]:
    return model.loss_and_grads(x, y, y_hat, alpha)[0]


@dataclass
class OptimConfig:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 5e-3
    lr_decay_factor: float = 10.0
    lr_decay_period: int = 5

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not self.lr_decay_factor >= 1.0:
            raise ConfigError("lr_decay_factor must be >= 1")
        if self.lr_decay_period < 1:
            raise ConfigError("lr_decay_period must be >= 1")

    def lr_at_epoch(self, epoch: int) -> float:
        return self.learning_rate / self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_period)


@dataclass
class OptimState:
    config: OptimConfig
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: ClassifierModel, config: OptimConfig) -> "OptimState":
        config.validate()
        return cls(
            config=config,
            velocities={name: np.zeros_like(model.params[name]) for name in model.param_names()},
        )


def sgd_step(model: ClassifierModel, grads: dict[str, np.ndarray], opt: OptimState,
             lr: Optional[float] = None) -> None:
    """v <- momentum*v + grad + weight_decay*theta; theta <- theta - lr*v."""
    step = opt.config.learning_rate if lr is None else lr
    for name in model.param_names():
        if grads[name].shape != model.params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        v = opt.velocities[name]
        v *= opt.config.momentum
        v += grads[name] + opt.config.weight_decay * model.params[name]
        model.params[name] -= step * v


@dataclass
class TrainerState:
    """Exact continuation state stored alongside the float32 checkpoint arrays."""

    epoch: int
    velocities: dict[str, np.ndarray]
    master_seed: int
    config_digest: str  # 64 hex chars


def save_checkpoint(model: ClassifierModel, path: str, state: Optional[TrainerState] = None) -> None:
    flags = _CKPT_FLAG_STATE if state is not None else 0
    header = struct.pack(
        "<4sIIIIII",
        _CKPT_MAGIC,
        _CKPT_VERSION,
        _ARCH_CODES[model.architecture],
        model.d_in,
        model.num_classes,
        model.hidden,
        flags,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for name in model.param_names():
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())
        if state is not None:
            for name in model.param_names():
                fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
            for name in model.param_names():
                fh.write(np.ascontiguousarray(state.velocities[name], dtype="<f8").tobytes())
            digest = state.config_digest.encode("ascii")
            if len(digest) != 64:
                raise ValueError("config digest must be 64 hex chars")
            fh.write(struct.pack("<IQ", state.epoch, state.master_seed & (2**64 - 1)))
            fh.write(digest)


def load_checkpoint(path: str, require_state: bool = False) -> tuple[ClassifierModel, Optional[TrainerState]]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    head_size = struct.calcsize("<4sIIIIII")
    if len(raw) < head_size:
        raise DataError(f"truncated checkpoint: {path}")
    magic, version, arch_code, d_in, k, hidden, flags = struct.unpack_from("<4sIIIIII", raw)
    if magic != _CKPT_MAGIC:
        raise DataError(f"bad magic in {path}: expected {_CKPT_MAGIC!r}, got {magic!r}")
    if version != _CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    if arch_code not in _ARCH_NAMES:
        raise DataError(f"unknown architecture code {arch_code}")
    arch = _ARCH_NAMES[arch_code]
    probe = ClassifierModel(arch, d_in, k, hidden)
    shapes = probe._shapes()
    n_params = sum(int(np.prod(shape)) for shape in shapes.values())
    expected = head_size + n_params * 4
    has_state = bool(flags & _CKPT_FLAG_STATE)
    if has_state:
        expected += 2 * n_params * 8 + struct.calcsize("<IQ") + 64
    if len(raw) != expected:
        raise DataError(f"truncated checkpoint: {path} ({len(raw)} bytes, expected {expected})")
    if require_state and not has_state:
        raise DataError(f"checkpoint {path} carries no trainer state; cannot resume from it")

    off = head_size

    def read_arrays(dtype: str, itemsize: int) -> dict[str, np.ndarray]:
        nonlocal off
        arrays = {}
        for name, shape in shapes.items():
            count = int(np.prod(shape))
            arrays[name] = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(shape).copy()
            off += count * itemsize
        return arrays

    params32 = read_arrays("<f4", 4)
    state = None
    if has_state:
        params64 = read_arrays("<f8", 8)
        velocities = read_arrays("<f8", 8)
        epoch, master_seed = struct.unpack_from("<IQ", raw, off)
        off += struct.calcsize("<IQ")
        digest = raw[off : off + 64].decode("ascii")
        state = TrainerState(
            epoch=epoch, velocities=velocities, master_seed=master_seed, config_digest=digest
        )
        params = params64
    else:
        params = {name: arr.astype(np.float64) for name, arr in params32.items()}
    model = ClassifierModel(arch, d_in, k, hidden, params=params)
    return model, state
