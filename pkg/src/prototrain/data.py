"""Labeled feature datasets: synthetic generation, label corruption, sampling, persistence.

The on-disk binary format ("SMPD") stores features as little-endian float32 and
labels as int32, so in-memory arrays use the same dtypes to make the roundtrip
bit-exact.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .rng import STREAM_SAMPLE, STREAM_SPLIT, STREAM_VERIFY, child_rng

_MAGIC = b"SMPD"
_VERSION = 1
_FLAG_TRUE_LABELS = 1 << 0
_FLAG_VERIFIED = 1 << 1

NOISE_UNIFORM = "uniform"
NOISE_TRANSITION = "transition"
NOISE_FEATURE_DEPENDENT = "feature_dependent"
NOISE_KINDS = (NOISE_UNIFORM, NOISE_TRANSITION, NOISE_FEATURE_DEPENDENT)


@dataclass
class NoisyDataset:
    """Feature matrix plus noisy labels, with optional ground truth and verification."""

    features: np.ndarray               # (N, d) float32
    noisy_labels: np.ndarray           # (N,) int32
    num_classes: int
    true_labels: Optional[np.ndarray] = None      # (N,) int32
    verified_mask: Optional[np.ndarray] = None    # (N,) bool

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d array")
        self.noisy_labels = np.ascontiguousarray(self.noisy_labels, dtype=np.int32)
        if self.true_labels is not None:
            self.true_labels = np.ascontiguousarray(self.true_labels, dtype=np.int32)
        if self.verified_mask is not None:
            self.verified_mask = np.ascontiguousarray(self.verified_mask, dtype=bool)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        n = self.n_samples
        if self.num_classes < 1:
            raise DataError("num_classes must be >= 1")
        if not np.isfinite(self.features).all():
            raise DataError("features contain non-finite values")
        for name, labels in (("noisy", self.noisy_labels), ("true", self.true_labels)):
            if labels is None:
                continue
            if labels.shape != (n,):
                raise DataError(f"{name} labels have shape {labels.shape}, expected ({n},)")
            if n and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise DataError(f"{name} label out of range [0, {self.num_classes})")
        if self.verified_mask is not None:
            if self.verified_mask.shape != (n,):
                raise DataError("verified mask length mismatch")
            if self.true_labels is not None:
                bad = self.verified_mask & (self.noisy_labels != self.true_labels)
                if bad.any():
                    raise DataError("verified sample whose noisy label disagrees with the true label")

    def subset(self, indices: np.ndarray) -> "NoisyDataset":
        idx = np.asarray(indices)
        return NoisyDataset(
            features=self.features[idx],
            noisy_labels=self.noisy_labels[idx],
            num_classes=self.num_classes,
            true_labels=None if self.true_labels is None else self.true_labels[idx],
            verified_mask=None if self.verified_mask is None else self.verified_mask[idx],
        )


@dataclass
class SyntheticSpec:
    """Geometry of a synthetic multi-subcluster classification dataset."""

    num_classes: int
    subclusters_per_class: int
    dim: int
    samples_per_class: int
    subcluster_spread: float
    center_separation: float
    seed: int

    def validate(self) -> None:
        for name in ("num_classes", "subclusters_per_class", "dim", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.subcluster_spread > 0:
            raise ConfigError("subcluster_spread must be > 0")
        if not self.center_separation > 0:
            raise ConfigError("center_separation must be > 0")


@dataclass
class NoiseModel:
    """Label corruption: uniform flips, a transition matrix, or feature-dependent flips."""

    kind: str
    rate: float = 0.0
    transition: Optional[np.ndarray] = None
    seed: int = 0

    def validate(self, num_classes: Optional[int] = None) -> None:
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind in (NOISE_UNIFORM, NOISE_FEATURE_DEPENDENT):
            if not 0.0 <= self.rate <= 1.0:
                raise ConfigError("noise rate must be in [0, 1]")
        if self.kind == NOISE_TRANSITION:
            if self.transition is None:
                raise ConfigError("transition noise requires a matrix")
            t = np.asarray(self.transition, dtype=np.float64)
            if t.ndim != 2 or t.shape[0] != t.shape[1]:
                raise ConfigError("transition matrix must be square")
            if num_classes is not None and t.shape[0] != num_classes:
                raise ConfigError(f"transition matrix is {t.shape[0]}x{t.shape[0]}, dataset has {num_classes} classes")
            if (t < 0).any():
                raise ConfigError("transition matrix entries must be >= 0")
            if np.abs(t.sum(axis=1) - 1.0).max() > 1e-9:
                raise ConfigError("transition matrix rows must sum to 1 within 1e-9")


def _draw_centers(rng: np.random.Generator, count: int, dim: int, separation: float) -> np.ndarray:
    """Directions on the sphere of radius `separation`, pairwise at least `separation` apart."""
    centers = np.zeros((count, dim))
    placed = 0
    attempts = 0
    while placed < count:
        attempts += 1
        if attempts > 1000 * count:
            raise ConfigError(
                f"could not place {count} centers with separation {separation} in {dim} dims"
            )
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            continue
        cand = v / norm * separation
        if placed == 0 or np.linalg.norm(centers[:placed] - cand, axis=1).min() >= separation:
            centers[placed] = cand
            placed += 1
    return centers


def generate_synthetic(spec: SyntheticSpec) -> NoisyDataset:
    """Draw a clean dataset; noisy labels start out equal to the true labels.

    Sample j of a class belongs to subcluster j mod subclusters_per_class
    (round-robin), so tests can reconstruct subcluster membership from the index.
    """
    spec.validate()
    rng = child_rng(spec.seed)
    k, nsub, d, spc = (
        spec.num_classes,
        spec.subclusters_per_class,
        spec.dim,
        spec.samples_per_class,
    )
    centers = _draw_centers(rng, k * nsub, d, spec.center_separation).reshape(k, nsub, d)
    n = k * spc
    feats = np.empty((n, d))
    sub_ids = np.arange(spc) % nsub
    for c in range(k):
        noise = rng.normal(0.0, spec.subcluster_spread, size=(spc, d))
        feats[c * spc : (c + 1) * spc] = centers[c, sub_ids] + noise
    true = np.repeat(np.arange(k, dtype=np.int32), spc)
    ds = NoisyDataset(
        features=feats.astype(np.float32),
        noisy_labels=true.copy(),
        num_classes=k,
        true_labels=true,
    )
    ds.validate()
    return ds


def inject_noise(ds: NoisyDataset, model: NoiseModel) -> NoisyDataset:
    """Corrupt noisy labels per the model; features and true labels are untouched.

    Any verified mask is dropped: verification asserts noisy == true, which the
    corruption invalidates.  Verification is re-applied afterwards if wanted.
    """
    if ds.true_labels is None:
        raise DataError("inject_noise requires true labels")
    model.validate(ds.num_classes)
    rng = child_rng(model.seed)
    true = ds.true_labels.astype(np.int64)
    n, k = ds.n_samples, ds.num_classes
    noisy = true.copy()
    if n:
        if model.kind == NOISE_UNIFORM:
            flips = rng.random(n) < model.rate
            dest = rng.integers(0, max(k - 1, 1), size=n)
            dest += dest >= true
            noisy[flips] = dest[flips] if k > 1 else true[flips]
        elif model.kind == NOISE_TRANSITION:
            t = np.asarray(model.transition, dtype=np.float64)
            cum = np.cumsum(t, axis=1)
            u = rng.random(n)
            noisy = (u[:, None] > cum[true]).sum(axis=1).astype(np.int64)
            noisy = np.minimum(noisy, k - 1)
        else:  # feature dependent
            feats = ds.features.astype(np.float64)
            centroids = np.stack([feats[true == c].mean(axis=0) for c in range(k)])
            dists = np.linalg.norm(feats[:, None, :] - centroids[None, :, :], axis=2)
            d_self = dists[np.arange(n), true]
            wrong = dists.copy()
            wrong[np.arange(n), true] = np.inf
            nearest_wrong = wrong.argmin(axis=1)
            d_other = wrong[np.arange(n), nearest_wrong]
            denom = d_self + d_other
            weight = np.where(denom > 0, d_self / np.where(denom > 0, denom, 1.0), 0.0)
            flips = rng.random(n) < model.rate * weight
            if k > 1:
                noisy[flips] = nearest_wrong[flips]
    out = NoisyDataset(
        features=ds.features.copy(),
        noisy_labels=noisy.astype(np.int32),
        num_classes=k,
        true_labels=ds.true_labels.copy(),
        verified_mask=None,
    )
    out.validate()
    return out


def achieved_noise_rate(ds: NoisyDataset) -> float:
    if ds.true_labels is None:
        raise DataError("noise rate needs true labels")
    if ds.n_samples == 0:
        return 0.0
    return float((ds.noisy_labels != ds.true_labels).mean())


def _sample_from_pool(pool: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    take = min(m, pool.size)
    return np.sort(rng.choice(pool, size=take, replace=False))


def sample_per_class(ds: NoisyDataset, m: int, c: int, seed: int) -> np.ndarray:
    """min(m, class size) distinct indices with noisy label c, uniform without replacement."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    pool = np.where(ds.noisy_labels == c)[0]
    if pool.size == 0:
        raise DataError(f"class {c} has no samples")
    return _sample_from_pool(pool, m, child_rng(seed, STREAM_SAMPLE, c))


def mark_verified(ds: NoisyDataset, fraction: float, seed: int) -> NoisyDataset:
    """Flag a random subset of correctly-labeled samples as human-verified."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError("verified fraction must be in [0, 1]")
    if ds.true_labels is None:
        raise DataError("verification needs true labels")
    mask = np.zeros(ds.n_samples, dtype=bool)
    candidates = np.where(ds.noisy_labels == ds.true_labels)[0]
    count = min(int(round(fraction * ds.n_samples)), candidates.size)
    if count:
        rng = child_rng(seed, STREAM_VERIFY)
        mask[rng.choice(candidates, size=count, replace=False)] = True
    return replace(ds, verified_mask=mask)


def split_dataset(ds: NoisyDataset, test_fraction: float, seed: int) -> tuple[NoisyDataset, NoisyDataset]:
    """Deterministic shuffled train/test split; index order inside each side is preserved."""
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError("test_fraction must be in [0, 1)")
    perm = child_rng(seed, STREAM_SPLIT).permutation(ds.n_samples)
    n_test = int(round(test_fraction * ds.n_samples))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return ds.subset(train_idx), ds.subset(test_idx)


def save(ds: NoisyDataset, path: str) -> None:
    ds.validate()
    flags = 0
    if ds.true_labels is not None:
        flags |= _FLAG_TRUE_LABELS
    if ds.verified_mask is not None:
        flags |= _FLAG_VERIFIED
    header = struct.pack("<4sIQIII", _MAGIC, _VERSION, ds.n_samples, ds.dim, ds.num_classes, flags)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ds.noisy_labels, dtype="<i4").tobytes())
        if ds.true_labels is not None:
            fh.write(np.ascontiguousarray(ds.true_labels, dtype="<i4").tobytes())
        if ds.verified_mask is not None:
            fh.write(np.ascontiguousarray(ds.verified_mask, dtype=np.uint8).tobytes())


def load(path: str) -> NoisyDataset:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise DataError(f"dataset not found: {path}") from None
    head_size = struct.calcsize("<4sIQIII")
    if len(raw) < head_size:
        raise DataError(f"truncated dataset file: {path}")
    magic, version, n, d, k, flags = struct.unpack_from("<4sIQIII", raw)
    if magic != _MAGIC:
        raise DataError(f"bad magic in {path}: expected {_MAGIC!r}, got {magic!r}")
    if version != _VERSION:
        raise DataError(f"unsupported dataset version {version}")
    expected = head_size + n * d * 4 + n * 4
    if flags & _FLAG_TRUE_LABELS:
        expected += n * 4
    if flags & _FLAG_VERIFIED:
        expected += n
    if len(raw) != expected:
        raise DataError(f"truncated dataset file: {path} ({len(raw)} bytes, expected {expected})")
    off = head_size
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d).copy()
    off += n * d * 4
    noisy = np.frombuffer(raw, dtype="<i4", count=n, offset=off).copy()
    off += n * 4
    true = None
    if flags & _FLAG_TRUE_LABELS:
        true = np.frombuffer(raw, dtype="<i4", count=n, offset=off).copy()
        off += n * 4
    verified = None
    if flags & _FLAG_VERIFIED:
        verified = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).astype(bool)
    ds = NoisyDataset(
        features=feats, noisy_labels=noisy, num_classes=k, true_labels=true, verified_mask=verified
    )
    ds.validate()
    return ds


def save_csv(ds: NoisyDataset, path: str) -> None:
    ds.validate()
    cols = [f"f{i}" for i in range(ds.dim)] + ["noisy_label"]
    if ds.true_labels is not None:
        cols.append("true_label")
    if ds.verified_mask is not None:
        cols.append("verified")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i in range(ds.n_samples):
            row = [repr(float(v)) for v in ds.features[i]]
            row.append(int(ds.noisy_labels[i]))
            if ds.true_labels is not None:
                row.append(int(ds.true_labels[i]))
            if ds.verified_mask is not None:
                row.append(int(ds.verified_mask[i]))
            writer.writerow(row)


def load_csv(path: str, num_classes: Optional[int] = None) -> NoisyDataset:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"empty CSV dataset: {path}") from None
            rows = list(reader)
    except FileNotFoundError:
        raise DataError(f"dataset not found: {path}") from None
    d = sum(1 for name in header if name.startswith("f") and name[1:].isdigit())
    if d == 0 or header[:d] != [f"f{i}" for i in range(d)] or len(header) < d + 1 or header[d] != "noisy_label":
        raise DataError(f"malformed CSV header in {path}")
    has_true = "true_label" in header[d:]
    has_verified = "verified" in header[d:]
    n = len(rows)
    feats = np.empty((n, d), dtype=np.float32)
    noisy = np.empty(n, dtype=np.int32)
    true = np.empty(n, dtype=np.int32) if has_true else None
    verified = np.empty(n, dtype=bool) if has_verified else None
    try:
        for i, row in enumerate(rows):
            feats[i] = [float(v) for v in row[:d]]
            noisy[i] = int(row[d])
            col = d + 1
            if has_true:
                true[i] = int(row[col])
                col += 1
            if has_verified:
                verified[i] = bool(int(row[col]))
    except (ValueError, IndexError) as exc:
        raise DataError(f"malformed CSV row in {path}: {exc}") from None
    if num_classes is None:
        labels = [noisy] + ([true] if true is not None else [])
        num_classes = int(max((arr.max() for arr in labels if arr.size), default=0)) + 1 if n else 1
    ds = NoisyDataset(
        features=feats, noisy_labels=noisy, num_classes=num_classes, true_labels=true, verified_mask=verified
    )
    ds.validate()
    return ds
