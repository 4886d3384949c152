"""Per-class prototype election from same-class feature samples.

A class's candidates are ranked by a count-based density: each sample's density
is the number of candidates more similar to it than a threshold taken at a
fixed quantile of all pairwise similarities, minus the number less similar.
Dense samples are likely correctly labeled.  A separation statistic then keeps
elected prototypes apart: a candidate is skipped when it is too similar to any
denser candidate, so the winners spread across the class's subclusters instead
of stacking up inside the densest one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import NoisyDataset, _sample_from_pool
from .errors import ConfigError, DataError
from .rng import STREAM_KMEANS, STREAM_SAMPLE, child_rng, derive_seed
from .similarity import (
    KIND_COSINE,
    SimilarityMatrix,
    cosine_matrix,
    negative_euclidean_matrix,
)

SELECTOR_COSINE = "cosine_density_peak"
SELECTOR_EUCLIDEAN = "euclidean_density_peak"
SELECTOR_KMEANS = "kmeans_plus_plus"
SELECTOR_KINDS = (SELECTOR_COSINE, SELECTOR_EUCLIDEAN, SELECTOR_KMEANS)

_ZERO_NORM_EPS = 1e-12


@dataclass
class DensityStats:
    rho: np.ndarray          # (m,) int64
    s_c: float
    eta: np.ndarray          # (m,) float64
    peak_index: int


@dataclass
class SelectorConfig:
    m: int                   # candidates sampled per class
    p: int                   # prototypes elected per class
    sc_quantile: float = 0.6
    eta_threshold: float = 0.95
    kind: str = SELECTOR_COSINE
    seed: int = 0

    def validate(self) -> None:
        if self.m < 1:
            raise ConfigError("selector m must be >= 1")
        if not 1 <= self.p <= self.m:
            raise ConfigError(f"selector p must be in [1, m]; got p={self.p}, m={self.m}")
        if not 0.0 < self.sc_quantile < 1.0:
            raise ConfigError("sc_quantile must be in (0, 1)")
        if not np.isfinite(self.eta_threshold):
            raise ConfigError("eta_threshold must be finite")
        if self.kind not in SELECTOR_KINDS:
            raise ConfigError(f"unknown selector kind {self.kind!r}")


@dataclass
class ClassPrototypes:
    class_id: int
    vectors: np.ndarray           # (p_c, d_G) float64
    source_indices: np.ndarray    # (p_c,) int64, indices into the owning dataset
    rho: np.ndarray               # (p_c,) float64 (NaN when not computed)
    eta: np.ndarray               # (p_c,) float64 (NaN when not computed)
    fill_warning: bool = False

    @property
    def count(self) -> int:
        return self.vectors.shape[0]


@dataclass
class PrototypeSet:
    classes: list[ClassPrototypes]
    selector: str
    p: int
    warnings: list[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def validate(self) -> None:
        for cp in self.classes:
            if not 1 <= cp.count <= self.p:
                raise ValueError(f"class {cp.class_id} holds {cp.count} prototypes, expected 1..{self.p}")
            if len(set(cp.source_indices.tolist())) != cp.count:
                raise ValueError(f"class {cp.class_id} has duplicate prototype sources")
            norms = np.linalg.norm(cp.vectors, axis=1)
            if (norms <= _ZERO_NORM_EPS).any():
                bad = int(np.where(norms <= _ZERO_NORM_EPS)[0][0])
                raise ValueError(f"zero-norm prototype (class {cp.class_id}, slot {bad})")

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All prototype vectors stacked, with a parallel class-id array."""
        vecs = np.concatenate([cp.vectors for cp in self.classes], axis=0)
        ids = np.concatenate(
            [np.full(cp.count, cp.class_id, dtype=np.int64) for cp in self.classes]
        )
        return vecs, ids

    def csv_rows(self) -> list[tuple]:
        rows = []
        for cp in self.classes:
            for slot in range(cp.count):
                rows.append(
                    (
                        cp.class_id,
                        slot,
                        int(cp.source_indices[slot]),
                        float(cp.rho[slot]),
                        float(cp.eta[slot]),
                    )
                )
        return rows


def compute_threshold(s: SimilarityMatrix | np.ndarray, sc_quantile: float = 0.6) -> float:
    """The k-th smallest of all m*m entries (diagonal included), k = ceil(q * m^2)."""
    entries = s.entries if isinstance(s, SimilarityMatrix) else np.asarray(s, dtype=np.float64)
    if entries.size == 0:
        raise ValueError("empty similarity matrix")
    if not 0.0 < sc_quantile < 1.0:
        raise ConfigError("sc_quantile must be in (0, 1)")
    flat = entries.ravel()
    k = math.ceil(sc_quantile * flat.size)
    return float(np.partition(flat, k - 1)[k - 1])


def compute_density(s: SimilarityMatrix | np.ndarray, s_c: float) -> np.ndarray:
    """rho_i = sum_j sign(S_ij - s_c) over all j including j = i; integer valued."""
    entries = s.entries if isinstance(s, SimilarityMatrix) else np.asarray(s, dtype=np.float64)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise ValueError("similarity matrix must be square")
    if not np.isfinite(entries).all():
        raise ValueError("similarity matrix contains non-finite entries")
    return np.sign(entries - s_c).sum(axis=1).astype(np.int64)


def _density_order(rho: np.ndarray) -> np.ndarray:
    """Strict total order: descending rho, ties broken by lower index."""
    m = rho.shape[0]
    return np.lexsort((np.arange(m), -np.asarray(rho)))


def compute_eta(s: SimilarityMatrix | np.ndarray, rho: np.ndarray) -> tuple[np.ndarray, int]:
    """Separation statistic per sample, plus the index of the unique density peak.

    The peak (first in the (rho, -index) order) gets its minimum off-diagonal
    similarity; every other sample gets its maximum similarity to any sample
    strictly above it in the order.
    """
    entries = s.entries if isinstance(s, SimilarityMatrix) else np.asarray(s, dtype=np.float64)
    m = entries.shape[0]
    if m < 2:
        raise ValueError("eta needs at least two samples")
    order = _density_order(np.asarray(rho))
    peak = int(order[0])
    pos = np.empty(m, dtype=np.int64)
    pos[order] = np.arange(m)
    ranked = entries[:, order]
    prefix_max = np.maximum.accumulate(ranked, axis=1)
    eta = np.empty(m, dtype=np.float64)
    above = pos > 0
    eta[above] = prefix_max[above, pos[above] - 1]
    off_diag = entries[peak].copy()
    off_diag[peak] = np.inf
    eta[peak] = off_diag.min()
    return eta, peak


def density_stats(features: np.ndarray, sc_quantile: float, kind: str) -> DensityStats:
    """Threshold, density, and separation for one class's candidate features."""
    if kind == SELECTOR_EUCLIDEAN:
        s = negative_euclidean_matrix(features)
    else:
        s = cosine_matrix(features)
    s_c = compute_threshold(s, sc_quantile)
    rho = compute_density(s, s_c)
    if s.size < 2:
        eta = np.full(s.size, np.nan)
        peak = 0
    else:
        eta, peak = compute_eta(s, rho)
    return DensityStats(rho=rho, s_c=s_c, eta=eta, peak_index=peak)


def _kmeans_plus_plus_indices(features: np.ndarray, p: int, rng: np.random.Generator) -> np.ndarray:
    """p distinct sample indices: k-means++ seeding, Lloyd to convergence, centers
    mapped back to their nearest not-yet-taken samples."""
    f = np.asarray(features, dtype=np.float64)
    m = f.shape[0]
    centers = np.empty((p, f.shape[1]))
    centers[0] = f[int(rng.integers(m))]
    closest = ((f - centers[0]) ** 2).sum(axis=1)
    for j in range(1, p):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(m))
        else:
            idx = int(rng.choice(m, p=closest / total))
        centers[j] = f[idx]
        np.minimum(closest, ((f - centers[j]) ** 2).sum(axis=1), out=closest)
    for _ in range(100):
        d2 = ((f[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(p):
            members = f[assign == j]
            if members.shape[0]:
                new_centers[j] = members.mean(axis=0)
        shift = np.linalg.norm(new_centers - centers, axis=1).max()
        centers = new_centers
        if shift < 1e-6:
            break
    taken: list[int] = []
    for j in range(p):
        dist = ((f - centers[j]) ** 2).sum(axis=1)
        dist[taken] = np.inf
        taken.append(int(dist.argmin()))
    return np.array(taken, dtype=np.int64)


def select_prototypes(features: np.ndarray, cfg: SelectorConfig) -> ClassPrototypes:
    """Elect cfg.p prototypes from one class's candidate features.

    Density-peak selectors walk candidates in (rho, -index) order accepting
    those with eta below the threshold; a shortfall is filled from the top of
    the order with `fill_warning` set.  The k-means++ selector clusters the
    candidates and takes the nearest real sample to each centroid.
    """
    cfg.validate()
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("feature matrix must be a nonempty 2-d array")
    m = f.shape[0]
    if cfg.p > m:
        raise ValueError(f"cannot elect {cfg.p} prototypes from {m} candidates")

    fill_warning = False
    if cfg.kind == SELECTOR_KMEANS:
        chosen = _kmeans_plus_plus_indices(f, cfg.p, child_rng(cfg.seed, STREAM_KMEANS))
        norms = np.linalg.norm(f, axis=1)
        if norms.min() > _ZERO_NORM_EPS and m >= 1:
            stats = density_stats(f, cfg.sc_quantile, SELECTOR_COSINE)
            rho, eta = stats.rho.astype(np.float64), stats.eta
        else:
            rho = eta = np.full(m, np.nan)
    else:
        stats = density_stats(f, cfg.sc_quantile, cfg.kind)
        rho, eta = stats.rho.astype(np.float64), stats.eta
        if m == 1:
            chosen = np.array([0], dtype=np.int64)
        else:
            order = _density_order(stats.rho)
            accepted = [int(i) for i in order if eta[i] < cfg.eta_threshold][: cfg.p]
            if len(accepted) < cfg.p:
                fill_warning = True
                for i in order:
                    if int(i) not in accepted:
                        accepted.append(int(i))
                    if len(accepted) == cfg.p:
                        break
            chosen = np.array(accepted, dtype=np.int64)

    out = ClassPrototypes(
        class_id=-1,
        vectors=f[chosen],
        source_indices=chosen,
        rho=rho[chosen],
        eta=eta[chosen],
        fill_warning=fill_warning,
    )
    return out


def build_prototype_set(
    ds: NoisyDataset,
    extract: Callable[[np.ndarray], np.ndarray],
    cfg: SelectorConfig,
    restrict_to_verified: bool = False,
) -> PrototypeSet:
    """Sample candidates per class, extract features, and elect prototypes.

    With `restrict_to_verified`, a class's candidate pool narrows to its
    verified samples when at least cfg.p of them exist; otherwise that class
    falls back to the unrestricted pool with a warning.
    """
    cfg.validate()
    if restrict_to_verified and ds.verified_mask is None:
        raise DataError("restrict_to_verified requires a verified mask")
    warnings: list[str] = []
    classes: list[ClassPrototypes] = []
    for c in range(ds.num_classes):
        class_idx = np.where(ds.noisy_labels == c)[0]
        if class_idx.size == 0:
            raise DataError(f"class {c} has no samples")
        pool = class_idx
        if restrict_to_verified:
            verified = class_idx[ds.verified_mask[class_idx]]
            if verified.size >= cfg.p:
                pool = verified
            else:
                warnings.append(
                    f"class {c}: only {verified.size} verified samples, using the unrestricted pool"
                )
        chosen = _sample_from_pool(pool, cfg.m, child_rng(cfg.seed, STREAM_SAMPLE, c))
        feats = np.asarray(extract(ds.features[chosen]), dtype=np.float64)
        p_c = min(cfg.p, chosen.size)
        if p_c < cfg.p:
            warnings.append(f"class {c}: only {chosen.size} candidates, electing {p_c} prototypes")
        sub_cfg = replace(cfg, p=p_c, m=chosen.size, seed=derive_seed(cfg.seed, STREAM_KMEANS, c))
        protos = select_prototypes(feats, sub_cfg)
        if protos.fill_warning:
            warnings.append(
                f"class {c}: separation filter left fewer than {p_c} candidates, filled by density order"
            )
        protos.class_id = c
        protos.source_indices = chosen[protos.source_indices]
        classes.append(protos)
    pset = PrototypeSet(classes=classes, selector=cfg.kind, p=cfg.p, warnings=warnings)
    pset.validate()
    return pset
