"""Pairwise similarity matrices over feature sets.

Both kinds are oriented so that larger means more similar, letting the
downstream density/selection code treat them uniformly.
"""

from dataclasses import dataclass

import numpy as np

KIND_COSINE = "cosine"
KIND_NEGATIVE_EUCLIDEAN = "negative_euclidean"

_ZERO_NORM_EPS = 1e-12


@dataclass
class SimilarityMatrix:
    entries: np.ndarray  # (m, m) float64, symmetric
    kind: str

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def validate(self) -> None:
        s = self.entries
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.isfinite(s).all():
            raise ValueError("similarity matrix contains non-finite entries")
        if s.size and np.abs(s - s.T).max() > 1e-6:
            raise ValueError("similarity matrix is not symmetric")
        if self.kind == KIND_COSINE and s.size:
            if np.abs(np.diag(s) - 1.0).max() > 1e-6:
                raise ValueError("cosine similarity diagonal must be 1")
            if s.min() < -1.0 - 1e-6 or s.max() > 1.0 + 1e-6:
                raise ValueError("cosine similarity entries out of [-1, 1]")


def _check_features(features: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError("feature matrix must be 2-d")
    if not np.isfinite(f).all():
        raise ValueError("feature matrix contains non-finite values")
    return f


def normalized_rows(features: np.ndarray) -> np.ndarray:
    """Rows scaled to unit norm; raises naming the first zero-norm row."""
    f = _check_features(features)
    norms = np.linalg.norm(f, axis=1)
    bad = np.where(norms <= _ZERO_NORM_EPS)[0]
    if bad.size:
        raise ValueError(f"zero-norm feature row {bad[0]}")
    return f / norms[:, None]


def _mirror_upper(s: np.ndarray, diagonal: float) -> np.ndarray:
    upper = np.triu(s, k=1)
    out = upper + upper.T
    np.fill_diagonal(out, diagonal)
    return out


def cosine_matrix(features: np.ndarray) -> SimilarityMatrix:
    """entries[i][j] = <F_i, F_j> / (|F_i| |F_j|), exactly symmetric, diagonal 1."""
    r = normalized_rows(features)
    s = _mirror_upper(r @ r.T, 1.0)
    return SimilarityMatrix(entries=s, kind=KIND_COSINE)


def negative_euclidean_matrix(features: np.ndarray) -> SimilarityMatrix:
    """entries[i][j] = -|F_i - F_j|_2, exactly symmetric, diagonal 0."""
    f = _check_features(features)
    sq = (f * f).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    np.maximum(d2, 0.0, out=d2)
    s = _mirror_upper(-np.sqrt(d2), 0.0)
    return SimilarityMatrix(entries=s, kind=KIND_NEGATIVE_EUCLIDEAN)
