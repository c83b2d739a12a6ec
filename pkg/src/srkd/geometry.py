"""Embedding-geometry diagnostics: cluster separation and spectral spread."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from srkd._backend import kernels


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GeometryReport:
    d_eff: float
    rank95: int
    silhouette: float
    intra_cosine: float
    inter_cosine: float
    uniformity: float

    def to_dict(self) -> dict:
        return asdict(self)


def _as_array(emb) -> np.ndarray:
    v = getattr(emb, "values", emb)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise GeometryError(f"embeddings must be 2-D, got shape {v.shape}")
    return v


def _dense_labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise GeometryError(f"expected {n} labels, got {labels.shape}")
    classes, dense = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise GeometryError("need at least two classes")
    counts = np.bincount(dense)
    if counts.min() < 2:
        raise GeometryError(f"class {classes[counts.argmin()]!r} has a single sample")
    return dense.astype(np.int64), len(classes)


def silhouette_score(emb, labels) -> float:
    x = _as_array(emb)
    dense, k = _dense_labels(labels, x.shape[0])
    return float(np.mean(kernels.silhouette_samples(x, dense, k)))


def class_cosine(emb, labels) -> tuple[float, float]:
    """Mean pairwise cosine within classes and across classes (distinct pairs only)."""
    x = _as_array(emb)
    dense, _ = _dense_labels(labels, x.shape[0])
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    gram = unit @ unit.T
    same = dense[:, None] == dense[None, :]
    np.fill_diagonal(same, False)
    diff = dense[:, None] != dense[None, :]
    return float(gram[same].mean()), float(gram[diff].mean())


def uniformity(emb, t: float = 2.0) -> float:
    """Log of the mean Gaussian potential over distinct pairs."""
    x = _as_array(emb)
    n = x.shape[0]
    if n < 2:
        raise GeometryError("uniformity needs at least two samples")
    if t <= 0:
        raise GeometryError("t must be positive")
    pairs = n * (n - 1) / 2
    return float(np.log(kernels.gaussian_potential_sum(x, t) / pairs))


def covariance_spectrum(emb) -> np.ndarray:
    """Eigenvalues (descending) of the centered sample covariance."""
    x = _as_array(emb)
    if x.shape[0] < 2:
        raise GeometryError("spectrum needs at least two samples")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / x.shape[0]
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)[::-1]
    if eig.sum() <= 0:
        raise GeometryError("zero covariance: all points identical")
    return eig


def participation_ratio(eigenvalues) -> float:
    lam = np.asarray(eigenvalues, dtype=np.float64)
    return float(lam.sum() ** 2 / np.sum(lam * lam))


def effective_dim(emb) -> float:
    return participation_ratio(covariance_spectrum(emb))


def rank95(emb, fraction: float = 0.95) -> int:
    x = _as_array(emb)
    if x.shape[0] < 2:
        raise GeometryError("rank95 needs at least two samples")
    centered = x - x.mean(axis=0, keepdims=True)
    sv2 = np.linalg.svd(centered, compute_uv=False) ** 2
    total = sv2.sum()
    if total <= 0:
        raise GeometryError("zero variance: all points identical")
    # tolerate round-off at exact fractions (e.g. two equal directions)
    cum = np.cumsum(sv2) / total
    k = int(np.searchsorted(cum, fraction - 1e-12) + 1)
    return min(k, min(x.shape))


def geometry_report(emb, labels, t: float = 2.0) -> GeometryReport:
    intra, inter = class_cosine(emb, labels)
    return GeometryReport(
        d_eff=effective_dim(emb),
        rank95=rank95(emb),
        silhouette=silhouette_score(emb, labels),
        intra_cosine=intra,
        inter_cosine=inter,
        uniformity=uniformity(emb, t),
    )
