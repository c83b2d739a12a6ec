"""Contrastive and distillation losses on dense similarity matrices.

Each loss returns its value together with the exact gradient with respect to
its logit (or embedding) inputs. All arithmetic is float64.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from srkd._backend import kernels


class LossInputError(ValueError):
    """Raised for malformed loss inputs (shape, finiteness, parameters)."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise LossInputError(f"embedding matrix must be N x d with N, d >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise LossInputError("embedding matrix has non-finite entries")
        if self.normalized and np.max(np.abs(np.linalg.norm(v, axis=1) - 1.0)) > 1e-6:
            raise LossInputError("rows flagged normalized do not have unit norm")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_raw(cls, values) -> "EmbeddingMatrix":
        """Row-normalize ``values`` and flag the result normalized."""
        v = np.asarray(values, dtype=np.float64)
        return cls(v / np.linalg.norm(v, axis=1, keepdims=True), normalized=True)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SimilarityMatrix:
    logits: np.ndarray
    scale: float

    def __post_init__(self):
        z = np.asarray(self.logits, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] != z.shape[1]:
            raise LossInputError(f"similarity matrix must be square, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise LossInputError("similarity matrix has non-finite logits")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise LossInputError(f"logit scale must be positive, got {self.scale}")
        object.__setattr__(self, "logits", z)


class Direction(enum.Enum):
    IMAGE_TO_TEXT = "image_to_text"
    TEXT_TO_IMAGE = "text_to_image"


@dataclass(frozen=True)
class RowDistributions:
    probs: np.ndarray
    direction: Direction
    softening: float = 1.0


@dataclass
class LossReport:
    """Per-step breakdown of the training objective."""

    clip_loss: float = 0.0
    kd_total: float = 0.0
    kd_diag: float = 0.0
    kd_offdiag: float = 0.0
    conf_penalty: float = 0.0
    feat_kd: float = 0.0
    applied_lambda: float = 0.0
    applied_beta: float = 0.0
    grad_inf_norm: float = 0.0


def _logits(s) -> np.ndarray:
    if isinstance(s, SimilarityMatrix):
        return s.logits
    z = np.asarray(s, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise LossInputError(f"logits must be square, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise LossInputError("non-finite logits")
    return z


def similarity(img, txt, scale: float) -> SimilarityMatrix:
    """Scaled cosine-similarity logits ``scale * img @ txt.T``."""
    a = img.values if isinstance(img, EmbeddingMatrix) else np.asarray(img, dtype=np.float64)
    b = txt.values if isinstance(txt, EmbeddingMatrix) else np.asarray(txt, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise LossInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise LossInputError("non-finite embeddings")
    if not (np.isfinite(scale) and scale > 0):
        raise LossInputError(f"logit scale must be positive, got {scale}")
    return SimilarityMatrix(scale * (a @ b.T), float(scale))


def row_distributions(s, direction: Direction = Direction.IMAGE_TO_TEXT,
                      softening: float = 1.0) -> RowDistributions:
    if softening <= 0:
        raise LossInputError("softening temperature must be positive")
    z = _logits(s)
    if direction is Direction.TEXT_TO_IMAGE:
        z = z.T
    return RowDistributions(kernels.softmax_rows(z / softening), direction, softening)


def clip_loss(s) -> tuple[float, np.ndarray]:
    """Symmetric InfoNCE over both directions, matched pairs on the diagonal."""
    z = _logits(s)
    n = z.shape[0]
    eye = np.eye(n)
    d1, _, g1 = kernels.xent_rows(z, eye, 1.0, 0.0)
    d2, _, g2 = kernels.xent_rows(np.ascontiguousarray(z.T), eye, 1.0, 0.0)
    value = 0.5 * (d1 + d2) / n
    grad = (0.5 / n) * (g1 + g2.T)
    return value, grad


def _check_pair(s_student, s_teacher, tau_kd):
    zs, zt = _logits(s_student), _logits(s_teacher)
    if zs.shape != zt.shape:
        raise LossInputError(f"shape mismatch: student {zs.shape} vs teacher {zt.shape}")
    if not (np.isfinite(tau_kd) and tau_kd > 0):
        raise LossInputError(f"tau_kd must be positive, got {tau_kd}")
    return zs, zt


def teacher_targets(s_teacher, tau_kd: float) -> tuple[np.ndarray, np.ndarray]:
    """Softened teacher rows for both directions (image->text, text->image)."""
    zt = _logits(s_teacher)
    p1 = kernels.softmax_rows(zt / tau_kd)
    p2 = kernels.softmax_rows(np.ascontiguousarray(zt.T) / tau_kd)
    return p1, p2


def _kd_parts(zs, p1, p2, diag_weight, off_weight):
    n = zs.shape[0]
    d1, o1, g1 = kernels.xent_rows(zs, p1, diag_weight, off_weight)
    d2, o2, g2 = kernels.xent_rows(np.ascontiguousarray(zs.T), p2, diag_weight, off_weight)
    diag = 0.5 * (d1 + d2) / n
    off = 0.5 * (o1 + o2) / n
    grad = (0.5 / n) * (g1 + g2.T)
    return diag, off, grad


def kd_loss(s_student, s_teacher, tau_kd: float = 5.0) -> tuple[float, np.ndarray]:
    """Symmetric cross-entropy from tau-softened teacher rows to native student rows.

    The teacher entropy is kept in the value (cross-entropy, not KL) and no
    ``tau**2`` factor is applied to the gradient.
    """
    zs, zt = _check_pair(s_student, s_teacher, tau_kd)
    p1, p2 = teacher_targets(zt, tau_kd)
    n = zs.shape[0]
    # whole-row cross-entropy, computed without the diagonal split
    lq1 = kernels.log_softmax_rows(zs)
    lq2 = kernels.log_softmax_rows(np.ascontiguousarray(zs.T))
    value = -0.5 * (float(np.sum(p1 * lq1)) + float(np.sum(p2 * lq2))) / n
    grad = (0.5 / n) * ((np.exp(lq1) - p1) + (np.exp(lq2) - p2).T)
    return value, grad


def kd_loss_decomposed(s_student, s_teacher, tau_kd: float = 5.0, beta: float = 1.0,
                       diag_weight: float = 1.0):
    """Split the KD cross-entropy sum into matched (j == i) and non-matched terms.

    Returns ``(diag, offdiag, combined, grad)`` with
    ``combined = diag_weight * diag + beta * offdiag`` and ``grad`` its gradient
    with respect to the student logits. ``beta`` may be negative.
    """
    zs, zt = _check_pair(s_student, s_teacher, tau_kd)
    if not np.isfinite(beta):
        raise LossInputError("beta must be finite")
    p1, p2 = teacher_targets(zt, tau_kd)
    diag, off, grad = _kd_parts(zs, p1, p2, diag_weight, beta)
    return diag, off, diag_weight * diag + beta * off, grad


def kd_from_targets(zs: np.ndarray, p1: np.ndarray, p2: np.ndarray,
                    diag_weight: float, off_weight: float):
    """Same as :func:`kd_loss_decomposed` with precomputed teacher rows (trainer hot path)."""
    diag, off, grad = _kd_parts(np.ascontiguousarray(zs), p1, p2, diag_weight, off_weight)
    return diag, off, diag_weight * diag + off_weight * off, grad


def confidence_penalty(s_student) -> tuple[float, np.ndarray]:
    """Negative mean row entropy of the student, averaged over both directions."""
    z = _logits(s_student)
    n = z.shape[0]
    v1, g1 = kernels.neg_entropy_rows(z)
    v2, g2 = kernels.neg_entropy_rows(np.ascontiguousarray(z.T))
    return 0.5 * (v1 + v2) / n, (0.5 / n) * (g1 + g2.T)


def _normalize_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / norms, norms


def normalize_backward(unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Pull a gradient on ``x / |x|`` back to ``x``."""
    return (grad_unit - unit * np.sum(unit * grad_unit, axis=1, keepdims=True)) / norms


def feature_kd(student_emb, projection, teacher_emb):
    """Mean squared distance between normalized projected student rows and normalized teacher rows.

    Returns ``(value, grad_student, grad_projection)``.
    """
    x = student_emb.values if isinstance(student_emb, EmbeddingMatrix) else np.asarray(student_emb, np.float64)
    y = teacher_emb.values if isinstance(teacher_emb, EmbeddingMatrix) else np.asarray(teacher_emb, np.float64)
    w = np.asarray(projection, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or w.ndim != 2:
        raise LossInputError("feature_kd expects matrices")
    if w.shape != (x.shape[1], y.shape[1]) or x.shape[0] != y.shape[0]:
        raise LossInputError(
            f"dimension mismatch: student {x.shape}, projection {w.shape}, teacher {y.shape}")
    n = x.shape[0]
    zu, znorm = _normalize_rows(x @ w)
    yu, _ = _normalize_rows(y)
    diff = zu - yu
    value = float(np.sum(diff * diff)) / n
    gz = normalize_backward(zu, znorm, (2.0 / n) * diff)
    return value, gz @ w.T, x.T @ gz
