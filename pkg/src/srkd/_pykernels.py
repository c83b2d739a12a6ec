"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and semantics. The compiled module is preferred when it imports.
"""
import numpy as np

NAME = "python"


def log_softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_rows(z):
    return np.exp(log_softmax_rows(z))


def xent_rows(z, p, diag_weight, off_weight):
    """Row-wise cross-entropy of targets ``p`` against ``softmax(z)``.

    Returns ``(diag_sum, off_sum, grad)`` where ``diag_sum`` is
    ``-sum_i p_ii log q_ii``, ``off_sum`` is ``-sum_{i!=j} p_ij log q_ij`` and
    ``grad`` is the gradient of ``diag_weight*diag_sum + off_weight*off_sum``
    with respect to ``z``.
    """
    z = np.asarray(z, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    n = z.shape[0]
    logq = log_softmax_rows(z)
    q = np.exp(logq)
    terms = -p * logq
    diag_terms = np.diagonal(terms)
    diag_sum = float(diag_terms.sum())
    off_sum = float(terms.sum() - diag_sum)
    w = off_weight * p
    idx = np.arange(n)
    w[idx, idx] = diag_weight * p[idx, idx]
    grad = w.sum(axis=1, keepdims=True) * q - w
    return diag_sum, off_sum, grad


def neg_entropy_rows(z):
    """Sum over rows of ``sum_j q_ij log q_ij`` and its gradient w.r.t. ``z``."""
    logq = log_softmax_rows(z)
    q = np.exp(logq)
    row_negent = (q * logq).sum(axis=1, keepdims=True)
    grad = q * (logq - row_negent)
    return float(row_negent.sum()), grad


def pairwise_sq_dists(x):
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def silhouette_samples(x, labels, num_labels):
    """Per-point silhouette values with Euclidean distance.

    ``labels`` must be contiguous integers in ``[0, num_labels)`` and every
    label must have at least two members.
    """
    labels = np.asarray(labels, dtype=np.int64)
    d = np.sqrt(pairwise_sq_dists(x))
    counts = np.bincount(labels, minlength=num_labels).astype(np.float64)
    onehot = np.zeros((len(labels), num_labels))
    onehot[np.arange(len(labels)), labels] = 1.0
    sums = d @ onehot
    own = labels
    a = sums[np.arange(len(labels)), own] / (counts[own] - 1.0)
    means = sums / counts[None, :]
    means[np.arange(len(labels)), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    out = np.zeros(len(labels))
    nz = denom > 0
    out[nz] = (b[nz] - a[nz]) / denom[nz]
    return out


def gaussian_potential_sum(x, t):
    """``sum_{i<j} exp(-t * ||x_i - x_j||^2)``."""
    d2 = pairwise_sq_dists(x)
    iu = np.triu_indices(d2.shape[0], k=1)
    return float(np.exp(-t * d2[iu]).sum())
