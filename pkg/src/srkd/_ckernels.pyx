# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, INFINITY

cnp.import_array()

NAME = "cython"


cdef void _row_log_softmax(const double[:, ::1] z, Py_ssize_t i, double[::1] out) noexcept nogil:
    cdef Py_ssize_t j, n = z.shape[1]
    cdef double m = z[i, 0]
    cdef double s = 0.0
    for j in range(1, n):
        if z[i, j] > m:
            m = z[i, j]
    for j in range(n):
        s += exp(z[i, j] - m)
    s = log(s)
    for j in range(n):
        out[j] = z[i, j] - m - s


def log_softmax_rows(z):
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t i, n = zv.shape[0]
    out = np.empty((zv.shape[0], zv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] ov = out
    for i in range(n):
        _row_log_softmax(zv, i, ov[i])
    return out


def softmax_rows(z):
    return np.exp(log_softmax_rows(z))


def xent_rows(z, p, double diag_weight, double off_weight):
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], m = zv.shape[1]
    cdef Py_ssize_t i, j
    grad = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] gv = grad
    logq_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] logq = logq_arr
    cdef double diag_sum = 0.0, off_sum = 0.0, wsum, w
    with nogil:
        for i in range(n):
            _row_log_softmax(zv, i, logq)
            wsum = 0.0
            for j in range(m):
                if i == j:
                    diag_sum += -pv[i, j] * logq[j]
                    wsum += diag_weight * pv[i, j]
                else:
                    off_sum += -pv[i, j] * logq[j]
                    wsum += off_weight * pv[i, j]
            for j in range(m):
                w = diag_weight * pv[i, j] if i == j else off_weight * pv[i, j]
                gv[i, j] = wsum * exp(logq[j]) - w
    return diag_sum, off_sum, grad


def neg_entropy_rows(z):
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], m = zv.shape[1]
    cdef Py_ssize_t i, j
    grad = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] gv = grad
    logq_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] logq = logq_arr
    cdef double total = 0.0, row, q
    with nogil:
        for i in range(n):
            _row_log_softmax(zv, i, logq)
            row = 0.0
            for j in range(m):
                row += exp(logq[j]) * logq[j]
            total += row
            for j in range(m):
                q = exp(logq[j])
                gv[i, j] = q * (logq[j] - row)
    return total, grad


def pairwise_sq_dists(x):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    cdef Py_ssize_t i, j, k
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double acc, diff
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = xv[i, k] - xv[j, k]
                    acc += diff * diff
                ov[i, j] = acc
                ov[j, i] = acc
    return out


def silhouette_samples(x, labels, Py_ssize_t num_labels):
    d2 = pairwise_sq_dists(x)
    cdef const double[:, ::1] dv = d2
    cdef const long long[::1] lv = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = dv.shape[0]
    cdef Py_ssize_t i, j, c, own
    counts_arr = np.bincount(np.asarray(lv), minlength=num_labels).astype(np.float64)
    cdef const double[::1] counts = counts_arr
    sums_arr = np.zeros(num_labels, dtype=np.float64)
    cdef double[::1] sums = sums_arr
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double a, b, mean, denom
    with nogil:
        for i in range(n):
            for c in range(num_labels):
                sums[c] = 0.0
            for j in range(n):
                sums[lv[j]] += sqrt(dv[i, j])
            own = lv[i]
            a = sums[own] / (counts[own] - 1.0)
            b = INFINITY
            for c in range(num_labels):
                if c != own:
                    mean = sums[c] / counts[c]
                    if mean < b:
                        b = mean
            denom = a if a > b else b
            if denom > 0:
                ov[i] = (b - a) / denom
    return out


def gaussian_potential_sum(x, double t):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double total = 0.0, acc, diff
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = xv[i, k] - xv[j, k]
                    acc += diff * diff
                total += exp(-t * acc)
    return total
