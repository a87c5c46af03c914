# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled mini-batch SGD epoch for the softmax classifier.

Mirrors ``fedcontrib._sgd_py.sgd_epoch`` operation for operation; only the
summation order inside each dot product differs.
"""

from libc.math cimport exp
from libc.stdint cimport int64_t
from libc.stdlib cimport free, malloc
from libc.string cimport memset


def sgd_epoch(double[:, ::1] weights, double[::1] biases,
              const double[:, ::1] features, const int64_t[::1] labels,
              const int64_t[::1] order, double lr, Py_ssize_t batch_size):
    """Run one epoch in place over ``order`` in batches of ``batch_size``."""
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t k_count = weights.shape[0]
    cdef Py_ssize_t dim = weights.shape[1]
    cdef Py_ssize_t start, stop, t, k, j, row, m
    cdef double top, total, coef
    cdef double *grad_w
    cdef double *grad_b
    cdef double *probs

    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if features.shape[1] != dim or biases.shape[0] != k_count:
        raise ValueError("parameter and feature dimensions disagree")

    grad_w = <double *> malloc(k_count * dim * sizeof(double))
    grad_b = <double *> malloc(k_count * sizeof(double))
    probs = <double *> malloc(k_count * sizeof(double))
    if grad_w == NULL or grad_b == NULL or probs == NULL:
        free(grad_w)
        free(grad_b)
        free(probs)
        raise MemoryError()

    try:
        with nogil:
            start = 0
            while start < n:
                stop = start + batch_size
                if stop > n:
                    stop = n
                m = stop - start
                memset(grad_w, 0, k_count * dim * sizeof(double))
                memset(grad_b, 0, k_count * sizeof(double))

                for t in range(start, stop):
                    row = order[t]
                    for k in range(k_count):
                        total = biases[k]
                        for j in range(dim):
                            total = total + weights[k, j] * features[row, j]
                        probs[k] = total
                    top = probs[0]
                    for k in range(1, k_count):
                        if probs[k] > top:
                            top = probs[k]
                    total = 0.0
                    for k in range(k_count):
                        probs[k] = exp(probs[k] - top)
                        total = total + probs[k]
                    for k in range(k_count):
                        probs[k] = probs[k] / total
                    probs[labels[row]] -= 1.0
                    for k in range(k_count):
                        coef = probs[k]
                        grad_b[k] += coef
                        for j in range(dim):
                            grad_w[k * dim + j] += coef * features[row, j]

                for k in range(k_count):
                    biases[k] = biases[k] - lr * (grad_b[k] / m)
                    for j in range(dim):
                        weights[k, j] = weights[k, j] - lr * (grad_w[k * dim + j] / m)
                start = stop
    finally:
        free(grad_w)
        free(grad_b)
        free(probs)
