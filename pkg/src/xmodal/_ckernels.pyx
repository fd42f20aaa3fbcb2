"""Compiled support-counting kernels over multi-word uint64 bitmasks."""
import numpy as np

from libc.stdint cimport int64_t, uint64_t


cdef inline bint _contains(const uint64_t[:, ::1] a, Py_ssize_t i,
                           const uint64_t[:, ::1] b, Py_ssize_t j,
                           Py_ssize_t words) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(words):
        if (a[i, k] & b[j, k]) != b[j, k]:
            return False
    return True


def support_counts(const uint64_t[:, ::1] transactions, const uint64_t[:, ::1] candidates):
    cdef Py_ssize_t n = transactions.shape[0]
    cdef Py_ssize_t m = candidates.shape[0]
    cdef Py_ssize_t words = candidates.shape[1]
    out = np.zeros(m, dtype=np.int64)
    cdef int64_t[::1] counts = out
    cdef Py_ssize_t i, j
    if n == 0 or m == 0:
        return out
    if transactions.shape[1] != words:
        raise ValueError("word width mismatch")
    with nogil:
        for j in range(m):
            for i in range(n):
                if _contains(transactions, i, candidates, j, words):
                    counts[j] += 1
    return out


def match_counts(const uint64_t[:, ::1] itemsets, const uint64_t[:, ::1] rules,
                 const int64_t[::1] rule_groups, Py_ssize_t n_groups):
    cdef Py_ssize_t n = itemsets.shape[0]
    cdef Py_ssize_t m = rules.shape[0]
    cdef Py_ssize_t words = rules.shape[1]
    out = np.zeros((n, n_groups), dtype=np.int64)
    cdef int64_t[:, ::1] counts = out
    cdef Py_ssize_t i, j
    if n == 0 or m == 0:
        return out
    if itemsets.shape[1] != words:
        raise ValueError("word width mismatch")
    with nogil:
        for i in range(n):
            for j in range(m):
                if _contains(itemsets, i, rules, j, words):
                    counts[i, rule_groups[j]] += 1
    return out
