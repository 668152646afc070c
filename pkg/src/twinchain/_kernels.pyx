# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled round-timing kernel; same contract as ``_kernels_py.round_times``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, isfinite

cnp.import_array()


cdef double _select(double* buf, Py_ssize_t n, Py_ssize_t k) noexcept nogil:
    # Hoare quickselect: k-th smallest (0-based) of buf[0:n], in place.
    cdef Py_ssize_t lo = 0, hi = n - 1, i, j
    cdef double pivot, tmp
    while lo < hi:
        pivot = buf[(lo + hi) // 2]
        i = lo
        j = hi
        while i <= j:
            while buf[i] < pivot:
                i += 1
            while buf[j] > pivot:
                j -= 1
            if i <= j:
                tmp = buf[i]; buf[i] = buf[j]; buf[j] = tmp
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            break
    return buf[k]


def round_times(t_proc_in, accept_in, prep_delay_in, commit_delay_in, int quorum):
    cdef double[::1] t_proc = np.ascontiguousarray(t_proc_in, dtype=np.float64)
    cdef cnp.uint8_t[::1] accept = np.ascontiguousarray(accept_in, dtype=np.uint8)
    cdef double[:, ::1] prep = np.ascontiguousarray(prep_delay_in, dtype=np.float64)
    cdef double[:, ::1] comm = np.ascontiguousarray(commit_delay_in, dtype=np.float64)
    cdef Py_ssize_t n = t_proc.shape[0], j, k, m, n_acc = 0
    prepared_a = np.full(n, np.inf)
    committed_a = np.full(n, np.inf)
    adopted_a = np.full(n, np.inf)
    cdef double[::1] prepared = prepared_a
    cdef double[::1] committed = committed_a
    cdef double[::1] adopted = adopted_a
    cdef cnp.uint8_t[::1] acc = np.zeros(n, dtype=np.uint8)
    cdef double[::1] buf = np.empty(n, dtype=np.float64)
    cdef double kth, own
    for j in range(n):
        if accept[j] and isfinite(t_proc[j]):
            acc[j] = 1
            n_acc += 1
    if quorum < 1 or quorum > n or n_acc < quorum:
        return prepared_a, committed_a, adopted_a
    with nogil:
        for k in range(n):
            if not acc[k]:
                continue
            m = 0
            for j in range(n):
                if acc[j]:
                    buf[m] = t_proc[j] if j == k else t_proc[j] + prep[j, k]
                    m += 1
            kth = _select(&buf[0], m, quorum - 1)
            prepared[k] = kth if kth > t_proc[k] else t_proc[k]
        for k in range(n):
            m = 0
            for j in range(n):
                if acc[j]:
                    buf[m] = prepared[j] if j == k else prepared[j] + comm[j, k]
                    m += 1
            kth = _select(&buf[0], m, quorum - 1)
            if acc[k]:
                committed[k] = kth if kth > prepared[k] else prepared[k]
            elif isfinite(t_proc[k]):
                adopted[k] = kth if kth > t_proc[k] else t_proc[k]
    return prepared_a, committed_a, adopted_a
