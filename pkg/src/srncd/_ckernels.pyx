# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def pair_counts(indptr, cols, vals, pi, pj):
    cdef const long long[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const long long[::1] cc = np.ascontiguousarray(cols, dtype=np.int64)
    cdef const signed char[::1] vv = np.ascontiguousarray(vals, dtype=np.int8)
    cdef const long long[::1] a = np.ascontiguousarray(pi, dtype=np.int64)
    cdef const long long[::1] b = np.ascontiguousarray(pj, dtype=np.int64)
    cdef Py_ssize_t n_pairs = a.shape[0]
    num_arr = np.empty(n_pairs, dtype=np.int64)
    den_arr = np.empty(n_pairs, dtype=np.int64)
    cdef long long[::1] num = num_arr
    cdef long long[::1] den = den_arr
    cdef Py_ssize_t t, x, xe, y, ye
    cdef long long n_ab, n_ba
    cdef signed char vx, vy
    with nogil:
        for t in range(n_pairs):
            x = ip[a[t]]
            xe = ip[a[t] + 1]
            y = ip[b[t]]
            ye = ip[b[t] + 1]
            n_ab = 0
            n_ba = 0
            # merge two sorted exercise lists
            while x < xe and y < ye:
                if cc[x] < cc[y]:
                    x += 1
                elif cc[x] > cc[y]:
                    y += 1
                else:
                    vx = vv[x]
                    vy = vv[y]
                    if vx > vy:
                        n_ab += 1
                    elif vx < vy:
                        n_ba += 1
                    x += 1
                    y += 1
            num[t] = n_ab
            den[t] = n_ab + n_ba
    return num_arr, den_arr


def scatter_add_rows(out, idx, rows):
    cdef double[:, ::1] o = out
    cdef const long long[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef const double[:, ::1] r = np.ascontiguousarray(rows, dtype=np.float64)
    cdef Py_ssize_t t, c, dst
    cdef Py_ssize_t n = ix.shape[0]
    cdef Py_ssize_t width = r.shape[1]
    if o.shape[1] != width:
        raise ValueError("row width mismatch")
    with nogil:
        for t in range(n):
            dst = ix[t]
            for c in range(width):
                o[dst, c] += r[t, c]
    return out
