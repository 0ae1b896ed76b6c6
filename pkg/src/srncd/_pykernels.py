"""Pure numpy implementations of the hot kernels.

Same signatures and bitwise-identical results as the compiled ``_ckernels``
module; used when the extension is not built or ``SRNCD_PURE_PYTHON=1``.
"""

import numpy as np

_CHUNK = 1 << 16


def pair_counts(indptr, cols, vals, pi, pj):
    """Count disagreements for student pairs over one concept's exercises.

    Students are rows of a CSR structure (``indptr``, ``cols``, ``vals``) holding
    the exercises each student answered and the 0/1 score. For every pair
    ``(pi[t], pj[t])`` returns ``num[t]`` = exercises both answered where the first
    student was right and the second wrong, and ``den[t]`` = exercises both answered
    with differing scores.
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.int8)
    pi = np.asarray(pi, dtype=np.int64)
    pj = np.asarray(pj, dtype=np.int64)
    n = len(indptr) - 1
    width = int(cols.max()) + 1 if len(cols) else 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    right = np.zeros((n, width), dtype=np.int8)
    wrong = np.zeros((n, width), dtype=np.int8)
    right[rows, cols] = vals
    wrong[rows, cols] = 1 - vals

    num = np.empty(len(pi), dtype=np.int64)
    den = np.empty(len(pi), dtype=np.int64)
    for lo in range(0, len(pi), _CHUNK):
        a, b = pi[lo:lo + _CHUNK], pj[lo:lo + _CHUNK]
        ab = np.count_nonzero(right[a] & wrong[b], axis=1)
        ba = np.count_nonzero(wrong[a] & right[b], axis=1)
        num[lo:lo + _CHUNK] = ab
        den[lo:lo + _CHUNK] = ab + ba
    return num, den


def scatter_add_rows(out, idx, rows):
    """``out[idx[t]] += rows[t]`` in order of t (duplicates accumulate), in place."""
    np.add.at(out, idx, rows)
    return out
