"""Numba kernels for the resampling hot path.

fastmath stays off everywhere: the compensated sums depend on strict IEEE
rounding and on the compiler not reassociating additions.
"""

import numpy as np
from numba import njit

# Veltkamp splitter for binary64: hi keeps 26 significant bits.
SPLITTER = 134217729.0  # 2**27 + 1

# c * hi and c * lo are exact while every count is below this bound.
MAX_EXACT_COUNT = 2**27


@njit(cache=True, nogil=True)
def count_indices(idx, n):
    counts = np.zeros(n, np.int32)
    for j in range(idx.size):
        counts[idx[j]] += 1
    return counts


@njit(cache=True, inline="always")
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(cache=True, nogil=True)
def split_sum(counts, hi, lo):
    """Return (s, e) with s + e ~= sum(counts * (hi + lo)), e being the error term.

    Four independent Neumaier lanes break the add dependency chain; the lanes
    are merged with error-free two-sums at the end.
    """
    s0 = s1 = s2 = s3 = 0.0
    c0 = c1 = c2 = c3 = 0.0
    n = counts.size
    n4 = n - n % 4
    for i in range(0, n4, 4):
        w = counts[i]
        if w != 0:
            p = w * hi[i]
            t = s0 + p
            c0 += (s0 - t) + p if abs(s0) >= abs(p) else (p - t) + s0
            s0 = t
            p = w * lo[i]
            t = s0 + p
            c0 += (s0 - t) + p if abs(s0) >= abs(p) else (p - t) + s0
            s0 = t
        w = counts[i + 1]
        if w != 0:
            p = w * hi[i + 1]
            t = s1 + p
            c1 += (s1 - t) + p if abs(s1) >= abs(p) else (p - t) + s1
            s1 = t
            p = w * lo[i + 1]
            t = s1 + p
            c1 += (s1 - t) + p if abs(s1) >= abs(p) else (p - t) + s1
            s1 = t
        w = counts[i + 2]
        if w != 0:
            p = w * hi[i + 2]
            t = s2 + p
            c2 += (s2 - t) + p if abs(s2) >= abs(p) else (p - t) + s2
            s2 = t
            p = w * lo[i + 2]
            t = s2 + p
            c2 += (s2 - t) + p if abs(s2) >= abs(p) else (p - t) + s2
            s2 = t
        w = counts[i + 3]
        if w != 0:
            p = w * hi[i + 3]
            t = s3 + p
            c3 += (s3 - t) + p if abs(s3) >= abs(p) else (p - t) + s3
            s3 = t
            p = w * lo[i + 3]
            t = s3 + p
            c3 += (s3 - t) + p if abs(s3) >= abs(p) else (p - t) + s3
            s3 = t
    for i in range(n4, n):
        w = counts[i]
        if w != 0:
            p = w * hi[i]
            t = s0 + p
            c0 += (s0 - t) + p if abs(s0) >= abs(p) else (p - t) + s0
            s0 = t
            p = w * lo[i]
            t = s0 + p
            c0 += (s0 - t) + p if abs(s0) >= abs(p) else (p - t) + s0
            s0 = t
    a, e1 = _two_sum(s0, s1)
    b, e2 = _two_sum(s2, s3)
    s, e3 = _two_sum(a, b)
    return s, ((c0 + c1) + (c2 + c3)) + ((e1 + e2) + e3)
