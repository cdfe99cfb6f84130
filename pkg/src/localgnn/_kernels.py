"""Compiled neighborhood order-statistic kernels.

Each kernel works on a 2-D array of independent rows (one row per
sample/feature pair, length ``N``) and a CSR neighborhood ``(indptr,
indices)`` with sorted columns. Outputs are the selected values and the node
that realizes each of them. On value ties the realizer is the smallest node
index among the tied neighbors.
"""

import numba
import numpy as np

_U1 = np.uint64(1)
_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)

# bitmap selection scans N/64 words per node; past this ratio the
# per-node quickselect on ranks is cheaper and keeps the cost O(d)
_BITMAP_WORDS_PER_NEIGHBOR = 2


@numba.njit(inline="always")
def _popcount(v):
    v = v - ((v >> np.uint64(1)) & _M1)
    v = (v & _M2) + ((v >> np.uint64(2)) & _M2)
    v = (v + (v >> np.uint64(4))) & _M4
    return (v * _H01) >> np.uint64(56)


@numba.njit(inline="always")
def _lowest_bit(v):
    pos = 0
    while (v & _U1) == np.uint64(0):
        v >>= _U1
        pos += 1
    return pos


@numba.njit(inline="always")
def _select_rank(buf, m, k):
    """k-th smallest of ``buf[:m]`` (distinct ints), partitioning in place."""
    lo = 0
    hi = m - 1
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
                t = buf[i]
                buf[i] = buf[j]
                buf[j] = t
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            break
    return buf[k]


@numba.njit(cache=True)
def median_rows(x, indptr, indices, out, real, force_select):
    """Upper median ``x_[m//2 + 1]`` (1-based order statistic) per neighborhood."""
    rows, n = x.shape
    nw = (n + 63) // 64
    bits = np.zeros(nw, dtype=np.uint64)
    rank = np.empty(n, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    for r in range(rows):
        xr = x[r]
        # stable order: equal values are ranked by node index
        order = np.argsort(xr, kind="mergesort")
        for q in range(n):
            rank[order[q]] = q
        for i in range(n):
            a = indptr[i]
            b = indptr[i + 1]
            m = b - a
            k = m // 2
            if not force_select and nw <= _BITMAP_WORDS_PER_NEIGHBOR * m:
                for p in range(a, b):
                    q = rank[indices[p]]
                    bits[q >> 6] |= _U1 << np.uint64(q & 63)
                w = 0
                c = np.int64(_popcount(bits[0]))
                while k >= c:
                    k -= c
                    w += 1
                    c = np.int64(_popcount(bits[w]))
                v = bits[w]
                for _ in range(k):
                    v &= v - _U1
                q = w * 64 + _lowest_bit(v)
                j = order[q]
                val = xr[j]
                # ties sit contiguously below q in the stable order
                q -= 1
                while q >= 0 and xr[order[q]] == val:
                    if (bits[q >> 6] >> np.uint64(q & 63)) & _U1:
                        j = order[q]
                    q -= 1
                for t in range(nw):
                    bits[t] = np.uint64(0)
            else:
                for p in range(m):
                    buf[p] = rank[indices[a + p]]
                q = _select_rank(buf, m, k)
                j = order[q]
                val = xr[j]
                # buf[:k] now holds the ranks below q
                best = q
                for p in range(k):
                    t = buf[p]
                    if t < best and xr[order[t]] == val:
                        best = t
                j = order[best]
            out[r, i] = val
            real[r, i] = j


@numba.njit(cache=True)
def max_rows(x, indptr, indices, out, real):
    rows, n = x.shape
    for r in range(rows):
        xr = x[r]
        for i in range(n):
            a = indptr[i]
            b = indptr[i + 1]
            j = indices[a]
            val = xr[j]
            for p in range(a + 1, b):
                jj = indices[p]
                if xr[jj] > val:
                    val = xr[jj]
                    j = jj
            out[r, i] = val
            real[r, i] = j
