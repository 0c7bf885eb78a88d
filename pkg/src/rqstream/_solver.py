"""Linear solver for the RaptorQ constraint system.

The system splits into binary rows (LDPC and LT) and a handful of GF(256)
rows (HDPC). Binary rows are reduced with bit-packed Gauss-Jordan
elimination; the HDPC rows are then cleared of every binary pivot column and
solved densely for the columns the binary rows could not pin down. Rank over
GF(2) equals rank over GF(256) for binary rows, so the split is exact.
"""

import itertools

import numba
import numpy as np

from .gf256 import INV_TABLE, MUL_TABLE


@numba.njit(cache=True)
def _solve_kernel(bits, data8, data64, hdpc, hdata8, n_cols, mul, inv):
    n_bin, n_words = bits.shape
    n_h = hdpc.shape[0]
    n_bytes = data8.shape[1]
    n_words_data = data64.shape[1]

    pivot_row = np.full(n_cols, -1, dtype=np.int64)
    used = np.zeros(n_bin, dtype=np.bool_)
    for col in range(n_cols):
        w = col >> 6
        m = np.uint64(1) << np.uint64(col & 63)
        p = -1
        for i in range(n_bin):
            if not used[i] and (bits[i, w] & m) != 0:
                p = i
                break
        if p < 0:
            continue
        used[p] = True
        pivot_row[col] = p
        for i in range(n_bin):
            if i != p and (bits[i, w] & m) != 0:
                for k in range(n_words):
                    bits[i, k] ^= bits[p, k]
                for k in range(n_words_data):
                    data64[i, k] ^= data64[p, k]

    # Clear binary pivot columns out of the HDPC rows. Pivot rows are fully
    # reduced, so eliminating one pivot column never reintroduces another.
    for col in range(n_cols):
        p = pivot_row[col]
        if p < 0:
            continue
        for h in range(n_h):
            c = hdpc[h, col]
            if c == 0:
                continue
            for j in range(n_cols):
                if (bits[p, j >> 6] >> np.uint64(j & 63)) & np.uint64(1):
                    hdpc[h, j] ^= c
            for k in range(n_bytes):
                hdata8[h, k] ^= mul[c, data8[p, k]]

    n_free = 0
    for col in range(n_cols):
        if pivot_row[col] < 0:
            n_free += 1
    out = np.zeros((n_cols, n_bytes), dtype=np.uint8)
    if n_free > n_h:
        return False, out
    free = np.empty(n_free, dtype=np.int64)
    f = 0
    for col in range(n_cols):
        if pivot_row[col] < 0:
            free[f] = col
            f += 1

    # Dense GF(256) Gauss-Jordan over the free columns.
    h_used = np.zeros(n_h, dtype=np.bool_)
    h_pivot = np.empty(n_free, dtype=np.int64)
    for fi in range(n_free):
        col = free[fi]
        p = -1
        for h in range(n_h):
            if not h_used[h] and hdpc[h, col] != 0:
                p = h
                break
        if p < 0:
            return False, out
        h_used[p] = True
        h_pivot[fi] = p
        c_inv = inv[hdpc[p, col]]
        if c_inv != 1:
            for gj in range(n_free):
                j = free[gj]
                hdpc[p, j] = mul[c_inv, hdpc[p, j]]
            for k in range(n_bytes):
                hdata8[p, k] = mul[c_inv, hdata8[p, k]]
        for h in range(n_h):
            if h == p:
                continue
            c = hdpc[h, col]
            if c == 0:
                continue
            for gj in range(n_free):
                j = free[gj]
                hdpc[h, j] ^= mul[c, hdpc[p, j]]
            for k in range(n_bytes):
                hdata8[h, k] ^= mul[c, hdata8[p, k]]
    for fi in range(n_free):
        for k in range(n_bytes):
            out[free[fi], k] = hdata8[h_pivot[fi], k]

    for col in range(n_cols):
        p = pivot_row[col]
        if p < 0:
            continue
        for k in range(n_bytes):
            out[col, k] = data8[p, k]
        for fi in range(n_free):
            j = free[fi]
            if (bits[p, j >> 6] >> np.uint64(j & 63)) & np.uint64(1):
                for k in range(n_bytes):
                    out[col, k] ^= out[j, k]
    return True, out


def pack_rows(columns_per_row, n_cols):
    """Pack rows given as column-index lists into a uint64 bit matrix."""
    n_words = (n_cols + 63) // 64
    bits = np.zeros((len(columns_per_row), n_words), dtype=np.uint64)
    if not columns_per_row:
        return bits
    lengths = np.fromiter((len(c) for c in columns_per_row), dtype=np.int64,
                          count=len(columns_per_row))
    rows = np.repeat(np.arange(len(columns_per_row)), lengths)
    cols = np.fromiter(itertools.chain.from_iterable(columns_per_row), dtype=np.int64,
                       count=int(lengths.sum()))
    flat = bits.reshape(-1)
    np.bitwise_xor.at(flat, rows * n_words + (cols >> 6),
                      np.left_shift(np.uint64(1), (cols & 63).astype(np.uint64)))
    return bits


def solve(bits, data, hdpc, hdata, n_cols):
    """Solve the mixed binary/GF(256) system for ``n_cols`` unknown symbols.

    ``bits`` (packed binary rows) and ``data`` hold one row per binary
    equation; ``hdpc``/``hdata`` are the dense GF(256) equations. All four
    arrays are consumed. Returns the (n_cols, T) solution, or None when the
    system does not have full column rank.
    """
    n_bytes = data.shape[1]
    padded = -(-n_bytes // 8) * 8
    data8 = np.zeros((data.shape[0], padded), dtype=np.uint8)
    data8[:, :n_bytes] = data
    hdata8 = np.zeros((hdata.shape[0], padded), dtype=np.uint8)
    hdata8[:, :n_bytes] = hdata
    ok, out = _solve_kernel(bits, data8, data8.view(np.uint64), hdpc, hdata8,
                            n_cols, MUL_TABLE, INV_TABLE)
    if not ok:
        return None
    return out[:, :n_bytes]
