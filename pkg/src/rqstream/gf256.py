"""Arithmetic in GF(256) with the reducing polynomial x^8 + x^4 + x^3 + x^2 + 1.

Tables are built once at import time and marked read-only.
"""

import numpy as np

POLY = 0x11D

OCT_EXP = np.zeros(510, dtype=np.uint8)
OCT_LOG = np.zeros(256, dtype=np.int32)

_x = 1
for _i in range(255):
    OCT_EXP[_i] = _x
    OCT_LOG[_x] = _i
    _x <<= 1
    if _x & 0x100:
        _x ^= POLY
OCT_EXP[255:510] = OCT_EXP[0:255]
del _x, _i

_a = np.arange(256)
_log_sum = OCT_LOG[_a][:, None] + OCT_LOG[_a][None, :]
MUL_TABLE = OCT_EXP[_log_sum].astype(np.uint8)
MUL_TABLE[0, :] = 0
MUL_TABLE[:, 0] = 0

INV_TABLE = np.zeros(256, dtype=np.uint8)
INV_TABLE[1:] = OCT_EXP[(255 - OCT_LOG[1:]) % 255]

for _t in (OCT_EXP, OCT_LOG, MUL_TABLE, INV_TABLE):
    _t.setflags(write=False)
del _a, _log_sum, _t


def mul(a: int, b: int) -> int:
    return int(MUL_TABLE[a, b])


def div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("division by zero in GF(256)")
    return int(MUL_TABLE[a, INV_TABLE[b]])


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("zero has no inverse in GF(256)")
    return int(INV_TABLE[a])


def alpha_pow(n: int) -> int:
    """Return alpha**n where alpha = 2 generates the multiplicative group."""
    return int(OCT_EXP[n % 255])


def scale(vec: np.ndarray, c: int) -> np.ndarray:
    """Multiply every octet of ``vec`` by the scalar ``c``."""
    return MUL_TABLE[c][vec]


def addmul(dst: np.ndarray, src: np.ndarray, c: int) -> None:
    """In place: dst += c * src."""
    if c == 0:
        return
    if c == 1:
        dst ^= src
    else:
        dst ^= MUL_TABLE[c][src]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over GF(256) for uint8 arrays of shape (m, n) and (n, p)."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.uint8)
    for j in range(a.shape[1]):
        col = a[:, j]
        nz = np.nonzero(col)[0]
        if nz.size:
            out[nz] ^= MUL_TABLE[col[nz][:, None], b[j][None, :]]
    return out
