"""Systematic RaptorQ block codec (RFC 6330, one sub-block, alignment 1).

Symbols are identified by their internal symbol identifier (ISI). ISIs below
K' address source and padding positions; ISIs from K' upward are repair
symbols. Use :func:`esi_to_isi` to convert the on-the-wire encoding symbol
identifiers, which skip the padding positions.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import gf256
from ._solver import pack_rows, solve
from ._tables import RANDOM_TABLES, SYSTEMATIC_TABLE

MAX_SOURCE_SYMBOLS = 56403
MAX_ISI = 1 << 24

_V0, _V1, _V2, _V3 = RANDOM_TABLES
_K_PRIMES = [row[0] for row in SYSTEMATIC_TABLE]
_DEGREE_CDF = (
    0, 5243, 529531, 704294, 791675, 844104, 879057, 904023, 922747, 937311,
    948962, 958494, 966438, 973160, 978921, 983914, 988283, 992138, 995565,
    998631, 1001391, 1003887, 1006157, 1008229, 1010129, 1011876, 1013490,
    1014983, 1016370, 1017662, 1048576,
)


class ParameterError(ValueError):
    """Raised for block or symbol parameters outside the code's limits."""


class SolverError(RuntimeError):
    """The encoder's constraint system was singular (an implementation bug)."""


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


def _next_prime(n: int) -> int:
    while not _is_prime(n):
        n += 1
    return n


@dataclass(frozen=True)
class CodecParams:
    """Per-block code parameters.

    ``J`` is the systematic index and ``W`` the number of LT symbols; both come
    from the same table row as ``S`` and ``H``.
    """

    K: int
    K_prime: int
    S: int
    H: int
    L: int
    T: int
    J: int = field(repr=False)
    W: int = field(repr=False)

    @property
    def P(self) -> int:
        return self.L - self.W

    @property
    def P1(self) -> int:
        return _next_prime(self.P)

    @property
    def B(self) -> int:
        return self.W - self.S

    @property
    def U(self) -> int:
        return self.P - self.H

    @property
    def padding(self) -> int:
        return self.K_prime - self.K


def derive_params(K: int, T: int) -> CodecParams:
    """Look up the code parameters for a block of ``K`` symbols of ``T`` bytes."""
    if not 1 <= K <= MAX_SOURCE_SYMBOLS:
        raise ParameterError(
            f"K={K} outside 1..{MAX_SOURCE_SYMBOLS} (maximum source symbols per block)")
    if T < 1:
        raise ParameterError(f"symbol size T={T} must be at least 1 byte")
    k_prime, j, s, h, w = SYSTEMATIC_TABLE[bisect.bisect_left(_K_PRIMES, K)]
    return CodecParams(K=K, K_prime=k_prime, S=s, H=h, L=k_prime + s + h, T=T, J=j, W=w)


def esi_to_isi(params: CodecParams, esi: int) -> int:
    return esi if esi < params.K else esi + params.padding


def isi_to_esi(params: CodecParams, isi: int) -> int:
    if params.K <= isi < params.K_prime:
        raise ParameterError(f"ISI {isi} is a padding position and has no ESI")
    return isi if isi < params.K else isi - params.padding


def rand(y: int, i: int, m: int) -> int:
    """Pseudo-random number in [0, m) from the standard's four fixed tables."""
    return (_V0[(y + i) & 0xFF] ^ _V1[((y >> 8) + i) & 0xFF]
            ^ _V2[((y >> 16) + i) & 0xFF] ^ _V3[((y >> 24) + i) & 0xFF]) % m


def degree(v: int, W: int) -> int:
    for d in range(1, len(_DEGREE_CDF)):
        if v < _DEGREE_CDF[d]:
            return min(d, W - 2)
    raise ValueError(f"v={v} out of range for the degree generator")


def lt_tuple(params: CodecParams, isi: int) -> tuple[int, int, int, int, int, int]:
    """Return ``(d, a, b, d1, a1, b1)`` for the encoding symbol with this ISI."""
    A = 53591 + params.J * 997
    if A % 2 == 0:
        A += 1
    B = 10267 * (params.J + 1)
    y = (B + isi * A) & 0xFFFFFFFF
    v = rand(y, 0, 1 << 20)
    d = degree(v, params.W)
    a = 1 + rand(y, 1, params.W - 1)
    b = rand(y, 2, params.W)
    d1 = 2 + rand(isi, 3, 2) if d < 4 else 2
    P1 = params.P1
    a1 = 1 + rand(isi, 4, P1 - 1)
    b1 = rand(isi, 5, P1)
    return d, a, b, d1, a1, b1


@lru_cache(maxsize=1 << 16)
def _lt_columns_cached(k_prime: int, isi: int) -> tuple[int, ...]:
    params = derive_params(k_prime, 1)
    d, a, b, d1, a1, b1 = lt_tuple(params, isi)
    W, P, P1 = params.W, params.P, params.P1
    cols = [b]
    for _ in range(1, d):
        b = (b + a) % W
        cols.append(b)
    while b1 >= P:
        b1 = (b1 + a1) % P1
    cols.append(W + b1)
    for _ in range(1, d1):
        b1 = (b1 + a1) % P1
        while b1 >= P:
            b1 = (b1 + a1) % P1
        cols.append(W + b1)
    return tuple(cols)


def lt_columns(params: CodecParams, isi: int) -> tuple[int, ...]:
    """Intermediate-symbol indices XORed together to form symbol ``isi``."""
    if not 0 <= isi < MAX_ISI:
        raise ParameterError(f"ISI {isi} outside the 24-bit range")
    return _lt_columns_cached(params.K_prime, isi)


def _ldpc_rows(params: CodecParams) -> list[list[int]]:
    S, B, P, W = params.S, params.B, params.P, params.W
    rows: list[list[int]] = [[B + i] for i in range(S)]
    for i in range(B):
        a = 1 + i // S
        b = i % S
        rows[b].append(i)
        b = (b + a) % S
        rows[b].append(i)
        b = (b + a) % S
        rows[b].append(i)
    for i in range(S):
        rows[i].append(W + i % P)
        rows[i].append(W + (i + 1) % P)
    # Columns hit an even number of times cancel.
    out = []
    for r in rows:
        cols, counts = np.unique(r, return_counts=True)
        out.append([int(c) for c, n in zip(cols, counts) if n % 2])
    return out


def _hdpc_block(params: CodecParams) -> np.ndarray:
    """The H x L block [MT * GAMMA | I_H] in GF(256)."""
    H, L = params.H, params.L
    n = params.K_prime + params.S
    mt = np.zeros((H, n), dtype=np.uint8)
    for j in range(n - 1):
        r1 = rand(j + 1, 6, H)
        r2 = (r1 + rand(j + 1, 7, H - 1) + 1) % H
        mt[r1, j] = 1
        mt[r2, j] = 1
    mt[:, n - 1] = [gf256.alpha_pow(i) for i in range(H)]
    # GAMMA[i, j] = alpha^(i-j) for i >= j, so column j of MT*GAMMA is
    # MT[:, j] + alpha * (column j+1).
    out = np.zeros((H, L), dtype=np.uint8)
    acc = mt[:, n - 1].copy()
    out[:, n - 1] = acc
    times_alpha = gf256.MUL_TABLE[2]
    for j in range(n - 2, -1, -1):
        acc = mt[:, j] ^ times_alpha[acc]
        out[:, j] = acc
    out[np.arange(H), n + np.arange(H)] = 1
    return out


@dataclass(frozen=True)
class _Precode:
    params: CodecParams
    ldpc: tuple[tuple[int, ...], ...]
    hdpc: np.ndarray


@lru_cache(maxsize=64)
def _precode(k_prime: int) -> _Precode:
    params = derive_params(k_prime, 1)
    hdpc = _hdpc_block(params)
    hdpc.setflags(write=False)
    return _Precode(params, tuple(tuple(r) for r in _ldpc_rows(params)), hdpc)


@dataclass(frozen=True)
class ConstraintMatrix:
    """Dense L x L constraint matrix: S LDPC rows, H HDPC rows, K' LT rows."""

    matrix: np.ndarray
    S: int
    H: int
    K_prime: int

    @property
    def L(self) -> int:
        return self.matrix.shape[0]

    @property
    def ldpc_rows(self) -> np.ndarray:
        return self.matrix[:self.S]

    @property
    def hdpc_rows(self) -> np.ndarray:
        return self.matrix[self.S:self.S + self.H]

    @property
    def lt_rows(self) -> np.ndarray:
        return self.matrix[self.S + self.H:]


def build_constraint_matrix(params: CodecParams) -> ConstraintMatrix:
    pre = _precode(params.K_prime)
    L = params.L
    a = np.zeros((L, L), dtype=np.uint8)
    for i, cols in enumerate(pre.ldpc):
        a[i, list(cols)] = 1
    a[params.S:params.S + params.H] = pre.hdpc
    base = params.S + params.H
    for isi in range(params.K_prime):
        a[base + isi, list(lt_columns(params, isi))] = 1
    a.setflags(write=False)
    return ConstraintMatrix(a, params.S, params.H, params.K_prime)


@dataclass(frozen=True)
class EncodingSymbol:
    isi: int
    data: bytes

    def __post_init__(self):
        if not 0 <= self.isi < MAX_ISI:
            raise ParameterError(f"ISI {self.isi} outside the 24-bit range")


@dataclass(frozen=True)
class IntermediateBlock:
    params: CodecParams
    symbols: np.ndarray  # (L, T) uint8


class DecodeStatus(enum.Enum):
    SUCCESS = "success"
    INSUFFICIENT_SYMBOLS = "insufficient_symbols"
    RANK_DEFICIENT = "rank_deficient"


@dataclass(frozen=True)
class DecodeOutcome:
    status: DecodeStatus
    source: list[bytes] | None
    overhead_used: int

    @property
    def ok(self) -> bool:
        return self.status is DecodeStatus.SUCCESS


def _as_symbols(source, count: int, T: int) -> np.ndarray:
    if isinstance(source, np.ndarray):
        arr = np.ascontiguousarray(source, dtype=np.uint8)
    else:
        source = list(source)
        if any(len(s) != T for s in source):
            raise ParameterError(f"every symbol must be exactly T={T} bytes")
        arr = np.frombuffer(b"".join(bytes(s) for s in source), dtype=np.uint8)
        arr = arr.reshape(len(source), T) if source else arr.reshape(0, T)
    if arr.shape != (count, T):
        raise ParameterError(f"expected {count} symbols of {T} bytes, got shape {arr.shape}")
    return arr


def _solve_system(params: CodecParams, isis: Sequence[int], data: np.ndarray):
    pre = _precode(params.K_prime)
    rows = list(pre.ldpc) + [lt_columns(params, i) for i in isis]
    bits = pack_rows(rows, params.L)
    rhs = np.zeros((len(rows), params.T), dtype=np.uint8)
    rhs[params.S:] = data
    hdpc = np.array(pre.hdpc)
    hdata = np.zeros((params.H, params.T), dtype=np.uint8)
    return solve(bits, rhs, hdpc, hdata, params.L)


def compute_intermediate(params: CodecParams, source) -> IntermediateBlock:
    """Solve for the L intermediate symbols whose first K encodings are ``source``."""
    src = _as_symbols(source, params.K, params.T)
    rhs = np.zeros((params.K_prime, params.T), dtype=np.uint8)
    rhs[:params.K] = src
    c = _solve_system(params, range(params.K_prime), rhs)
    if c is None:
        raise SolverError(f"constraint matrix singular for K'={params.K_prime}")
    c.setflags(write=False)
    return IntermediateBlock(params, c)


def generate_encoding_symbol(inter: IntermediateBlock, isi: int) -> EncodingSymbol:
    cols = lt_columns(inter.params, isi)
    return EncodingSymbol(isi, np.bitwise_xor.reduce(inter.symbols[list(cols)], axis=0).tobytes())


def repair_count_for(K: int, code_rate: float) -> int:
    """Repair symbols needed so that K / N equals ``code_rate`` (N rounded up)."""
    if not 0 < code_rate <= 1:
        raise ParameterError(f"code rate {code_rate} outside (0, 1]")
    # Rounding guards against K / 0.2 landing a hair above an integer.
    return math.ceil(round(K / code_rate, 9)) - K


def encode_block(params: CodecParams, source, repair_count: int) -> list[EncodingSymbol]:
    """Source symbols (ISI 0..K-1) followed by ``repair_count`` repair symbols."""
    if repair_count < 0:
        raise ParameterError("repair_count must be non-negative")
    if params.K_prime + repair_count > MAX_ISI:
        raise ParameterError(f"K' + repair_count exceeds {MAX_ISI} encoding symbols")
    src = _as_symbols(source, params.K, params.T)
    out = [EncodingSymbol(i, src[i].tobytes()) for i in range(params.K)]
    if repair_count:
        inter = compute_intermediate(params, src)
        out.extend(generate_encoding_symbol(inter, params.K_prime + r)
                   for r in range(repair_count))
    return out


def decode_block(params: CodecParams,
                 received: Mapping[int, bytes] | Iterable[tuple[int, bytes]]) -> DecodeOutcome:
    """Recover the K source symbols from received ``(isi, data)`` pairs.

    Padding positions count as received, so R = len(received) + K' - K. No
    linear algebra is attempted while R < K'.
    """
    items = dict(received.items() if isinstance(received, Mapping) else received)
    for isi, sym in items.items():
        if not 0 <= isi < MAX_ISI:
            raise ParameterError(f"ISI {isi} outside the 24-bit range")
        if params.K <= isi < params.K_prime:
            raise ParameterError(f"ISI {isi} is a padding position and is never transmitted")
        if len(sym) != params.T:
            raise ParameterError(f"symbol {isi} has {len(sym)} bytes, expected T={params.T}")
    R = len(items) + params.padding
    overhead = R - params.K_prime
    if R < params.K_prime:
        return DecodeOutcome(DecodeStatus.INSUFFICIENT_SYMBOLS, None, overhead)
    if all(i in items for i in range(params.K)):
        return DecodeOutcome(DecodeStatus.SUCCESS,
                             [bytes(items[i]) for i in range(params.K)], overhead)

    received_isis = sorted(items)
    isis = received_isis + list(range(params.K, params.K_prime))
    data = np.zeros((len(isis), params.T), dtype=np.uint8)
    data[:len(items)] = np.frombuffer(
        b"".join(bytes(items[i]) for i in received_isis), dtype=np.uint8
    ).reshape(len(items), params.T)
    c = _solve_system(params, isis, data)
    if c is None:
        return DecodeOutcome(DecodeStatus.RANK_DEFICIENT, None, overhead)
    source = []
    for i in range(params.K):
        sym = items.get(i)
        if sym is None:
            sym = np.bitwise_xor.reduce(c[list(lt_columns(params, i))], axis=0).tobytes()
        source.append(bytes(sym))
    return DecodeOutcome(DecodeStatus.SUCCESS, source, overhead)
