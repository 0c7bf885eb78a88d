"""Packetization of a media packet stream into fixed-size source symbols.

Each media packet is stored as a record ``[u16 big-endian length][payload]``.
Records are concatenated and the buffer is cut into T-byte symbols. Blocks
are cut at packet boundaries and the last symbol is zero-padded, so a
``0x0000`` length prefix marks the end of the data inside a block.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, Mapping

MAX_PACKET = 0xFFFF
DEFAULT_MAX_SOURCE_SYMBOLS = 8192
_PREFIX = struct.Struct(">H")


class FramingError(ValueError):
    """Malformed framing: oversize packets, empty blocks, corrupt prefixes."""


@dataclass(frozen=True)
class BlockPayload:
    K: int
    data: bytes
    packet_count: int
    T: int

    def symbols(self) -> list[bytes]:
        T = self.T
        return [self.data[i * T:(i + 1) * T] for i in range(self.K)]


class BlockBuilder:
    """Accumulates framed media packets until a block is cut.

    ``window`` and ``max_source_symbols`` drive :meth:`should_cut` in live
    mode; :meth:`cut_block` can be called at any time.
    """

    def __init__(self, T: int, window: float = 1.0,
                 max_source_symbols: int = DEFAULT_MAX_SOURCE_SYMBOLS):
        if T < 1:
            raise FramingError(f"symbol size T={T} must be at least 1 byte")
        self.T = T
        self.window = window
        self.max_source_symbols = max_source_symbols
        self._buf = bytearray()
        self._count = 0
        self.first_packet_time: float | None = None

    def __len__(self) -> int:
        return len(self._buf)

    @property
    def packet_count(self) -> int:
        return self._count

    @property
    def available_symbols(self) -> int:
        return len(self._buf) // self.T

    def push_media_packet(self, packet: bytes, now: float | None = None) -> int:
        """Append one media packet; return the number of complete symbols buffered."""
        n = len(packet)
        if not 1 <= n <= MAX_PACKET:
            raise FramingError(f"media packet of {n} bytes outside 1..{MAX_PACKET}")
        if self._count == 0:
            self.first_packet_time = now
        self._buf += _PREFIX.pack(n)
        self._buf += packet
        self._count += 1
        return self.available_symbols

    def symbols_if_added(self, size: int) -> int:
        return -(-(len(self._buf) + 2 + size) // self.T)

    def should_cut(self, now: float, next_size: int | None = None) -> bool:
        """Live-mode trigger: window elapsed, or the next packet would exceed the K cap."""
        if self._count == 0:
            return False
        if self.first_packet_time is not None and now - self.first_packet_time >= self.window:
            return True
        if next_size is not None:
            return self.symbols_if_added(next_size) > self.max_source_symbols
        return -(-len(self._buf) // self.T) >= self.max_source_symbols

    def cut_block(self) -> BlockPayload:
        if self._count == 0:
            raise FramingError("cannot cut an empty block")
        K = -(-len(self._buf) // self.T)
        data = bytes(self._buf) + bytes(K * self.T - len(self._buf))
        block = BlockPayload(K=K, data=data, packet_count=self._count, T=self.T)
        self._buf = bytearray()
        self._count = 0
        self.first_packet_time = None
        return block


def _parse(buf: bytes, limit: int, strict: bool) -> list[bytes]:
    packets = []
    pos = 0
    while pos + 2 <= limit:
        (n,) = _PREFIX.unpack_from(buf, pos)
        if n == 0:
            break
        end = pos + 2 + n
        if end > limit:
            if strict:
                raise FramingError(
                    f"length prefix {n} at offset {pos} runs past the block end")
            break
        packets.append(bytes(buf[pos + 2:end]))
        pos = end
    return packets


def deframe_full(symbols: Iterable[bytes] | bytes, T: int | None = None) -> list[bytes]:
    """Parse every media packet out of a complete block of source symbols."""
    buf = symbols if isinstance(symbols, (bytes, bytearray)) else b"".join(symbols)
    return _parse(buf, len(buf), strict=True)


def deframe_partial(received: Mapping[int, bytes], T: int) -> list[bytes]:
    """Deliver the packets recoverable from a subset of source symbols.

    Parsing runs from offset 0 over the contiguous run of received symbols
    and stops at the first missing symbol, since later record boundaries
    cannot be located without the bytes before them.
    """
    run = 0
    while run in received:
        run += 1
    if run == 0:
        return []
    buf = b"".join(bytes(received[i]) for i in range(run))
    return _parse(buf, len(buf), strict=False)


def read_media_trace(fh: BinaryIO) -> Iterator[bytes]:
    """Yield media packets from a ``[u16 length][payload]`` record stream."""
    while True:
        head = fh.read(2)
        if not head:
            return
        if len(head) < 2:
            raise FramingError("truncated length prefix at end of media trace")
        (n,) = _PREFIX.unpack(head)
        payload = fh.read(n)
        if len(payload) < n or n == 0:
            raise FramingError(f"bad media trace record of declared length {n}")
        yield payload


def write_media_trace(fh: BinaryIO, packets: Iterable[bytes]) -> int:
    count = 0
    for p in packets:
        if not 1 <= len(p) <= MAX_PACKET:
            raise FramingError(f"media packet of {len(p)} bytes outside 1..{MAX_PACKET}")
        fh.write(_PREFIX.pack(len(p)))
        fh.write(p)
        count += 1
    return count
