"""FEC packet wire format, paced block transmission and receiver-side collection.

Wire format (big-endian, 12-byte header followed by exactly ``t`` payload bytes)::

    0      1      2        4                 8      10     12
    +------+------+--------+-----------------+------+------+-----------
    | ver  | flags|  sbn   | esi (u24 in u32)|  k   |  t   | symbol ...
    +------+------+--------+-----------------+------+------+-----------

The top byte of the 32-bit ESI field is reserved and must be zero.
"""

from __future__ import annotations

import heapq
import ipaddress
import logging
import math
import queue
import socket
import struct
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .codec import (CodecParams, DecodeOutcome, EncodingSymbol, decode_block, derive_params,
                    esi_to_isi)
from .framing import deframe_full, deframe_partial

log = logging.getLogger(__name__)

VERSION = 1
HEADER = struct.Struct(">BBHIHH")
HEADER_SIZE = HEADER.size
MAX_ESI = 1 << 24


class PacketParseError(ValueError):
    pass


@dataclass(frozen=True)
class FecPacketHeader:
    sbn: int
    esi: int
    k: int
    t: int
    version: int = VERSION
    flags: int = 0


def serialize_fec_packet(header: FecPacketHeader, symbol: bytes) -> bytes:
    if len(symbol) != header.t:
        raise ValueError(f"symbol has {len(symbol)} bytes, header says t={header.t}")
    if not 0 <= header.esi < MAX_ESI:
        raise ValueError(f"esi {header.esi} does not fit in 24 bits")
    return HEADER.pack(header.version, header.flags, header.sbn & 0xFFFF, header.esi,
                       header.k, header.t) + bytes(symbol)


def parse_fec_packet(datagram: bytes) -> tuple[FecPacketHeader, bytes]:
    if len(datagram) < HEADER_SIZE:
        raise PacketParseError(f"truncated datagram: {len(datagram)} < {HEADER_SIZE} header bytes")
    version, flags, sbn, esi, k, t = HEADER.unpack_from(datagram)
    if version != VERSION:
        raise PacketParseError(f"version mismatch: got {version}, expected {VERSION}")
    if esi >= MAX_ESI:
        raise PacketParseError("reserved high byte of the esi field is nonzero")
    if len(datagram) - HEADER_SIZE != t:
        raise PacketParseError(
            f"length mismatch: payload is {len(datagram) - HEADER_SIZE} bytes, header says t={t}")
    return FecPacketHeader(sbn, esi, k, t, version, flags), bytes(datagram[HEADER_SIZE:])


def sbn_precedes(a: int, b: int) -> bool:
    """Serial-number comparison of 16-bit block numbers: True if ``a`` is older than ``b``."""
    d = (b - a) & 0xFFFF
    return 0 < d < 0x8000


def default_spread(buffering_time: float, window: float) -> float:
    return max(buffering_time - window - 1.0, window)


@dataclass(frozen=True)
class SessionConfig:
    destination: tuple[str, int] = ("239.255.0.1", 5004)
    pacing_rate: float = 13e6 / 8
    spread: float = 8.0
    deadline: float = 10.0
    code_rate: float = 0.2

    def __post_init__(self):
        if not 0 < self.code_rate <= 1:
            raise ValueError(f"code_rate {self.code_rate} outside (0, 1]")
        if not 0 <= self.spread < self.deadline:
            raise ValueError(f"spread {self.spread} must be below the deadline {self.deadline}")
        if self.pacing_rate <= 0:
            raise ValueError("pacing_rate must be positive")


@dataclass(frozen=True)
class TxEvent:
    time: float
    sbn: int
    esi: int
    datagram: bytes


def block_datagrams(params: CodecParams, sbn: int, symbols: Sequence[EncodingSymbol]) -> list[tuple[int, bytes]]:
    out = []
    for sym in symbols:
        esi = sym.isi if sym.isi < params.K else sym.isi - params.padding
        out.append((esi, serialize_fec_packet(FecPacketHeader(sbn, esi, params.K, params.T), sym.data)))
    return out


def send_block(session: SessionConfig, params: CodecParams, sbn: int,
               symbols: Sequence[EncodingSymbol], start: float) -> list[TxEvent]:
    """Schedule one block's packets evenly over ``session.spread`` from ``start``.

    Symbols go out in the order given (source before repair, as produced by
    ``encode_block``). Spacing never drops below one datagram's airtime at
    the pacing rate.
    """
    if not symbols:
        raise ValueError("cannot send an empty block")
    grams = block_datagrams(params, sbn, symbols)
    n = len(grams)
    gap = max(session.spread / n, (HEADER_SIZE + params.T) / session.pacing_rate)
    return [TxEvent(start + i * gap, sbn, esi, d) for i, (esi, d) in enumerate(grams)]


def pace(events: Iterable[TxEvent], rate: float) -> list[TxEvent]:
    """Serialize events from any number of blocks onto one link of ``rate`` bytes/s.

    Events are taken in order of desired time; each goes out no earlier than
    the previous one has finished, so any window of length D carries at most
    ``rate * D`` bytes plus one datagram.
    """
    ordered = sorted(events, key=lambda e: (e.time, e.sbn, e.esi))
    times = pace_times(np.array([e.time for e in ordered]),
                       np.array([len(e.datagram) for e in ordered]), rate)
    return [TxEvent(float(t), e.sbn, e.esi, e.datagram) for t, e in zip(times, ordered)]


def pace_times(desired: np.ndarray, sizes: np.ndarray, rate: float) -> np.ndarray:
    """Emission times on a link of ``rate`` bytes/s for packets in desired-time order.

    Solves t[i] = max(desired[i], t[i-1] + sizes[i-1] / rate) in closed form.
    """
    desired = np.asarray(desired, dtype=float)
    if desired.size == 0:
        return desired.copy()
    airtime = np.asarray(sizes, dtype=float) / rate
    busy = np.concatenate(([0.0], np.cumsum(airtime)[:-1]))
    return busy + np.maximum.accumulate(desired - busy)


class LoopbackLink:
    """In-process link: records ``(time, datagram)`` pairs instead of sending them."""

    def __init__(self):
        self.sent: list[tuple[float, bytes]] = []

    def send(self, datagram: bytes, now: float) -> None:
        self.sent.append((now, datagram))

    def close(self) -> None:
        pass


class UdpLink:
    def __init__(self, destination: tuple[str, int], ttl: int = 1, sock: socket.socket | None = None):
        self.destination = destination
        self.sock = sock or open_sender_socket(ttl=ttl)

    def send(self, datagram: bytes, now: float) -> None:
        self.sock.sendto(datagram, self.destination)

    def close(self) -> None:
        self.sock.close()


def open_sender_socket(ttl: int = 1) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
    sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, ttl)
    return sock


def open_receiver_socket(group: str, port: int, interface: str = "0.0.0.0") -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    if ipaddress.ip_address(group).is_multicast:
        sock.bind(("", port))
        mreq = struct.pack("4s4s", socket.inet_aton(group), socket.inet_aton(interface))
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
    else:
        sock.bind((group, port))
    return sock


def transmit(events: Sequence[TxEvent], link, clock: Callable[[], float] = time.monotonic,
             sleep: Callable[[float], None] = time.sleep) -> int:
    """Send events in real time relative to the first event; return the send-error count.

    A failed send is logged and counted; the session carries on.
    """
    if not events:
        return 0
    t0 = clock() - events[0].time
    errors = 0
    for e in events:
        delay = t0 + e.time - clock()
        if delay > 0:
            sleep(delay)
        try:
            link.send(e.datagram, e.time)
        except OSError as exc:
            errors += 1
            log.warning("send failed for sbn=%d esi=%d: %s", e.sbn, e.esi, exc)
    return errors


@dataclass
class BlockReceiveState:
    sbn: int
    first_seen: float
    k: int
    t: int
    params: CodecParams
    received: dict[int, bytes] = field(default_factory=dict)
    decode_attempts: int = 0

    @property
    def R(self) -> int:
        """Received symbols plus the K' - K padding symbols the decoder supplies itself."""
        return len(self.received) + self.params.padding

    def source_received(self) -> dict[int, bytes]:
        return {e: d for e, d in self.received.items() if e < self.k}


@dataclass(frozen=True)
class BlockEvent:
    """Terminal event for one block: ``success`` (all packets) or ``partial``."""

    sbn: int
    kind: str
    time: float
    k: int
    t: int
    received: int
    source_received: int
    packets: list[bytes]
    decode_attempts: int

    @property
    def decoded(self) -> bool:
        return self.kind == "success"


Decoder = Callable[[CodecParams, dict], DecodeOutcome]


class BlockCollector:
    """Receiver-side per-block collection with decode gating and deadlines.

    Feed datagrams with :meth:`on_datagram` in arrival order. A block is
    decoded once its R reaches K' (and again on each later packet if a decode
    fails); a block that has not decoded ``deadline`` seconds after its first
    packet is delivered partially. At most ``max_states`` blocks are open at
    once; opening another force-finalizes the oldest.
    """

    def __init__(self, deadline: float, window: float = 1.0, max_states: int | None = None,
                 decoder: Decoder = decode_block):
        self.deadline = deadline
        self.max_states = max_states or math.ceil(deadline / window) + 1
        self.decoder = decoder
        self.states: dict[int, BlockReceiveState] = {}
        self._finished: OrderedDict[int, None] = OrderedDict()
        self.parse_errors = 0
        self.late_packets = 0

    def on_datagram(self, datagram: bytes, now: float) -> list[BlockEvent]:
        try:
            header, payload = parse_fec_packet(datagram)
        except PacketParseError as exc:
            self.parse_errors += 1
            log.debug("dropping datagram: %s", exc)
            return self.advance(now)
        return self.on_packet(header, payload, now)

    def on_packet(self, header: FecPacketHeader, payload: bytes, now: float) -> list[BlockEvent]:
        events = self.advance(now)
        sbn = header.sbn
        if sbn in self._finished:
            self.late_packets += 1
            return events
        state = self.states.get(sbn)
        if state is None:
            try:
                params = derive_params(header.k, header.t)
            except ValueError:
                self.parse_errors += 1
                return events
            if len(self.states) >= self.max_states:
                oldest = min(self.states.values(), key=lambda s: (s.first_seen, s.sbn))
                events.append(self._finalize(oldest, now))
            state = BlockReceiveState(sbn, now, header.k, header.t, params)
            self.states[sbn] = state
        elif (header.k, header.t) != (state.k, state.t):
            self.parse_errors += 1
            return events
        if header.esi in state.received:
            return events
        state.received[header.esi] = payload
        if state.R >= state.params.K_prime:
            state.decode_attempts += 1
            received = {esi_to_isi(state.params, e): d for e, d in state.received.items()}
            outcome = self.decoder(state.params, received)
            if outcome.ok:
                packets = deframe_full(outcome.source)
                events.append(self._close(state, "success", now, packets))
        return events

    def advance(self, now: float) -> list[BlockEvent]:
        """Finalize every block whose deadline has passed by ``now``."""
        due = [s for s in self.states.values() if s.first_seen + self.deadline <= now]
        due.sort(key=lambda s: (s.first_seen, s.sbn))
        return [self._finalize(s, s.first_seen + self.deadline) for s in due]

    def flush(self) -> list[BlockEvent]:
        due = sorted(self.states.values(), key=lambda s: (s.first_seen, s.sbn))
        return [self._finalize(s, s.first_seen + self.deadline) for s in due]

    def _finalize(self, state: BlockReceiveState, when: float) -> BlockEvent:
        return self._close(state, "partial", when,
                           deframe_partial(state.source_received(), state.t))

    def _close(self, state: BlockReceiveState, kind: str, when: float,
               packets: list[bytes]) -> BlockEvent:
        del self.states[state.sbn]
        self._finished[state.sbn] = None
        while len(self._finished) > 4 * self.max_states:
            self._finished.popitem(last=False)
        return BlockEvent(state.sbn, kind, when, state.k, state.t, len(state.received),
                          len(state.source_received()), packets, state.decode_attempts)


def receiver_collect(arrivals: Iterable[tuple[float, bytes]], deadline: float,
                     window: float = 1.0, decoder: Decoder = decode_block) -> list[BlockEvent]:
    """Run a :class:`BlockCollector` over ``(time, datagram)`` arrivals and flush it."""
    collector = BlockCollector(deadline, window, decoder=decoder)
    events: list[BlockEvent] = []
    for now, datagram in arrivals:
        events.extend(collector.on_datagram(datagram, now))
    events.extend(collector.flush())
    return events


def capture(sock: socket.socket, q: "queue.Queue[tuple[float, bytes]]", stop: threading.Event,
            clock: Callable[[], float] = time.monotonic, bufsize: int = 65536) -> int:
    """Read datagrams into ``q`` until ``stop`` is set; a full queue drops the newest packet.

    Returns the number of packets dropped on overflow.
    """
    sock.settimeout(0.2)
    dropped = 0
    while not stop.is_set():
        try:
            data = sock.recv(bufsize)
        except socket.timeout:
            continue
        except OSError:
            break
        try:
            q.put_nowait((clock(), data))
        except queue.Full:
            dropped += 1
    return dropped


def run_receiver(sock: socket.socket, collector: BlockCollector, duration: float,
                 queue_capacity: int = 4096,
                 on_event: Callable[[BlockEvent], None] = lambda e: None,
                 clock: Callable[[], float] = time.monotonic) -> dict:
    """Live receive loop: capture thread feeding a bounded queue, processed here."""
    q: queue.Queue = queue.Queue(maxsize=queue_capacity)
    stop = threading.Event()
    result = {}

    def _run():
        result["dropped"] = capture(sock, q, stop, clock)

    th = threading.Thread(target=_run, daemon=True)
    th.start()
    end = clock() + duration
    try:
        while clock() < end:
            try:
                now, data = q.get(timeout=0.1)
            except queue.Empty:
                for ev in collector.advance(clock()):
                    on_event(ev)
                continue
            for ev in collector.on_datagram(data, now):
                on_event(ev)
    finally:
        stop.set()
        th.join()
    while True:
        try:
            now, data = q.get_nowait()
        except queue.Empty:
            break
        for ev in collector.on_datagram(data, now):
            on_event(ev)
    for ev in collector.flush():
        on_event(ev)
    return {"queue_dropped": result.get("dropped", 0), "parse_errors": collector.parse_errors,
            "late_packets": collector.late_packets}


def merge_schedules(schedules: Iterable[Sequence[TxEvent]]) -> Iterator[TxEvent]:
    return heapq.merge(*schedules, key=lambda e: (e.time, e.sbn, e.esi))
