"""End-to-end streaming experiments over a simulated link.

One experiment generates a media stream, cuts it into blocks, encodes each
block, schedules the packets on a paced link, applies channel loss and the
optional receiver-overload queue, and runs the real receiver collector on
the surviving datagrams. Metrics follow the block-level definitions:

* ``per_before`` -- fraction of a block's K source packets that did not arrive;
* ``per_after``  -- 0 when the block decoded, otherwise ``per_before``;
* ``success_rate`` -- decoded blocks over all blocks sent. Blocks never seen
  at the receiver count as failures with both PERs equal to 1.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binomtest

from . import channel as ch
from .codec import (CodecParams, DecodeOutcome, compute_intermediate, derive_params,
                    esi_to_isi, generate_encoding_symbol, repair_count_for)
from .framing import BlockBuilder, read_media_trace
from .transport import (HEADER_SIZE, BlockCollector, BlockEvent, FecPacketHeader,
                        default_spread, pace_times, serialize_fec_packet)

log = logging.getLogger(__name__)

MCS_DATA_RATES_MBPS = (6.5, 13.0, 19.5, 26.0, 39.0, 52.0, 58.5, 65.0)
TOLERABLE_PER = 0.01

GRID_SYMBOL_SIZES = (500, 1400)
GRID_BUFFERING_TIMES = (5.0, 10.0)
GRID_CODE_RATES = (0.2, 0.33, 0.66)


def mcs_preset(index: int) -> float:
    """Data rate in Mbps of the 802.11n single-stream 20 MHz / 800 ns GI mode."""
    if not 0 <= index < len(MCS_DATA_RATES_MBPS):
        raise ValueError(f"MCS index {index} outside 0..{len(MCS_DATA_RATES_MBPS) - 1}")
    return MCS_DATA_RATES_MBPS[index]


def mcs_rate_bytes(index: int) -> float:
    return mcs_preset(index) * 1e6 / 8


@dataclass(frozen=True)
class ExperimentConfig:
    T: int = 1400
    code_rate: float = 0.2
    buffering_time: float = 10.0
    window: float = 1.0
    media_rate: float = 98_000.0
    duration: float = 60.0
    channel: ch.LossModel = ch.IIDLoss(0.0)
    receiver: ch.ReceiverModel | None = None
    seed: int = 1
    mcs_index: int = 1
    packet_size: int = 1316
    spread: float | None = None
    # "timeline": one loss process over the link's packet order.
    # "per_block": each block draws its own mask over packet positions, so
    # runs that differ only in code rate see nested received sets.
    mask_mode: str = "timeline"
    media_trace: str | None = None
    max_source_symbols: int = 8192

    def validate(self) -> None:
        problems = []
        if self.T < 1:
            problems.append(f"T={self.T} must be >= 1")
        if not 0 < self.code_rate <= 1:
            problems.append(f"code_rate={self.code_rate} outside (0, 1]")
        if self.buffering_time <= 0 or self.window <= 0:
            problems.append("buffering_time and window must be positive")
        if self.media_rate <= 0 or self.duration <= 0:
            problems.append("media_rate and duration must be positive")
        if not 1 <= self.packet_size <= 0xFFFF:
            problems.append(f"packet_size={self.packet_size} outside 1..65535")
        if not 0 <= self.mcs_index < len(MCS_DATA_RATES_MBPS):
            problems.append(f"mcs_index={self.mcs_index} outside 0..7")
        if not 0 <= self.effective_spread < self.buffering_time:
            problems.append(
                f"spread={self.effective_spread} must be below buffering_time={self.buffering_time}")
        if self.mask_mode not in ("timeline", "per_block"):
            problems.append(f"mask_mode={self.mask_mode!r} not in ('timeline', 'per_block')")
        if self.mask_mode == "per_block" and isinstance(self.channel, ch.TraceLoss):
            problems.append("per_block mask mode needs a stochastic channel, not a trace")
        if problems:
            raise ValueError("invalid experiment config: " + "; ".join(problems))

    @property
    def effective_spread(self) -> float:
        if self.spread is not None:
            return self.spread
        return default_spread(self.buffering_time, self.window)

    @property
    def pacing_rate(self) -> float:
        return mcs_rate_bytes(self.mcs_index)

    def describe(self) -> dict:
        return {
            "T": self.T,
            "CR": self.code_rate,
            "t_b": self.buffering_time,
            "w": self.window,
            "b": self.media_rate,
            "mcs": self.mcs_index,
            "channel": self.channel.describe(),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SentBlock:
    """Sender-side truth for one block."""

    sbn: int
    K: int
    N: int
    packet_count: int
    first_packet: int
    ready_time: float

    @property
    def params(self) -> CodecParams:
        return derive_params(self.K, 1)


@dataclass(frozen=True)
class BlockMetrics:
    sbn: int
    K: int
    R: int
    source_received: int
    decoded: bool
    per_before: float
    per_after: float


def block_metrics(sent: SentBlock, received: Iterable[int],
                  outcome: DecodeOutcome | BlockEvent | None) -> BlockMetrics:
    """Metrics for one block from the sender truth and the received ESIs.

    ``R`` counts received encoding symbols (padding excluded). ``outcome`` is
    None for a block that never reached the receiver.
    """
    if isinstance(outcome, BlockEvent) and outcome.sbn != sent.sbn & 0xFFFF:
        raise ValueError(f"sbn mismatch: block {sent.sbn} vs receiver event {outcome.sbn}")
    esis = set(received)
    if outcome is None:
        return BlockMetrics(sent.sbn, sent.K, len(esis), 0, False, 1.0, 1.0)
    decoded = outcome.decoded if isinstance(outcome, BlockEvent) else outcome.ok
    src = sum(1 for e in esis if e < sent.K)
    per_before = (sent.K - src) / sent.K
    return BlockMetrics(sent.sbn, sent.K, len(esis), src, decoded, per_before,
                        0.0 if decoded else per_before)


def wilson_interval(successes: int, total: int, confidence: float = 0.95) -> tuple[float, float]:
    if total == 0:
        return 0.0, 1.0
    ci = binomtest(successes, total).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class Report:
    config: ExperimentConfig
    blocks: list[BlockMetrics]
    media_sent: int
    media_delivered: int
    decode_attempts: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def blocks_total(self) -> int:
        return len(self.blocks)

    @property
    def blocks_decoded(self) -> int:
        return sum(b.decoded for b in self.blocks)

    @property
    def success_rate(self) -> float:
        return self.blocks_decoded / self.blocks_total if self.blocks else 0.0

    @property
    def success_ci(self) -> tuple[float, float]:
        return wilson_interval(self.blocks_decoded, self.blocks_total)

    @property
    def mean_per_before(self) -> float:
        return float(np.mean([b.per_before for b in self.blocks])) if self.blocks else 0.0

    @property
    def mean_per_after(self) -> float:
        return float(np.mean([b.per_after for b in self.blocks])) if self.blocks else 0.0

    @property
    def media_delivery_ratio(self) -> float:
        return self.media_delivered / self.media_sent if self.media_sent else 0.0

    @property
    def reliable(self) -> bool:
        """Mean PER after decoding below the 1% a video decoder tolerates."""
        return self.mean_per_after < TOLERABLE_PER

    @property
    def seed(self) -> int:
        return self.config.seed

    def summary_row(self) -> dict:
        lo, hi = self.success_ci
        row = self.config.describe()
        row.update({
            "blocks_total": self.blocks_total,
            "blocks_decoded": self.blocks_decoded,
            "success_rate": self.success_rate,
            "success_ci_low": lo,
            "success_ci_high": hi,
            "mean_per_before": self.mean_per_before,
            "mean_per_after": self.mean_per_after,
            "media_delivery_ratio": self.media_delivery_ratio,
            "reliable": int(self.reliable),
            "receiver": self.config.receiver.describe() if self.config.receiver else "",
            "error": "",
        })
        return row


# -- media -----------------------------------------------------------------

def _media_stream(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray, list[bytes] | None]:
    """Arrival times, sizes and (for a trace) payloads of the media packets."""
    if config.media_trace:
        with open(config.media_trace, "rb") as fh:
            packets = list(read_media_trace(fh))
        sizes = np.array([len(p) for p in packets], dtype=np.int64)
        times = np.concatenate(([0.0], np.cumsum(sizes)[:-1])) / config.media_rate
        keep = int(np.count_nonzero(times < config.duration))
        return times[:keep], sizes[:keep], packets[:keep]
    interval = config.packet_size / config.media_rate
    count = int(math.floor(config.duration / interval + 1e-9))
    times = np.arange(count) * config.packet_size / config.media_rate
    return times, np.full(count, config.packet_size, dtype=np.int64), None


def _media_payloads(config: ExperimentConfig, block: SentBlock, sizes: np.ndarray,
                    trace: list[bytes] | None) -> list[bytes]:
    lo, hi = block.first_packet, block.first_packet + block.packet_count
    if trace is not None:
        return trace[lo:hi]
    rng = ch.make_rng(ch.derive_seed(config.seed, "media", block.sbn))
    raw = rng.bytes(int(sizes[lo:hi].sum()))
    out, pos = [], 0
    for s in sizes[lo:hi].tolist():
        out.append(raw[pos:pos + s])
        pos += s
    return out


def plan_blocks(config: ExperimentConfig, times: np.ndarray, sizes: np.ndarray) -> list[SentBlock]:
    """Cut the media stream into blocks with the live-mode rules (window or K cap)."""
    builder = BlockBuilder(config.T, config.window, config.max_source_symbols)
    blocks: list[SentBlock] = []
    first = 0

    def cut(ready: float):
        nonlocal first
        count = builder.packet_count
        payload = builder.cut_block()
        K = payload.K
        N = K + repair_count_for(K, config.code_rate)
        blocks.append(SentBlock(len(blocks), K, N, count, first, ready))
        first += count

    for t, size in zip(times.tolist(), sizes.tolist()):
        if builder.should_cut(t, size):
            start = builder.first_packet_time
            cut(min(start + config.window, t))
        builder.push_media_packet(bytes(size), now=t)
    if builder.packet_count:
        cut(min(builder.first_packet_time + config.window, config.duration))
    return blocks


# -- link ------------------------------------------------------------------

@dataclass
class LinkTrace:
    """Every packet put on the link, in emission order."""

    sbn: np.ndarray
    esi: np.ndarray
    sent: np.ndarray
    arrival: np.ndarray
    lost: np.ndarray


def simulate_link(config: ExperimentConfig, blocks: Sequence[SentBlock]) -> LinkTrace:
    spread = config.effective_spread
    datagram = HEADER_SIZE + config.T
    rate = config.pacing_rate
    n_total = sum(b.N for b in blocks)
    sbn = np.empty(n_total, dtype=np.int64)
    esi = np.empty(n_total, dtype=np.int64)
    desired = np.empty(n_total)
    pos = 0
    for b in blocks:
        gap = max(spread / b.N, datagram / rate)
        sbn[pos:pos + b.N] = b.sbn
        esi[pos:pos + b.N] = np.arange(b.N)
        desired[pos:pos + b.N] = b.ready_time + gap * np.arange(b.N)
        pos += b.N
    order = np.lexsort((esi, sbn, desired))
    sbn, esi, desired = sbn[order], esi[order], desired[order]
    sent = pace_times(desired, np.full(n_total, datagram), rate)
    arrival = sent + datagram / rate

    if config.mask_mode == "per_block":
        lost = np.empty(n_total, dtype=bool)
        for b in blocks:
            # Fixed mask length per block so the first N entries do not depend on N.
            length = max(b.N, 10 * b.K)
            mask = ch.sample_loss_mask(config.channel, length, ch.derive_seed(config.seed, "block", b.sbn))
            sel = sbn == b.sbn
            lost[sel] = mask[esi[sel]]
    else:
        lost = ch.sample_loss_mask(config.channel, n_total, ch.derive_seed(config.seed, "channel"))
    if config.receiver is not None:
        alive = np.flatnonzero(~lost)
        lost[alive[ch.apply_receiver_overload(arrival[alive], config.receiver)]] = True
    return LinkTrace(sbn, esi, sent, arrival, lost)


# -- experiment ------------------------------------------------------------

class _BlockSource:
    """Builds a block's datagrams on demand; repair symbols only when one is needed."""

    def __init__(self, config: ExperimentConfig, block: SentBlock, sizes: np.ndarray,
                 trace: list[bytes] | None):
        self.block = block
        self.packets = _media_payloads(config, block, sizes, trace)
        builder = BlockBuilder(config.T, config.window, config.max_source_symbols)
        for p in self.packets:
            builder.push_media_packet(p)
        payload = builder.cut_block()
        if payload.K != block.K:
            raise RuntimeError(f"block {block.sbn}: planned K={block.K}, framed K={payload.K}")
        self.params = derive_params(payload.K, config.T)
        self.symbols = np.frombuffer(payload.data, dtype=np.uint8).reshape(payload.K, config.T)
        self._inter = None

    def datagram(self, esi: int) -> bytes:
        p = self.params
        if esi < p.K:
            data = self.symbols[esi].tobytes()
        else:
            if self._inter is None:
                self._inter = compute_intermediate(p, self.symbols)
            data = generate_encoding_symbol(self._inter, esi_to_isi(p, esi)).data
        return serialize_fec_packet(FecPacketHeader(self.block.sbn & 0xFFFF, esi, p.K, p.T), data)


def run_experiment(config: ExperimentConfig) -> Report:
    config.validate()
    times, sizes, trace = _media_stream(config)
    if times.size == 0:
        raise ValueError("experiment duration too short to carry a single media packet")
    blocks = plan_blocks(config, times, sizes)
    link = simulate_link(config, blocks)

    arrived = np.flatnonzero(~link.lost)
    remaining = defaultdict(int)
    for s in link.sbn[arrived].tolist():
        remaining[s] += 1

    collector = BlockCollector(config.buffering_time, config.window)
    sources: dict[int, _BlockSource] = {}
    wire_to_block: dict[int, int] = {}
    outcomes: dict[int, BlockEvent] = {}
    first_seen: dict[int, float] = {}
    received: dict[int, list[int]] = defaultdict(list)
    delivered = 0

    def release(j: int) -> None:
        if remaining[j] == 0 and j in outcomes:
            sources.pop(j, None)

    def record(events):
        nonlocal delivered
        for ev in events:
            j = wire_to_block[ev.sbn]
            outcomes[j] = ev
            delivered += len(ev.packets)
            truth = sources[j].packets
            if ev.packets != truth[:len(ev.packets)]:
                raise RuntimeError(f"block {j}: delivered media does not match what was sent")
            if ev.decoded and len(ev.packets) != len(truth):
                raise RuntimeError(f"block {j}: decoded block delivered {len(ev.packets)} packets")
            release(j)

    for idx in arrived.tolist():
        j = int(link.sbn[idx])
        now = float(link.arrival[idx])
        if j not in first_seen:
            sources[j] = _BlockSource(config, blocks[j], sizes, trace)
            first_seen[j] = now
            wire_to_block[j & 0xFFFF] = j
        esi = int(link.esi[idx])
        if now <= first_seen[j] + config.buffering_time:
            received[j].append(esi)
        remaining[j] -= 1
        record(collector.on_datagram(sources[j].datagram(esi), now))
        release(j)
    record(collector.flush())

    metrics = [block_metrics(b, received.get(b.sbn, ()), outcomes.get(b.sbn)) for b in blocks]
    return Report(config=config, blocks=metrics, media_sent=int(times.size),
                  media_delivered=delivered,
                  decode_attempts=sum(ev.decode_attempts for ev in outcomes.values()),
                  extras={"late_packets": collector.late_packets,
                          "packets_sent": int(link.lost.size),
                          "packets_arrived": int(arrived.size)})


# -- sweeps ----------------------------------------------------------------

SUMMARY_COLUMNS = (
    "T", "CR", "t_b", "w", "b", "mcs", "channel", "seed",
    "blocks_total", "blocks_decoded", "success_rate", "success_ci_low", "success_ci_high",
    "mean_per_before", "mean_per_after", "media_delivery_ratio",
    "reliable", "receiver", "error",
)
BLOCK_COLUMNS = ("sbn", "K", "R", "source_received", "decoded", "per_before", "per_after")


def reference_grid(base: ExperimentConfig = ExperimentConfig(),
                   mcs_indices: Iterable[int] = range(8)) -> list[ExperimentConfig]:
    """Every (T, t_b, CR) combination of the measurement campaign, per MCS preset."""
    return [dataclasses.replace(base, T=T, buffering_time=tb, code_rate=cr, mcs_index=m)
            for T in GRID_SYMBOL_SIZES for tb in GRID_BUFFERING_TIMES
            for cr in GRID_CODE_RATES for m in mcs_indices]


def _error_row(config: ExperimentConfig, exc: Exception) -> dict:
    row = dict.fromkeys(SUMMARY_COLUMNS, "")
    try:
        row.update(config.describe())
    except Exception:  # noqa: BLE001 - a broken config still gets a row
        pass
    row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(grid: Sequence[ExperimentConfig], blocks_dir: str | None = None) -> list[dict]:
    """Run every config; failures become rows with the ``error`` column set."""
    if not grid:
        raise ValueError("empty sweep grid")
    rows = []
    for i, config in enumerate(grid):
        try:
            report = run_experiment(config)
        except Exception as exc:  # noqa: BLE001 - record and keep sweeping
            log.error("config %d failed: %s", i, exc)
            rows.append(_error_row(config, exc))
            continue
        rows.append(report.summary_row())
        if blocks_dir:
            os.makedirs(blocks_dir, exist_ok=True)
            write_block_csv(os.path.join(blocks_dir, f"blocks_{i:04d}.csv"), report.blocks)
    return rows


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary_csv(path: str, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in SUMMARY_COLUMNS])


def write_block_csv(path: str, blocks: Sequence[BlockMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BLOCK_COLUMNS)
        for b in blocks:
            w.writerow([_fmt(getattr(b, c)) for c in BLOCK_COLUMNS])
