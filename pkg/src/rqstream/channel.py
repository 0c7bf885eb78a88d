"""Seedable packet-loss processes and a bounded-queue receiver model.

Random numbers come from numpy's Philox4x64-10 counter-based bit generator,
``numpy.random.Generator(numpy.random.Philox(seed))``; identical seeds give
identical masks on every platform numpy supports.

When both a channel and a receiver model are used, the channel mask is
applied first and the receiver queue only sees the packets that survived it.
"""

from __future__ import annotations

import csv
import hashlib
from collections import deque
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class ChannelConfigError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(seed: int, *labels) -> int:
    """64-bit sub-seed for a named stream, e.g. ``derive_seed(7, "media", 12)``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"\x00" + str(label).encode())
    return int.from_bytes(h.digest(), "big")


def _check_prob(name: str, p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ChannelConfigError(f"{name}={p} is not a probability")


@dataclass(frozen=True)
class IIDLoss:
    p: float

    def __post_init__(self):
        _check_prob("p", self.p)

    def describe(self) -> str:
        return f"iid:{self.p:g}"


@dataclass(frozen=True)
class GilbertElliott:
    """Two-state Markov loss channel, started in the good state.

    ``p_gb``/``p_bg`` are per-packet transition probabilities and ``e_g``/``e_b``
    the loss probabilities inside each state.
    """

    p_gb: float
    p_bg: float
    e_g: float = 0.0
    e_b: float = 1.0

    def __post_init__(self):
        for name in ("p_gb", "p_bg", "e_g", "e_b"):
            _check_prob(name, getattr(self, name))

    def describe(self) -> str:
        return f"ge:{self.p_gb:g},{self.p_bg:g},{self.e_g:g},{self.e_b:g}"


@dataclass(frozen=True)
class TraceLoss:
    mask: tuple[bool, ...]
    source: str = ""

    def describe(self) -> str:
        return f"trace:{self.source}" if self.source else f"trace:<{len(self.mask)} packets>"


LossModel = Union[IIDLoss, GilbertElliott, TraceLoss]


@dataclass(frozen=True)
class ReceiverModel:
    """Client that consumes ``service_rate`` packets/s with ``queue_capacity`` slots."""

    service_rate: float
    queue_capacity: int

    def __post_init__(self):
        if self.service_rate <= 0:
            raise ChannelConfigError("service_rate must be positive")
        if self.queue_capacity < 1:
            raise ChannelConfigError("queue_capacity must be at least 1")

    def describe(self) -> str:
        return f"{self.service_rate:g},{self.queue_capacity}"


def _ge_states(model: GilbertElliott, n: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean array, True where the chain is in the bad state."""
    states = np.zeros(n, dtype=bool)
    if n == 0:
        return states
    rates = (model.p_gb, model.p_bg)
    pos, bad = 0, False
    while pos < n:
        # Alternate good/bad sojourns, drawn in chunks of geometric lengths.
        p_first, p_second = rates[bad], rates[not bad]
        if p_first == 0.0:
            states[pos:] = bad
            break
        chunk = 64
        first = rng.geometric(p_first, chunk)
        second = rng.geometric(p_second, chunk) if p_second > 0 else np.full(chunk, n)
        runs = np.empty(2 * chunk, dtype=np.int64)
        runs[0::2] = first
        runs[1::2] = second
        labels = np.empty(2 * chunk, dtype=bool)
        labels[0::2] = bad
        labels[1::2] = not bad
        ends = pos + np.cumsum(runs)
        stop = int(np.searchsorted(ends, n)) + 1
        seg = np.repeat(labels[:stop], runs[:stop])[: n - pos]
        states[pos:pos + seg.size] = seg
        pos += int(runs[:stop].sum())
        # The chunk ends after a `second` run, so parity is unchanged.
    return states


def sample_loss_mask(model: LossModel, n: int, seed: int) -> np.ndarray:
    """Boolean loss mask of length ``n`` (True = lost)."""
    if n < 0:
        raise ChannelConfigError("n must be non-negative")
    if isinstance(model, TraceLoss):
        if len(model.mask) < n:
            raise ChannelConfigError(
                f"loss trace has {len(model.mask)} entries, {n} packets requested")
        return np.array(model.mask[:n], dtype=bool)
    rng = make_rng(seed)
    if isinstance(model, IIDLoss):
        return rng.random(n) < model.p
    if isinstance(model, GilbertElliott):
        bad = _ge_states(model, n, rng)
        u = rng.random(n)
        return np.where(bad, u < model.e_b, u < model.e_g)
    raise TypeError(f"unknown loss model {model!r}")


def stationary_loss_rate(model: GilbertElliott) -> float:
    total = model.p_gb + model.p_bg
    if total <= 0:
        raise ChannelConfigError("degenerate Gilbert-Elliott chain: both transitions are 0")
    pi_bad = model.p_gb / total
    return pi_bad * model.e_b + (1.0 - pi_bad) * model.e_g


def ge_matching_iid(p: float, mean_burst: float, e_g: float = 0.0, e_b: float = 1.0) -> GilbertElliott:
    """A Gilbert-Elliott channel with stationary loss ``p`` and mean bad sojourn ``mean_burst``."""
    if not e_g <= p <= e_b:
        raise ChannelConfigError(f"target loss {p} not between e_g={e_g} and e_b={e_b}")
    p_bg = 1.0 / mean_burst
    pi_bad = (p - e_g) / (e_b - e_g)
    if pi_bad >= 1.0:
        raise ChannelConfigError("target loss requires the chain to stay in the bad state")
    p_gb = p_bg * pi_bad / (1.0 - pi_bad)
    return GilbertElliott(p_gb=p_gb, p_bg=p_bg, e_g=e_g, e_b=e_b)


def apply_receiver_overload(arrival_times: Sequence[float], model: ReceiverModel) -> np.ndarray:
    """Drop mask for a FIFO single-server queue with deterministic service.

    Capacity counts the packet in service; an arrival that finds the system
    full is dropped.
    """
    times = np.asarray(arrival_times, dtype=float)
    drops = np.zeros(times.size, dtype=bool)
    if times.size and np.any(np.diff(times) < 0):
        raise ChannelConfigError("arrival times must be nondecreasing")
    service = 1.0 / model.service_rate
    cap = model.queue_capacity
    in_system: deque[float] = deque()
    last_departure = -np.inf
    for i, t in enumerate(times.tolist()):
        while in_system and in_system[0] <= t:
            in_system.popleft()
        if len(in_system) >= cap:
            drops[i] = True
            continue
        last_departure = max(t, last_departure) + service
        in_system.append(last_departure)
    return drops


def apply_channel_and_receiver(arrival_times: Sequence[float], channel: LossModel,
                               seed: int, receiver: ReceiverModel | None = None) -> np.ndarray:
    """Combined loss mask: channel first, then the receiver queue on survivors."""
    times = np.asarray(arrival_times, dtype=float)
    lost = sample_loss_mask(channel, times.size, seed)
    if receiver is not None:
        alive = np.flatnonzero(~lost)
        lost[alive[apply_receiver_overload(times[alive], receiver)]] = True
    return lost


def load_loss_trace(path: str) -> TraceLoss:
    """Read a ``seq,received`` text trace (received in {0, 1}); a header line is allowed."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                seq, rec = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue
                raise ChannelConfigError(f"{path}:{lineno}: expected 'seq,received'") from None
            if rec not in (0, 1):
                raise ChannelConfigError(f"{path}:{lineno}: received must be 0 or 1")
            rows.append((seq, rec))
    rows.sort()
    return TraceLoss(tuple(rec == 0 for _, rec in rows), source=path)


def save_loss_trace(path: str, lost: Sequence[bool]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seq", "received"])
        for i, x in enumerate(lost):
            w.writerow([i, 0 if x else 1])
