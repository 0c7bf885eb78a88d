"""Command-line entry points: ``send``, ``recv``, ``simulate`` and ``sweep``.

Configuration resolves as defaults < ``--config`` file < flags. The config
file is plain ``key=value`` text with ``#`` comments. A sweep grid file uses
the same keys with whitespace-separated value lists, e.g. ``cr=0.2 0.33 0.66``;
the sweep runs the Cartesian product.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from typing import Any, Sequence

from . import channel as ch
from . import harness
from .codec import derive_params, encode_block, repair_count_for
from .framing import BlockBuilder, read_media_trace, write_media_trace
from .transport import (BlockCollector, BlockEvent, SessionConfig, UdpLink, default_spread,
                        merge_schedules, open_receiver_socket, pace, run_receiver, send_block,
                        transmit)

log = logging.getLogger("rqstream")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class CliConfig:
    group: str = "239.255.0.1"
    port: int = 5004
    T: int = 1400
    code_rate: float = 0.2
    buffering_time: float = 10.0
    window: float = 1.0
    media_rate: float = 98_000.0
    mcs: int = 1
    seed: int = 1
    channel: str = "iid:0"
    receiver: str = ""
    duration: float = 60.0
    packet_size: int = 1316
    spread: float | None = None
    media_trace: str = ""
    mask_mode: str = "timeline"
    max_source_symbols: int = 8192
    ttl: int = 1
    out: str = ""
    blocks_out: str = ""

    @property
    def effective_spread(self) -> float:
        return self.spread if self.spread is not None else default_spread(self.buffering_time, self.window)

    def loss_model(self) -> ch.LossModel:
        return parse_channel(self.channel)

    def receiver_model(self) -> ch.ReceiverModel | None:
        return parse_receiver(self.receiver) if self.receiver else None

    def experiment(self) -> harness.ExperimentConfig:
        return harness.ExperimentConfig(
            T=self.T, code_rate=self.code_rate, buffering_time=self.buffering_time,
            window=self.window, media_rate=self.media_rate, duration=self.duration,
            channel=self.loss_model(), receiver=self.receiver_model(), seed=self.seed,
            mcs_index=self.mcs, packet_size=self.packet_size, spread=self.spread,
            mask_mode=self.mask_mode, media_trace=self.media_trace or None,
            max_source_symbols=self.max_source_symbols)

    def session(self) -> SessionConfig:
        return SessionConfig(destination=(self.group, self.port),
                             pacing_rate=harness.mcs_rate_bytes(self.mcs),
                             spread=self.effective_spread, deadline=self.buffering_time,
                             code_rate=self.code_rate)


FIELDS = {f.name: f for f in dataclasses.fields(CliConfig)}
ALIASES = {
    "cr": "code_rate", "symbol_size": "T", "t": "T", "tb": "buffering_time",
    "t_b": "buffering_time", "w": "window", "b": "media_rate", "mcs_index": "mcs",
}


def canonical_key(key: str) -> str:
    k = key.strip().replace("-", "_")
    if k in FIELDS:
        return k
    k = ALIASES.get(k.lower(), k)
    if k not in FIELDS:
        raise ConfigError(key, "unknown configuration key")
    return k


def _convert(name: str, key: str, raw: Any) -> Any:
    if raw is None:
        return None
    typ = FIELDS[key].type
    try:
        if typ == "int":
            return int(raw)
        if typ in ("float", "float | None"):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {typ.split()[0]}, got {raw!r}") from None
    return str(raw)


def parse_channel(text: str) -> ch.LossModel:
    kind, _, rest = text.partition(":")
    try:
        if kind == "iid":
            return ch.IIDLoss(float(rest))
        if kind == "ge":
            vals = [float(v) for v in rest.split(",")]
            if len(vals) not in (2, 4):
                raise ValueError("ge needs p_gb,p_bg[,e_g,e_b]")
            return ch.GilbertElliott(*vals)
        if kind == "trace":
            return ch.load_loss_trace(rest)
    except (ValueError, OSError) as exc:
        raise ConfigError("channel", str(exc)) from None
    raise ConfigError("channel", f"expected iid:p, ge:pgb,pbg,eg,eb or trace:path, got {text!r}")


def parse_receiver(text: str) -> ch.ReceiverModel:
    try:
        rate, cap = text.split(",")
        return ch.ReceiverModel(float(rate), int(cap))
    except ValueError as exc:
        raise ConfigError("receiver", f"expected rate,capacity: {exc}") from None


def read_config_file(path: str, names: dict[str, str] | None = None) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(key, f"{path}:{lineno}: expected key=value")
            canon = canonical_key(key)
            values[canon] = value.strip()
            if names is not None:
                names[canon] = key.strip()
    return values


def validate(cfg: CliConfig, names: dict[str, str] | None = None) -> CliConfig:
    """Check constraints; errors name the key as the user spelled it (``names``)."""
    names = names or {}
    checks = [
        ("code_rate", 0 < cfg.code_rate <= 1, "must be in (0, 1]"),
        ("T", 1 <= cfg.T <= 0xFFFF, "must be in 1..65535"),
        ("port", 0 <= cfg.port <= 0xFFFF, "must be in 0..65535"),
        ("buffering_time", cfg.buffering_time > 0, "must be positive"),
        ("window", cfg.window > 0, "must be positive"),
        ("media_rate", cfg.media_rate > 0, "must be positive"),
        ("duration", cfg.duration > 0, "must be positive"),
        ("mcs", 0 <= cfg.mcs < len(harness.MCS_DATA_RATES_MBPS), "must be in 0..7"),
        ("packet_size", 1 <= cfg.packet_size <= 0xFFFF, "must be in 1..65535"),
        ("spread", 0 <= cfg.effective_spread < cfg.buffering_time, "must be below buffering_time"),
        ("mask_mode", cfg.mask_mode in ("timeline", "per_block"), "must be timeline or per_block"),
    ]
    for key, ok, msg in checks:
        if not ok:
            value = cfg.effective_spread if key == "spread" else getattr(cfg, key)
            raise ConfigError(names.get(key, key), f"{value!r} {msg}")
    cfg.loss_model()
    cfg.receiver_model()
    return cfg


def parse_config(args: dict[str, Any] | None = None, file: str | None = None) -> CliConfig:
    """Resolve a config from defaults, an optional file and flag values (None = unset)."""
    values: dict[str, Any] = {}
    names: dict[str, str] = {}
    if file:
        values.update(read_config_file(file, names))
    for key, value in (args or {}).items():
        if value is not None:
            canon = canonical_key(key)
            values[canon] = value
            names[canon] = key
    converted = {k: _convert(names.get(k, k), k, v) for k, v in values.items()}
    return validate(CliConfig(**converted), names)


def read_grid_file(path: str) -> dict[str, list[str]]:
    grid: dict[str, list[str]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not value.split():
                raise ConfigError(key, f"{path}:{lineno}: expected key=value [value ...]")
            grid[canonical_key(key)] = value.split()
    return grid


def expand_grid(base: CliConfig, grid: dict[str, list[str]]) -> list[CliConfig]:
    keys = list(grid)
    out = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        changes = {k: _convert(k, k, v) for k, v in zip(keys, combo)}
        out.append(validate(dataclasses.replace(base, **changes)))
    return out


# -- subcommands -----------------------------------------------------------

def _media_source(cfg: CliConfig) -> list[tuple[float, bytes]]:
    if cfg.media_trace:
        with open(cfg.media_trace, "rb") as fh:
            packets = list(read_media_trace(fh))
    else:
        n = int(math.floor(cfg.duration * cfg.media_rate / cfg.packet_size + 1e-9))
        rng = ch.make_rng(ch.derive_seed(cfg.seed, "cli-media"))
        raw = rng.bytes(n * cfg.packet_size)
        packets = [raw[i * cfg.packet_size:(i + 1) * cfg.packet_size] for i in range(n)]
    out, t = [], 0.0
    for p in packets:
        if t >= cfg.duration:
            break
        out.append((t, p))
        t += len(p) / cfg.media_rate
    return out


def build_schedule(cfg: CliConfig) -> list:
    """Paced transmission events for the whole media stream (sender-side loss applied)."""
    session = cfg.session()
    builder = BlockBuilder(cfg.T, cfg.window, cfg.max_source_symbols)
    schedules = []

    def emit(ready: float):
        payload = builder.cut_block()
        params = derive_params(payload.K, cfg.T)
        syms = encode_block(params, payload.symbols(), repair_count_for(payload.K, cfg.code_rate))
        schedules.append(send_block(session, params, len(schedules) & 0xFFFF, syms, ready))

    for t, packet in _media_source(cfg):
        if builder.should_cut(t, len(packet)):
            emit(min(builder.first_packet_time + cfg.window, t))
        builder.push_media_packet(packet, now=t)
    if builder.packet_count:
        emit(min(builder.first_packet_time + cfg.window, cfg.duration))
    events = pace(merge_schedules(schedules), session.pacing_rate)
    lost = ch.sample_loss_mask(cfg.loss_model(), len(events), ch.derive_seed(cfg.seed, "channel"))
    return [e for e, x in zip(events, lost) if not x]


def cmd_send(cfg: CliConfig) -> int:
    events = build_schedule(cfg)
    log.info("sending %d packets to %s:%d", len(events), cfg.group, cfg.port)
    link = UdpLink((cfg.group, cfg.port), ttl=cfg.ttl)
    try:
        errors = transmit(events, link)
    finally:
        link.close()
    log.info("send finished, %d send errors", errors)
    return 0


def _event_row(ev: BlockEvent) -> dict:
    per_before = (ev.k - ev.source_received) / ev.k
    return {"sbn": ev.sbn, "K": ev.k, "R": ev.received, "source_received": ev.source_received,
            "decoded": int(ev.decoded), "per_before": per_before,
            "per_after": 0.0 if ev.decoded else per_before}


def cmd_recv(cfg: CliConfig) -> int:
    sock = open_receiver_socket(cfg.group, cfg.port)
    collector = BlockCollector(cfg.buffering_time, cfg.window)
    events: list[BlockEvent] = []
    stats = run_receiver(sock, collector, cfg.duration, on_event=events.append)
    sock.close()
    events.sort(key=lambda e: e.time)
    rows = [_event_row(e) for e in events]
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=harness.BLOCK_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    if cfg.media_trace:
        with open(cfg.media_trace, "wb") as fh:
            write_media_trace(fh, (p for e in events for p in e.packets))
    decoded = sum(e.decoded for e in events)
    log.info("received %d blocks, %d decoded, stats %s", len(events), decoded, stats)
    print(json.dumps({"blocks_seen": len(events), "blocks_decoded": decoded, **stats}))
    return 0


def cmd_simulate(cfg: CliConfig) -> int:
    report = harness.run_experiment(cfg.experiment())
    row = report.summary_row()
    if cfg.out:
        harness.write_summary_csv(cfg.out, [row])
    if cfg.blocks_out:
        harness.write_block_csv(cfg.blocks_out, report.blocks)
    print(json.dumps(row))
    return 0


def cmd_sweep(cfg: CliConfig, grid_path: str) -> int:
    configs = expand_grid(cfg, read_grid_file(grid_path)) if grid_path else [cfg]
    rows = harness.sweep([c.experiment() for c in configs], blocks_dir=cfg.blocks_out or None)
    out = cfg.out or "sweep.csv"
    harness.write_summary_csv(out, rows)
    failed = sum(1 for r in rows if r["error"])
    log.info("sweep wrote %d rows to %s (%d failed)", len(rows), out, failed)
    return 1 if failed else 0


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--config", help="key=value config file")
    add("--group", help="multicast group (or unicast address)")
    add("--port", help="UDP port")
    add("--symbol-size", "-T", dest="T", help="symbol size T in bytes")
    add("--code-rate", "--cr", dest="code_rate", help="code rate CR = K/N")
    add("--buffering-time", dest="buffering_time", help="buffering time t_b in seconds")
    add("--window", help="source block window w in seconds")
    add("--media-rate", dest="media_rate", help="media rate b in bytes/s")
    add("--mcs", help="MCS index 0..7 used as the pacing rate")
    add("--seed", help="random seed")
    add("--channel", help="iid:p | ge:pgb,pbg,eg,eb | trace:path")
    add("--receiver", help="receiver overload model: rate,capacity")
    add("--duration", help="stream length in seconds")
    add("--packet-size", dest="packet_size", help="synthetic media packet size in bytes")
    add("--spread", help="seconds over which one block's packets are spread")
    add("--media-trace", dest="media_trace", help="media trace in (send/simulate) or out (recv)")
    add("--mask-mode", dest="mask_mode", help="timeline or per_block")
    add("--out", help="output CSV")
    add("--blocks-out", dest="blocks_out", help="per-block CSV (simulate) or directory (sweep)")
    add("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rqstream", description="RaptorQ multicast streaming toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("send", parents=[common], help="stream media to a multicast group")
    sub.add_parser("recv", parents=[common], help="receive, decode and log blocks")
    sub.add_parser("simulate", parents=[common], help="run one experiment in-process")
    sw = sub.add_parser("sweep", parents=[common], help="run a grid of experiments to CSV")
    sw.add_argument("--grid", help="grid file with whitespace-separated value lists")
    return parser


FLAG_KEYS = ("group", "port", "T", "code_rate", "buffering_time", "window", "media_rate", "mcs",
             "seed", "channel", "receiver", "duration", "packet_size", "spread", "media_trace",
             "mask_mode", "out", "blocks_out")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config({k: getattr(ns, k) for k in FLAG_KEYS}, ns.config)
    except (ConfigError, OSError) as exc:
        log.error("configuration error: %s", exc)
        return 2
    log.info("resolved config: %s", json.dumps(dataclasses.asdict(cfg), sort_keys=True))
    start = time.monotonic()
    try:
        if ns.command == "send":
            code = cmd_send(cfg)
        elif ns.command == "recv":
            code = cmd_recv(cfg)
        elif ns.command == "simulate":
            code = cmd_simulate(cfg)
        else:
            code = cmd_sweep(cfg, ns.grid)
    except (ValueError, OSError, RuntimeError) as exc:
        log.error("%s failed: %s", ns.command, exc)
        return 1
    log.debug("%s took %.2f s", ns.command, time.monotonic() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
