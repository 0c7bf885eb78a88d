import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rqstream.codec import decode_block, derive_params, encode_block
from rqstream.framing import BlockBuilder
from rqstream.transport import (HEADER_SIZE, BlockCollector, FecPacketHeader, LoopbackLink,
                                PacketParseError, SessionConfig, UdpLink, block_datagrams,
                                default_spread, merge_schedules, open_receiver_socket, pace,
                                pace_times, parse_fec_packet, receiver_collect, run_receiver,
                                sbn_precedes, send_block, serialize_fec_packet, transmit)


def make_block(sbn, n_packets=20, T=64, seed=0, code_rate=0.5):
    rng = np.random.default_rng(seed + sbn)
    b = BlockBuilder(T)
    packets = [rng.bytes(int(rng.integers(1, 150))) for _ in range(n_packets)]
    for p in packets:
        b.push_media_packet(p)
    blk = b.cut_block()
    params = derive_params(blk.K, T)
    repair = -(-blk.K * 1000 // int(code_rate * 1000)) - blk.K
    return params, packets, encode_block(params, blk.symbols(), repair)


def arrivals_for(params, sbn, symbols, start=0.0, gap=0.001):
    grams = block_datagrams(params, sbn, symbols)
    return [(start + i * gap, d) for i, (_, d) in enumerate(grams)]


class TestWireFormat:
    def test_example_packet(self):
        d = serialize_fec_packet(FecPacketHeader(0, 0, 1, 4), bytes.fromhex("deadbeef"))
        assert len(d) == 16
        assert d[:HEADER_SIZE].hex() == "010000000000000000010004"
        h, payload = parse_fec_packet(d)
        assert h == FecPacketHeader(0, 0, 1, 4) and payload == bytes.fromhex("deadbeef")

    def test_short_datagram(self):
        with pytest.raises(PacketParseError, match="truncated"):
            parse_fec_packet(b"\x01" * 11)

    def test_version_and_length_checks(self):
        d = bytearray(serialize_fec_packet(FecPacketHeader(1, 2, 3, 2), b"ab"))
        with pytest.raises(PacketParseError, match="length"):
            parse_fec_packet(bytes(d) + b"x")
        d[0] = 2
        with pytest.raises(PacketParseError, match="version"):
            parse_fec_packet(bytes(d))

    def test_esi_range(self):
        with pytest.raises(ValueError):
            serialize_fec_packet(FecPacketHeader(0, 1 << 24, 1, 1), b"a")
        d = bytearray(serialize_fec_packet(FecPacketHeader(0, 5, 1, 1), b"a"))
        d[4] = 1
        with pytest.raises(PacketParseError):
            parse_fec_packet(bytes(d))

    @settings(max_examples=500, deadline=None)
    @given(sbn=st.integers(0, 0xFFFF), esi=st.integers(0, (1 << 24) - 1), k=st.integers(0, 0xFFFF),
           payload=st.binary(max_size=300), flags=st.integers(0, 255))
    def test_roundtrip_property(self, sbn, esi, k, payload, flags):
        h = FecPacketHeader(sbn, esi, k, len(payload), flags=flags)
        assert parse_fec_packet(serialize_fec_packet(h, payload)) == (h, payload)

    def test_sbn_serial_arithmetic(self):
        assert sbn_precedes(1, 2)
        assert sbn_precedes(0xFFFF, 0)
        assert not sbn_precedes(2, 1)
        assert not sbn_precedes(5, 5)


class TestSender:
    def test_uniform_gap(self):
        params, _, syms = make_block(0, n_packets=40, T=8, code_rate=0.2)
        session = SessionConfig(spread=4.0, deadline=10.0, pacing_rate=1e9)
        syms = (syms * 20)[:350]
        events = send_block(session, params, 0, syms, start=2.0)
        gaps = np.diff([e.time for e in events])
        assert np.allclose(gaps, 4.0 / 350)
        assert events[0].time == 2.0

    def test_source_before_repair(self):
        params, _, syms = make_block(3)
        events = send_block(SessionConfig(spread=1.0, deadline=2.0), params, 3, syms, 0.0)
        esis = [e.esi for e in events]
        assert esis == sorted(esis)
        assert esis[:params.K] == list(range(params.K))

    def test_spread_must_fit_deadline(self):
        with pytest.raises(ValueError):
            SessionConfig(spread=5.0, deadline=5.0)

    def test_default_spread(self):
        assert default_spread(10, 1) == 8
        assert default_spread(5, 1) == 3
        assert default_spread(2, 1) == 1

    def test_pacing_respects_rate(self):
        rate = 6.5e6 / 8
        session = SessionConfig(spread=0.5, deadline=5.0, pacing_rate=rate)
        schedules = []
        for sbn in range(6):
            params, _, syms = make_block(sbn, n_packets=80, T=1400, code_rate=0.2)
            schedules.append(send_block(session, params, sbn, syms, start=sbn * 0.25))
        events = pace(merge_schedules(schedules), rate)
        times = np.array([e.time for e in events])
        sizes = np.array([len(e.datagram) for e in events])
        assert np.all(np.diff(times) >= sizes[:-1] / rate - 1e-12)
        for start in np.linspace(0, times[-1], 200):
            in_window = (times >= start) & (times < start + 1.0)
            assert sizes[in_window].sum() <= rate + sizes.max()

    def test_pace_times_matches_recurrence(self):
        rng = np.random.default_rng(4)
        desired = np.sort(rng.random(500) * 3)
        sizes = rng.integers(50, 1500, 500)
        got = pace_times(desired, sizes, 1e5)
        t = []
        for i, d in enumerate(desired):
            t.append(d if i == 0 else max(d, t[-1] + sizes[i - 1] / 1e5))
        assert np.allclose(got, t)

    def test_blocks_interleave(self):
        session = SessionConfig(spread=4.0, deadline=10.0, pacing_rate=1e9)
        p0, _, s0 = make_block(0)
        p1, _, s1 = make_block(1)
        merged = list(merge_schedules([send_block(session, p0, 0, s0, 0.0),
                                       send_block(session, p1, 1, s1, 1.0)]))
        sbns = [e.sbn for e in merged]
        first_b1 = sbns.index(1)
        assert 0 in sbns[first_b1:]

    def test_send_errors_do_not_abort(self):
        class Flaky:
            def __init__(self):
                self.sent = 0

            def send(self, datagram, now):
                self.sent += 1
                if self.sent % 3 == 0:
                    raise OSError("network unreachable")

        params, _, syms = make_block(0)
        events = send_block(SessionConfig(spread=0.0, deadline=1.0, pacing_rate=1e12),
                            params, 0, syms, 0.0)
        link = Flaky()
        errors = transmit(events, link, sleep=lambda s: None)
        assert link.sent == len(events)
        assert errors == len(events) // 3


class SpyDecoder:
    def __init__(self):
        self.calls = []

    def __call__(self, params, received):
        self.calls.append((len(received) + params.padding, params.K_prime))
        return decode_block(params, received)


class TestCollector:
    def test_lossless_blocks_all_succeed(self):
        arrivals = []
        truth = {}
        for sbn in range(4):
            params, packets, syms = make_block(sbn)
            truth[sbn] = packets
            arrivals += arrivals_for(params, sbn, syms, start=sbn * 0.5)
        arrivals.sort(key=lambda a: a[0])
        events = receiver_collect(arrivals, deadline=5.0)
        assert sorted(e.sbn for e in events) == [0, 1, 2, 3]
        for e in events:
            assert e.decoded and e.packets == truth[e.sbn]

    def test_below_k_prime_gives_partial(self):
        params, packets, syms = make_block(0, code_rate=0.5)
        kept = syms[:params.K - 3] + syms[params.K:params.K + 2]
        assert len(kept) + params.padding == params.K_prime - 1
        spy = SpyDecoder()
        events = receiver_collect(arrivals_for(params, 0, kept), deadline=1.0, decoder=spy)
        assert spy.calls == []
        (ev,) = events
        assert ev.kind == "partial"
        assert ev.source_received == params.K - 3
        assert ev.packets == packets[:len(ev.packets)]

    def test_deadline_ordering(self):
        collector = BlockCollector(deadline=2.0)
        params, _, syms = make_block(0)
        grams = block_datagrams(params, 0, syms)
        assert collector.on_datagram(grams[0][1], 1.0) == []
        assert collector.advance(2.99) == []
        (ev,) = collector.advance(3.0)
        assert ev.time <= 1.0 + 2.0 and ev.kind == "partial"
        assert collector.on_datagram(grams[1][1], 3.1) == []
        assert collector.late_packets == 1

    def test_state_cap_forces_oldest_out(self):
        collector = BlockCollector(deadline=10.0, window=5.0)  # cap = 3
        events = []
        for sbn in range(4):
            params, _, syms = make_block(sbn)
            events += collector.on_datagram(block_datagrams(params, sbn, syms)[1][1], sbn * 0.1)
        assert [e.sbn for e in events] == [0]
        assert len(collector.states) == 3

    def test_garbage_is_counted(self):
        collector = BlockCollector(deadline=1.0)
        collector.on_datagram(b"junk", 0.0)
        assert collector.parse_errors == 1

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), loss=st.floats(0.0, 0.6))
    def test_gate_and_single_terminal_event(self, seed, loss):
        rng = np.random.default_rng(seed)
        arrivals = []
        for sbn in range(3):
            params, _, syms = make_block(sbn, n_packets=10, T=32)
            for t, d in arrivals_for(params, sbn, syms, start=sbn * 0.3):
                if rng.random() >= loss:
                    arrivals.append((t + rng.random() * 0.5, d))
        arrivals.sort(key=lambda a: a[0])
        spy = SpyDecoder()
        events = receiver_collect(arrivals, deadline=3.0, decoder=spy)
        assert all(r >= k_prime for r, k_prime in spy.calls)
        seen = {parse_fec_packet(d)[0].sbn for _, d in arrivals}
        assert sorted(e.sbn for e in events) == sorted(seen)


def test_loopback_link_records():
    link = LoopbackLink()
    link.send(b"x", 1.5)
    assert link.sent == [(1.5, b"x")]


def test_udp_loopback_roundtrip():
    sock = open_receiver_socket("127.0.0.1", 0)
    port = sock.getsockname()[1]
    params, packets, syms = make_block(0, T=100)
    events = send_block(SessionConfig(spread=0.2, deadline=1.0, pacing_rate=1e7),
                        params, 0, syms, 0.0)
    collector = BlockCollector(deadline=1.0)
    out = []
    th = threading.Thread(target=lambda: out.append(
        run_receiver(sock, collector, duration=1.5, on_event=out.append)))
    th.start()
    link = UdpLink(("127.0.0.1", port))
    assert transmit(events, link) == 0
    link.close()
    th.join()
    sock.close()
    block_events = [e for e in out if not isinstance(e, dict)]
    assert len(block_events) == 1 and block_events[0].decoded
    assert block_events[0].packets == packets
