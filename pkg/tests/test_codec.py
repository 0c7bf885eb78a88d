import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from rqstream import codec
from rqstream.codec import (DecodeStatus, EncodingSymbol, ParameterError, build_constraint_matrix,
                            compute_intermediate, decode_block, derive_params, encode_block,
                            generate_encoding_symbol, repair_count_for)

# Repair symbols produced by the `raptorq` 2.0.1 Rust crate for the source
# bytes (i * 31 + 7) % 251, ESIs K..K+5.
CRATE_VECTORS = {
    (10, 4): ["46712ba7", "b4c2f43b", "c71ecbf1", "1e6a1d40", "ae7ab268", "aab53cd6"],
    (3, 2): ["877b", "8c21", "0448", "a287", "6a84", "66d6"],
    (70, 8): ["cfa7d4517d454baf", "5a1f6d033a8204b3", "190bbaff7137c59c",
              "9ff20fbf1fb330d7", "2ea91c8810bc1dea", "030daaf3c76a13cf"],
    (100, 2): ["b018", "a80c", "624b", "e8e0", "327f", "a8c5"],
}


def random_block(K, T, seed):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (K, T), dtype=np.uint8)


def as_received(params, symbols):
    return {s.isi: s.data for s in symbols}


class TestDeriveParams:
    def test_limit_is_enforced(self):
        with pytest.raises(ParameterError, match="56403"):
            derive_params(56_404, 16)
        assert derive_params(56_403, 16).K_prime == 56_403

    def test_exact_table_entry_has_no_padding(self):
        p = derive_params(42, 8)
        assert p.K_prime == 42 and p.padding == 0

    def test_k11_lookup(self):
        p = derive_params(11, 8)
        assert (p.K_prime, p.S, p.H) == (12, 7, 10)
        assert p.L == p.K_prime + p.S + p.H == 29
        assert (p.K_prime, p.J, p.S, p.H, p.W) == oracles.table_row(11)

    def test_symbol_size_must_be_positive(self):
        with pytest.raises(ParameterError):
            derive_params(10, 0)

    def test_esi_isi_mapping_skips_padding(self):
        p = derive_params(40, 8)  # K' = 42
        assert codec.esi_to_isi(p, 39) == 39
        assert codec.esi_to_isi(p, 40) == 42
        assert codec.isi_to_esi(p, 42) == 40


class TestConstraintMatrix:
    @pytest.mark.parametrize("K", [1, 6, 10, 11, 20, 40])
    def test_matches_dense_reference(self, K):
        m = build_constraint_matrix(derive_params(K, 4))
        assert np.array_equal(m.matrix, oracles.constraint_matrix(K))

    def test_deterministic(self):
        p = derive_params(33, 4)
        assert np.array_equal(build_constraint_matrix(p).matrix, build_constraint_matrix(p).matrix)

    @pytest.mark.parametrize("K", [1, 10, 26, 55, 101])
    def test_full_rank(self, K):
        m = build_constraint_matrix(derive_params(K, 4)).matrix
        assert oracles.gf_rank(m) == m.shape[0] == m.shape[1]

    def test_partition_row_counts(self):
        p = derive_params(70, 4)
        m = build_constraint_matrix(p)
        assert (len(m.ldpc_rows), len(m.hdpc_rows), len(m.lt_rows)) == (p.S, p.H, p.K_prime)
        assert set(np.unique(m.ldpc_rows)) <= {0, 1}
        assert set(np.unique(m.lt_rows)) <= {0, 1}
        assert m.hdpc_rows.max() > 1

    def test_every_small_table_entry_solves(self):
        for row in oracles.SYSTEMATIC_TABLE[:60]:
            p = derive_params(row[0], 1)
            compute_intermediate(p, np.zeros((p.K, 1), dtype=np.uint8))


class TestEncoding:
    def test_zero_source_gives_zero_intermediate(self):
        p = derive_params(17, 8)
        inter = compute_intermediate(p, np.zeros((17, 8), dtype=np.uint8))
        assert not inter.symbols.any()

    def test_intermediate_matches_reference(self):
        src = random_block(10, 4, 1)
        inter = compute_intermediate(derive_params(10, 4), src)
        assert np.array_equal(inter.symbols, oracles.intermediate(10, src))

    def test_systematic_identity(self):
        for K in (10, 40, 100, 240):
            src = random_block(K, 8, K)
            inter = compute_intermediate(derive_params(K, 8), src)
            for i in range(K):
                assert generate_encoding_symbol(inter, i).data == src[i].tobytes()

    def test_first_repair_is_xor_of_tuple_columns(self):
        K = 20
        p = derive_params(K, 6)
        inter = compute_intermediate(p, random_block(K, 6, 2))
        row = oracles.lt_row(oracles.params(K), p.K_prime).astype(bool)
        expected = np.bitwise_xor.reduce(inter.symbols[row], axis=0).tobytes()
        assert generate_encoding_symbol(inter, p.K_prime).data == expected

    def test_deterministic_symbols(self):
        p = derive_params(12, 4)
        inter = compute_intermediate(p, random_block(12, 4, 3))
        assert generate_encoding_symbol(inter, 500) == generate_encoding_symbol(inter, 500)

    def test_isi_range(self):
        p = derive_params(4, 4)
        inter = compute_intermediate(p, random_block(4, 4, 0))
        with pytest.raises(ParameterError):
            generate_encoding_symbol(inter, 1 << 24)
        generate_encoding_symbol(inter, (1 << 24) - 1)

    @pytest.mark.parametrize("K,T", sorted(CRATE_VECTORS))
    def test_matches_rust_crate(self, K, T):
        data = bytes((i * 31 + 7) % 251 for i in range(K * T))
        p = derive_params(K, T)
        out = encode_block(p, [data[i * T:(i + 1) * T] for i in range(K)], 6)
        assert [s.data.hex() for s in out[K:]] == CRATE_VECTORS[(K, T)]
        assert [s.isi for s in out[K:]] == list(range(p.K_prime, p.K_prime + 6))

    def test_zero_repair_is_identity(self):
        src = random_block(9, 5, 4)
        out = encode_block(derive_params(9, 5), src, 0)
        assert [s.data for s in out] == [r.tobytes() for r in src]

    def test_repair_count_from_code_rate(self):
        assert repair_count_for(70, 0.2) == 280
        assert repair_count_for(70, 0.66) == 37
        assert repair_count_for(70, 0.33) == 143
        assert repair_count_for(70, 1.0) == 0
        with pytest.raises(ParameterError):
            repair_count_for(70, 0)

    def test_wrong_symbol_length_rejected(self):
        with pytest.raises(ParameterError):
            encode_block(derive_params(2, 4), [b"abcd", b"abc"], 1)

    def test_encoding_symbol_isi_bound(self):
        with pytest.raises(ParameterError):
            EncodingSymbol(1 << 24, b"")

    def test_encode_time_trend(self):
        def timed(K):
            p = derive_params(K, 16)
            src = random_block(K, 16, K)
            encode_block(p, src, 1)
            start = time.perf_counter()
            for _ in range(3):
                encode_block(p, src, 10)
            return time.perf_counter() - start

        # 10x more symbols must cost well under 100x (quadratic) time.
        assert timed(1000) / timed(100) < 100


class TestDecoding:
    def test_all_source_symbols(self):
        p = derive_params(30, 4)
        src = random_block(30, 4, 5)
        out = decode_block(p, {i: src[i].tobytes() for i in range(30)})
        assert out.status is DecodeStatus.SUCCESS
        assert out.source == [r.tobytes() for r in src]

    def test_gate_below_k_prime(self):
        p = derive_params(42, 4)
        syms = encode_block(p, random_block(42, 4, 6), 10)
        rx = as_received(p, syms[1:42])  # K' - 1 symbols
        out = decode_block(p, rx)
        assert out.status is DecodeStatus.INSUFFICIENT_SYMBOLS
        assert out.source is None

    def test_padding_counts_toward_r(self):
        p = derive_params(40, 4)  # two padding symbols
        syms = encode_block(p, random_block(40, 4, 7), 5)
        rx = as_received(p, syms[2:42])
        assert len(rx) == p.K_prime - p.padding
        out = decode_block(p, rx)
        assert out.status is not DecodeStatus.INSUFFICIENT_SYMBOLS
        assert out.overhead_used == 0

    def test_padding_isi_rejected(self):
        p = derive_params(40, 4)
        with pytest.raises(ParameterError, match="padding"):
            decode_block(p, {40: b"\x00" * 4})

    def test_recovers_with_repair(self):
        K, T = 40, 8
        p = derive_params(K, T)
        src = random_block(K, T, 8)
        syms = encode_block(p, src, 30)
        rng = np.random.default_rng(9)
        keep = rng.choice(len(syms), p.K_prime + 2 - p.padding, replace=False)
        out = decode_block(p, as_received(p, [syms[i] for i in keep]))
        assert out.ok
        assert out.source == [r.tobytes() for r in src]
        assert out.overhead_used == 2

    def test_superset_of_success_still_decodes(self):
        K, T = 20, 4
        p = derive_params(K, T)
        syms = encode_block(p, random_block(K, T, 10), 40)
        rng = np.random.default_rng(11)
        order = rng.permutation(len(syms))
        first_ok = None
        for n in range(p.K_prime - p.padding, len(syms) + 1):
            ok = decode_block(p, as_received(p, [syms[i] for i in order[:n]])).ok
            if first_ok is None and ok:
                first_ok = n
            if first_ok is not None:
                assert ok
        assert first_ok is not None

    def test_linearity(self):
        K, T = 12, 6
        p = derive_params(K, T)
        a, b = random_block(K, T, 12), random_block(K, T, 13)
        ea, eb = encode_block(p, a, 10), encode_block(p, b, 10)
        pick = [1, 3, 5, 7, 9, 11, 12, 14, 15, 16, 17, 18]
        rx = {ea[i].isi: bytes(x ^ y for x, y in zip(ea[i].data, eb[i].data)) for i in pick}
        out = decode_block(p, rx)
        assert out.ok
        assert out.source == [(a[i] ^ b[i]).tobytes() for i in range(K)]

    def test_matches_dense_reference_decoder(self):
        K, T = 15, 4
        p = derive_params(K, T)
        src = random_block(K, T, 14)
        syms = encode_block(p, src, 20)
        rng = np.random.default_rng(15)
        for _ in range(30):
            keep = rng.choice(len(syms), p.K_prime - p.padding, replace=False)
            rx = as_received(p, [syms[i] for i in keep])
            got = decode_block(p, rx)
            ref = oracles.decode(K, T, rx)
            assert got.ok == (ref is not None)
            if ref is not None:
                assert got.source == ref

    def test_wrong_length_symbol_rejected(self):
        p = derive_params(5, 4)
        with pytest.raises(ParameterError):
            decode_block(p, {0: b"abc"})

    @pytest.mark.slow
    def test_k40_drop_ten_add_twelve_repair(self):
        K, T = 40, 4
        p = derive_params(K, T)
        rng = np.random.default_rng(40)
        failures = 0
        trials = 10_000
        for _ in range(trials):
            src = rng.integers(0, 256, (K, T), dtype=np.uint8)
            inter = compute_intermediate(p, src)
            lost = set(rng.choice(K, 10, replace=False).tolist())
            rx = {i: src[i].tobytes() for i in range(K) if i not in lost}
            for isi in p.K_prime + rng.choice(1000, 12, replace=False):
                rx[int(isi)] = generate_encoding_symbol(inter, int(isi)).data
            failures += not decode_block(p, rx).ok
        assert failures / trials <= 1e-4


@settings(max_examples=40, deadline=None)
@given(K=st.integers(1, 80), T=st.integers(1, 24), seed=st.integers(0, 2**32 - 1))
def test_roundtrip_property(K, T, seed):
    p = derive_params(K, T)
    src = random_block(K, T, seed)
    syms = encode_block(p, src, K + 10)
    rng = np.random.default_rng(seed)
    keep = rng.choice(len(syms), min(len(syms), p.K_prime + 4 - p.padding), replace=False)
    out = decode_block(p, as_received(p, [syms[i] for i in keep]))
    if out.ok:
        assert out.source == [r.tobytes() for r in src]
    else:
        assert out.status is DecodeStatus.RANK_DEFICIENT


def test_large_block_roundtrip():
    # Well beyond the K <= 240 operating range; checked against the standard's parameters only.
    K, T = 2000, 4
    p = derive_params(K, T)
    src = random_block(K, T, 77)
    syms = encode_block(p, src, 300)
    rng = np.random.default_rng(78)
    keep = rng.choice(len(syms), p.K_prime + 2 - p.padding, replace=False)
    out = decode_block(p, as_received(p, [syms[i] for i in keep]))
    assert out.ok and out.source == [r.tobytes() for r in src]
