import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnsc.bitstream import (
    CEPSTRUM_QUANTIZERS,
    CORRELATION_QUANTIZER,
    DELTA_QUANTIZER,
    FRAMES_PER_PACKET,
    HEADER_BYTES,
    PACKET_BITS,
    PERIOD_QUANTIZER,
    BadMagicError,
    FeaturePacket,
    HeaderError,
    StreamHeader,
    SyncError,
    TruncatedStreamError,
    VersionError,
    bitrate,
    decode_features,
    dequantize_features,
    encode_features,
    group_index_bits,
    pack_stream,
    quantize_features,
    raw_quantizers,
    side_info_bitrate,
    unpack_stream,
)


def random_packet(rng, k):
    return FeaturePacket(
        k * FRAMES_PER_PACKET,
        tuple(int(rng.integers(q.levels)) for q in CEPSTRUM_QUANTIZERS),
        tuple(int(rng.integers(DELTA_QUANTIZER.levels)) for _ in range(FRAMES_PER_PACKET)),
        int(rng.integers(PERIOD_QUANTIZER.levels)),
        int(rng.integers(CORRELATION_QUANTIZER.levels)),
    )


def random_raw(rng):
    """Raw super-frame vector drawn inside every quantizer's range."""
    qs = raw_quantizers()
    raw = np.array([rng.uniform(q.lo, q.hi) for q in qs])
    raw[-2] = 16 * 2 ** raw[-2]  # period slot is quantized in log2 units
    return raw


class TestQuantizers:
    def test_bit_budget(self):
        total = 4 + sum(q.bits for q in CEPSTRUM_QUANTIZERS) + 4 * DELTA_QUANTIZER.bits
        total += PERIOD_QUANTIZER.bits + CORRELATION_QUANTIZER.bits
        assert total == PACKET_BITS == 64
        assert sum(q.bits for q in CEPSTRUM_QUANTIZERS) + 4 * DELTA_QUANTIZER.bits == 50

    def test_mid_scale_exact(self):
        qs = raw_quantizers()
        mid = [q.value(q.levels // 2) for q in qs]
        raw = np.array(mid)
        raw[-2] = 16 * 2 ** mid[-2]
        back = dequantize_features(quantize_features(raw))
        np.testing.assert_allclose(back, raw, rtol=0, atol=1e-12)

    def test_out_of_range_clamps(self):
        raw = random_raw(np.random.default_rng(0))
        raw[1] = 1e6
        p = quantize_features(raw)
        assert p.cepstra[1] == CEPSTRUM_QUANTIZERS[1].levels - 1
        assert p.clamped
        raw[1] = 0.0
        assert not quantize_features(raw).clamped

    def test_table_walk_oracle(self):
        rng = np.random.default_rng(1)
        qs = raw_quantizers()
        for _ in range(500):
            raw = random_raw(rng)
            back = dequantize_features(quantize_features(raw))
            for k, q in enumerate(qs):
                if k == len(qs) - 2:
                    err = abs(math.log2(back[k] / 16) - math.log2(raw[k] / 16))
                else:
                    err = abs(back[k] - raw[k])
                # nearest level of the table, found by walking every level
                nearest = min(abs(q.value(i) - (math.log2(raw[k] / 16) if k == len(qs) - 2 else raw[k])) for i in range(q.levels))
                assert err <= q.step / 2 + 1e-12
                assert err == pytest.approx(nearest, abs=1e-12)

    def test_non_finite_rejected(self):
        raw = random_raw(np.random.default_rng(2))
        raw[3] = np.nan
        with pytest.raises(ValueError):
            quantize_features(raw)

    def test_frame_round_trip_shape(self, rng):
        feats = np.column_stack([rng.normal(0, 0.3, (10, 18)), rng.uniform(40, 120, 10), rng.uniform(0, 1, 10)])
        feats[:, 0] -= 3
        packets = encode_features(feats)
        assert len(packets) == 3
        out = decode_features(packets)
        assert out.shape == (12, 20)


class TestGroupBits:
    @pytest.mark.parametrize("C,bits", [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (8, 3), (9, 4), (255, 8)])
    def test_values(self, C, bits):
        assert group_index_bits(C) == bits
        assert group_index_bits(C) == (0 if C == 1 else math.ceil(math.log2(C)))

    def test_monotone(self):
        bits = [group_index_bits(c) for c in range(1, 300)]
        assert all(a <= b for a, b in zip(bits, bits[1:]))

    def test_invalid(self):
        with pytest.raises(ValueError):
            group_index_bits(0)


class TestPacking:
    def test_header_only(self):
        h = StreamHeader(4, 2)
        data = pack_stream(h, [])
        assert len(data) == HEADER_BYTES
        assert unpack_stream(data) == (h, [])

    def test_hundred_packets(self, rng):
        packets = [random_packet(rng, k) for k in range(100)]
        data = pack_stream(StreamHeader(4, 1), packets)
        h, back = unpack_stream(data)
        assert back == packets and h == StreamHeader(4, 1)
        assert pack_stream(h, back) == data

    def test_fuzz_thousand_streams(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            C = int(rng.integers(1, 256))
            header = StreamHeader(C, int(rng.integers(C)))
            packets = [random_packet(rng, k) for k in range(int(rng.integers(0, 40)))]
            data = pack_stream(header, packets)
            h2, p2 = unpack_stream(data)
            assert (h2, p2) == (header, packets)
            assert pack_stream(h2, p2) == data

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 30))
    def test_round_trip_property(self, seed, n):
        rng = np.random.default_rng(seed)
        packets = [random_packet(rng, k) for k in range(n)]
        data = pack_stream(StreamHeader(3, 2), packets)
        assert pack_stream(*unpack_stream(data)) == data

    def test_truncated_mid_packet(self, rng):
        data = pack_stream(StreamHeader(), [random_packet(rng, k) for k in range(5)])
        with pytest.raises(TruncatedStreamError) as exc:
            unpack_stream(data[: HEADER_BYTES + 3 * 8 + 5])
        assert exc.value.packet_index == 3
        assert "packet 3" in str(exc.value)

    def test_bad_magic_and_version(self, rng):
        data = pack_stream(StreamHeader(), [random_packet(rng, 0)])
        with pytest.raises(BadMagicError):
            unpack_stream(b"XXXX" + data[4:])
        with pytest.raises(VersionError):
            unpack_stream(data[:4] + bytes([9]) + data[5:])

    def test_group_index_out_of_range(self):
        with pytest.raises(HeaderError):
            pack_stream(StreamHeader(4, 4), [])
        data = bytearray(pack_stream(StreamHeader(4, 3), []))
        data[9] = 7
        with pytest.raises(HeaderError):
            unpack_stream(bytes(data))

    def test_sync_error(self, rng):
        data = bytearray(pack_stream(StreamHeader(), [random_packet(rng, k) for k in range(3)]))
        data[HEADER_BYTES + 8] ^= 0xF0
        with pytest.raises(SyncError):
            unpack_stream(bytes(data))


class TestBitrate:
    def test_v1_rate(self, rng):
        packets = [random_packet(rng, k) for k in range(25)]
        assert bitrate(pack_stream(StreamHeader(4, 0), packets)) == 1600.0

    def test_ten_seconds(self, rng):
        packets = [random_packet(rng, k) for k in range(250)]
        assert bitrate(packets) == 1600.0

    def test_empty(self):
        with pytest.raises(ValueError):
            bitrate(pack_stream(StreamHeader(), []))

    def test_side_info(self):
        h = StreamHeader(4, 0)
        assert side_info_bitrate(h, 10.0) == pytest.approx(0.2)
        assert side_info_bitrate(h, 10.0, interval=1.0) == 2.0
        assert side_info_bitrate(StreamHeader(1, 0), 10.0) == 0.0
