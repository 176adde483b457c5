"""Feature quantization and the packed 1.6 kbps stream.

Four 10 ms frames form a 40 ms packet of exactly 64 bits, written MSB first:

    bits  field
    4     sync: packet index mod 16
    6     c0 averaged over the four frames
    4x2   per-frame c0 offset from that average (differential)
    36    c1..c17 averaged over the four frames (5,4,3,3,3, six x 2, six x 1)
    7     pitch period (log scale, 16..256 samples), median over the frames
    3     pitch correlation (0..1), mean over the frames

The stream file is a 14-byte header followed by 8 bytes per packet; see
FORMAT.md for a byte-level example.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .dsp.features import FRAME_SIZE, N_BANDS, N_FEATURES, PITCH_MAX, PITCH_MIN, SAMPLE_RATE

FRAMES_PER_PACKET = 4
PACKET_BITS = 64
PACKET_BYTES = PACKET_BITS // 8
PACKET_SECONDS = FRAMES_PER_PACKET * FRAME_SIZE / SAMPLE_RATE
STREAM_MAGIC = b"PNSS"
STREAM_VERSION = 1
TABLE_ID = 1
HEADER_FORMAT = "<4sBBHBBI"
HEADER_BYTES = struct.calcsize(HEADER_FORMAT)
SYNC_BITS = 4
RAW_SIZE = N_BANDS + FRAMES_PER_PACKET + 2  # mean cepstrum, c0 offsets, period, correlation


class StreamError(ValueError):
    """Base class for stream decode failures."""


class BadMagicError(StreamError):
    pass


class VersionError(StreamError):
    pass


class TruncatedStreamError(StreamError):
    def __init__(self, packet_index: int, message: str):
        super().__init__(message)
        self.packet_index = packet_index


class HeaderError(StreamError):
    pass


class SyncError(StreamError):
    def __init__(self, packet_index: int, message: str):
        super().__init__(message)
        self.packet_index = packet_index


@dataclass(frozen=True)
class UniformQuantizer:
    lo: float
    hi: float
    bits: int

    @property
    def levels(self) -> int:
        return 1 << self.bits

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.levels - 1)

    def quantize(self, x: float) -> tuple[int, bool]:
        clamped = not (self.lo <= x <= self.hi)
        i = int(np.clip(np.round((x - self.lo) / self.step), 0, self.levels - 1))
        return i, clamped

    def value(self, index: int) -> float:
        return self.lo + index * self.step


def _sym(bits: int, half: float) -> UniformQuantizer:
    return UniformQuantizer(-half, half, bits)


LOG_PERIOD_SPAN = math.log2(PITCH_MAX / PITCH_MIN)

# Bit allocation per slot; order follows the raw super-frame vector.
CEPSTRUM_QUANTIZERS = (
    UniformQuantizer(-10.0, 2.0, 6),
    UniformQuantizer(-1.0, 3.5, 5),
    UniformQuantizer(-2.5, 1.5, 4),
    _sym(3, 1.5),
    _sym(3, 1.0),
    _sym(3, 0.7),
    _sym(2, 0.6),
    _sym(2, 0.5),
    _sym(2, 0.6),
    _sym(2, 0.5),
    _sym(2, 0.4),
    _sym(2, 0.3),
    _sym(1, 0.15),
    _sym(1, 0.1),
    _sym(1, 0.1),
    _sym(1, 0.08),
    _sym(1, 0.08),
    _sym(1, 0.06),
)
DELTA_QUANTIZER = _sym(2, 0.6)
PERIOD_QUANTIZER = UniformQuantizer(0.0, LOG_PERIOD_SPAN, 7)
CORRELATION_QUANTIZER = UniformQuantizer(0.0, 1.0, 3)

assert SYNC_BITS + sum(q.bits for q in CEPSTRUM_QUANTIZERS) + FRAMES_PER_PACKET * DELTA_QUANTIZER.bits + 10 == PACKET_BITS


def raw_quantizers() -> list[UniformQuantizer]:
    """Quantizer for each slot of the raw super-frame vector (period slot in log2 units)."""
    return [*CEPSTRUM_QUANTIZERS, *[DELTA_QUANTIZER] * FRAMES_PER_PACKET, PERIOD_QUANTIZER, CORRELATION_QUANTIZER]


@dataclass(frozen=True)
class FeaturePacket:
    frame_index: int
    cepstra: tuple[int, ...]
    c0_offsets: tuple[int, ...]
    pitch_period: int
    pitch_correlation: int
    clamped: bool = field(default=False, compare=False)

    @property
    def packet_index(self) -> int:
        return self.frame_index // FRAMES_PER_PACKET

    def validate(self) -> None:
        if len(self.cepstra) != N_BANDS or len(self.c0_offsets) != FRAMES_PER_PACKET:
            raise ValueError("packet has wrong number of fields")
        for idx, q in zip(self.cepstra, CEPSTRUM_QUANTIZERS):
            if not 0 <= idx < q.levels:
                raise ValueError(f"cepstrum index {idx} outside {q.bits}-bit range")
        for idx in self.c0_offsets:
            if not 0 <= idx < DELTA_QUANTIZER.levels:
                raise ValueError(f"c0 offset index {idx} out of range")
        if not 0 <= self.pitch_period < PERIOD_QUANTIZER.levels:
            raise ValueError("pitch period index out of range")
        if not 0 <= self.pitch_correlation < CORRELATION_QUANTIZER.levels:
            raise ValueError("pitch correlation index out of range")


@dataclass(frozen=True)
class StreamHeader:
    n_groups: int = 1
    group_index: int = 0
    sample_rate: int = SAMPLE_RATE
    version: int = STREAM_VERSION
    table_id: int = TABLE_ID

    def validate(self) -> None:
        if not 1 <= self.n_groups <= 255:
            raise HeaderError(f"group count {self.n_groups} outside 1..255")
        if not 0 <= self.group_index < self.n_groups:
            raise HeaderError(f"group index {self.group_index} not below group count {self.n_groups}")
        if self.sample_rate != SAMPLE_RATE:
            raise HeaderError(f"sample rate {self.sample_rate} unsupported")
        if self.table_id != TABLE_ID:
            raise HeaderError(f"unknown quantizer table {self.table_id}")


def group_index_bits(n_groups: int) -> int:
    """Bits needed to signal one of ``n_groups`` decoders: ceil(log2 C)."""
    if n_groups < 1:
        raise ValueError("need at least one group")
    return (n_groups - 1).bit_length()


# -- super-frame features ----------------------------------------------------------


def summarize_superframe(frames) -> np.ndarray:
    """Reduce four per-frame feature rows ``(4, 20)`` to the raw packet vector."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape != (FRAMES_PER_PACKET, N_FEATURES):
        raise ValueError(f"expected {FRAMES_PER_PACKET}x{N_FEATURES} frame features")
    mean = frames[:, :N_BANDS].mean(axis=0)
    offsets = frames[:, 0] - mean[0]
    period = float(np.median(frames[:, N_BANDS]))
    corr = float(frames[:, N_BANDS + 1].mean())
    return np.concatenate([mean, offsets, [period, corr]])


def quantize_features(raw, frame_index: int = 0) -> FeaturePacket:
    """Quantize a raw super-frame vector; out-of-range values clamp and set ``clamped``."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (RAW_SIZE,) or not np.all(np.isfinite(raw)):
        raise ValueError("raw features must be 24 finite values")
    clamped = False
    ceps = []
    for x, q in zip(raw[:N_BANDS], CEPSTRUM_QUANTIZERS):
        i, c = q.quantize(x)
        ceps.append(i)
        clamped |= c
    offs = []
    for x in raw[N_BANDS : N_BANDS + FRAMES_PER_PACKET]:
        i, c = DELTA_QUANTIZER.quantize(x)
        offs.append(i)
        clamped |= c
    period = raw[-2]
    log_period = math.log2(max(period, 1e-9) / PITCH_MIN)
    pi, c = PERIOD_QUANTIZER.quantize(log_period)
    clamped |= c
    ci, c = CORRELATION_QUANTIZER.quantize(raw[-1])
    clamped |= c
    return FeaturePacket(frame_index, tuple(ceps), tuple(offs), pi, ci, clamped)


def dequantize_features(packet: FeaturePacket) -> np.ndarray:
    ceps = [q.value(i) for i, q in zip(packet.cepstra, CEPSTRUM_QUANTIZERS)]
    offs = [DELTA_QUANTIZER.value(i) for i in packet.c0_offsets]
    period = PITCH_MIN * 2.0 ** PERIOD_QUANTIZER.value(packet.pitch_period)
    corr = CORRELATION_QUANTIZER.value(packet.pitch_correlation)
    return np.array([*ceps, *offs, period, corr])


def expand_superframe(raw) -> np.ndarray:
    """Per-frame feature rows ``(4, 20)`` implied by a (dequantized) raw vector."""
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty((FRAMES_PER_PACKET, N_FEATURES))
    out[:, :N_BANDS] = raw[:N_BANDS]
    out[:, 0] = raw[0] + raw[N_BANDS : N_BANDS + FRAMES_PER_PACKET]
    out[:, N_BANDS] = raw[-2]
    out[:, N_BANDS + 1] = raw[-1]
    return out


def encode_features(frame_feats) -> list[FeaturePacket]:
    """Quantize per-frame features ``(n, 20)``; a partial last packet repeats its final frame."""
    feats = np.asarray(frame_feats, dtype=np.float64)
    n = feats.shape[0]
    if n == 0:
        return []
    n_packets = -(-n // FRAMES_PER_PACKET)
    padded = np.concatenate([feats, np.repeat(feats[-1:], n_packets * FRAMES_PER_PACKET - n, axis=0)])
    return [
        quantize_features(summarize_superframe(padded[k * FRAMES_PER_PACKET : (k + 1) * FRAMES_PER_PACKET]), k * FRAMES_PER_PACKET)
        for k in range(n_packets)
    ]


def decode_features(packets) -> np.ndarray:
    """Dequantized per-frame features ``(4 * len(packets), 20)``."""
    if not packets:
        return np.zeros((0, N_FEATURES))
    return np.concatenate([expand_superframe(dequantize_features(p)) for p in packets])


def quantize_frames(frame_feats) -> np.ndarray:
    """What the receiver sees: features after a quantize/dequantize round trip."""
    feats = np.asarray(frame_feats, dtype=np.float64)
    return decode_features(encode_features(feats))[: feats.shape[0]]


# -- packing ---------------------------------------------------------------------


def _packet_fields(p: FeaturePacket):
    yield p.packet_index % (1 << SYNC_BITS), SYNC_BITS
    yield p.cepstra[0], CEPSTRUM_QUANTIZERS[0].bits
    for i in p.c0_offsets:
        yield i, DELTA_QUANTIZER.bits
    for i, q in zip(p.cepstra[1:], CEPSTRUM_QUANTIZERS[1:]):
        yield i, q.bits
    yield p.pitch_period, PERIOD_QUANTIZER.bits
    yield p.pitch_correlation, CORRELATION_QUANTIZER.bits


def pack_packet(p: FeaturePacket) -> bytes:
    p.validate()
    word = 0
    for value, bits in _packet_fields(p):
        word = (word << bits) | value
    return word.to_bytes(PACKET_BYTES, "big")


def unpack_packet(chunk: bytes, packet_index: int) -> FeaturePacket:
    word = int.from_bytes(chunk, "big")
    pos = PACKET_BITS

    def take(bits: int) -> int:
        nonlocal pos
        pos -= bits
        return (word >> pos) & ((1 << bits) - 1)

    sync = take(SYNC_BITS)
    if sync != packet_index % (1 << SYNC_BITS):
        raise SyncError(packet_index, f"packet {packet_index}: sync field {sync} does not match position")
    c0 = take(CEPSTRUM_QUANTIZERS[0].bits)
    offs = tuple(take(DELTA_QUANTIZER.bits) for _ in range(FRAMES_PER_PACKET))
    rest = tuple(take(q.bits) for q in CEPSTRUM_QUANTIZERS[1:])
    period = take(PERIOD_QUANTIZER.bits)
    corr = take(CORRELATION_QUANTIZER.bits)
    return FeaturePacket(packet_index * FRAMES_PER_PACKET, (c0, *rest), offs, period, corr)


def pack_stream(header: StreamHeader, packets) -> bytes:
    header.validate()
    for k, p in enumerate(packets):
        if p.packet_index != k or p.frame_index % FRAMES_PER_PACKET:
            raise ValueError(f"packet {k} carries frame index {p.frame_index}")
    head = struct.pack(
        HEADER_FORMAT,
        STREAM_MAGIC,
        header.version,
        header.table_id,
        header.sample_rate,
        header.n_groups,
        header.group_index,
        len(packets),
    )
    return head + b"".join(pack_packet(p) for p in packets)


def unpack_header(data: bytes) -> tuple[StreamHeader, int]:
    if len(data) < HEADER_BYTES:
        if data[:4] != STREAM_MAGIC[: len(data[:4])]:
            raise BadMagicError("not a stream file")
        raise TruncatedStreamError(0, f"stream header truncated ({len(data)} of {HEADER_BYTES} bytes)")
    magic, version, table, rate, n_groups, group, n_packets = struct.unpack_from(HEADER_FORMAT, data)
    if magic != STREAM_MAGIC:
        raise BadMagicError(f"bad stream magic {magic!r}")
    if version != STREAM_VERSION:
        raise VersionError(f"unsupported stream version {version}")
    header = StreamHeader(n_groups, group, rate, version, table)
    header.validate()
    return header, n_packets


def unpack_stream(data: bytes) -> tuple[StreamHeader, list[FeaturePacket]]:
    header, n_packets = unpack_header(data)
    payload = memoryview(data)[HEADER_BYTES:]
    if len(payload) < n_packets * PACKET_BYTES:
        k = len(payload) // PACKET_BYTES
        raise TruncatedStreamError(k, f"stream truncated in packet {k} of {n_packets}")
    if len(payload) > n_packets * PACKET_BYTES:
        raise StreamError(f"{len(payload) - n_packets * PACKET_BYTES} trailing bytes after {n_packets} packets")
    packets = [unpack_packet(bytes(payload[k * PACKET_BYTES : (k + 1) * PACKET_BYTES]), k) for k in range(n_packets)]
    return header, packets


def read_packets(data: bytes) -> tuple[StreamHeader, list[FeaturePacket], StreamError | None]:
    """Like :func:`unpack_stream` but keeps every packet before the first bad one.

    Header problems still raise; a damaged payload is reported as the third
    element instead.
    """
    header, n_packets = unpack_header(data)
    payload = memoryview(data)[HEADER_BYTES:]
    packets = []
    for k in range(n_packets):
        chunk = bytes(payload[k * PACKET_BYTES : (k + 1) * PACKET_BYTES])
        if len(chunk) < PACKET_BYTES:
            return header, packets, TruncatedStreamError(k, f"stream truncated in packet {k} of {n_packets}")
        try:
            packets.append(unpack_packet(chunk, k))
        except StreamError as exc:
            return header, packets, exc
    if len(payload) > n_packets * PACKET_BYTES:
        return header, packets, StreamError(f"{len(payload) - n_packets * PACKET_BYTES} trailing bytes after {n_packets} packets")
    return header, packets, None


def stream_duration(n_packets: int) -> float:
    return n_packets * PACKET_SECONDS


def bitrate(stream) -> float:
    """Payload bits per second, excluding the one-time header."""
    if isinstance(stream, (bytes, bytearray)):
        _, packets = unpack_stream(bytes(stream))
        n = len(packets)
    elif isinstance(stream, tuple):
        n = len(stream[1])
    else:
        n = len(stream)
    if n == 0:
        raise ValueError("bitrate of an empty stream is undefined")
    # integer numerator and denominator keep the v1 rate exact
    return n * PACKET_BITS * SAMPLE_RATE / (n * FRAMES_PER_PACKET * FRAME_SIZE)


def side_info_bitrate(header: StreamHeader, duration: float, interval: float | None = None) -> float:
    """Amortized group-index cost: once per stream, or once per ``interval`` seconds."""
    bits = group_index_bits(header.n_groups)
    if interval is None:
        return bits / duration
    return bits / interval
