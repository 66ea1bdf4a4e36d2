"""The ``.spc`` container: an 18-byte header followed by packed 10-bit indices.

Layout (integers little-endian)::

    offset  size  field
    0       4     magic b"SPC1"
    4       4     sample_rate      u32
    8       1     num_stages       u8
    9       1     codebook_bits    u8 (always 10)
    10      4     frame_count      u32
    14      4     original_length  u32 (samples)
    18      ...   payload

The payload holds ``frame_count * num_stages`` indices, frame-major and
stage-minor, each written MSB-first in ``codebook_bits`` bits, zero-padded
to a whole byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, CorruptionError, FormatError, UndefinedMetricError

MAGIC = b"SPC1"
HEADER = struct.Struct("<4sIBBII")
HEADER_SIZE = HEADER.size
CODEBOOK_BITS = 10
SAMPLES_PER_FRAME = 320


@dataclass(frozen=True)
class BitstreamHeader:
    num_stages: int
    frame_count: int
    original_length: int
    sample_rate: int = 16000
    codebook_bits: int = CODEBOOK_BITS
    magic: bytes = MAGIC

    def validate(self):
        if self.magic != MAGIC:
            raise FormatError(f"bad magic {self.magic!r}")
        if self.codebook_bits != CODEBOOK_BITS:
            raise FormatError(f"unsupported codebook_bits {self.codebook_bits}")
        if not 0 <= self.num_stages <= 255:
            raise ContractError("num_stages must fit in one byte")
        if self.original_length > self.frame_count * SAMPLES_PER_FRAME:
            raise CorruptionError(
                f"original_length {self.original_length} exceeds {self.frame_count} frames")

    @property
    def payload_bits(self) -> int:
        return self.frame_count * self.num_stages * self.codebook_bits

    @property
    def payload_bytes(self) -> int:
        return (self.payload_bits + 7) // 8

    def to_bytes(self) -> bytes:
        return HEADER.pack(self.magic, self.sample_rate, self.num_stages, self.codebook_bits,
                           self.frame_count, self.original_length)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitstreamHeader":
        if len(data) < HEADER_SIZE:
            raise CorruptionError(f"blob shorter than the {HEADER_SIZE}-byte header")
        magic, rate, nq, bits, frames, length = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        return cls(nq, frames, length, rate, bits, magic)


@dataclass(frozen=True)
class BitstreamBlob:
    header: BitstreamHeader
    payload: bytes

    def to_bytes(self) -> bytes:
        return self.header.to_bytes() + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitstreamBlob":
        header = BitstreamHeader.from_bytes(data)
        return cls(header, bytes(data[HEADER_SIZE:]))


def _bit_weights(bits):
    return np.arange(bits - 1, -1, -1, dtype=np.int64)


def pack(codes, header: BitstreamHeader) -> BitstreamBlob:
    """Pack a (frames, stages) index grid into a blob."""
    header.validate()
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2 or codes.shape != (header.frame_count, header.num_stages):
        raise ContractError(
            f"codes shape {codes.shape} does not match header "
            f"({header.frame_count}, {header.num_stages})")
    if codes.size and (codes.min() < 0 or codes.max() >= 1 << header.codebook_bits):
        raise ContractError(f"indices must fit in {header.codebook_bits} bits")
    bits = (codes.reshape(-1, 1) >> _bit_weights(header.codebook_bits)) & 1
    payload = np.packbits(bits.astype(np.uint8).reshape(-1)).tobytes()
    return BitstreamBlob(header, payload)


def unpack(blob: BitstreamBlob):
    """Inverse of :func:`pack`; returns ``(header, codes)``."""
    header = blob.header
    header.validate()
    if len(blob.payload) != header.payload_bytes:
        raise CorruptionError(
            f"payload is {len(blob.payload)} bytes, header implies {header.payload_bytes}")
    n = header.frame_count * header.num_stages
    bits = np.unpackbits(np.frombuffer(blob.payload, dtype=np.uint8))
    if bits[header.payload_bits:].any():
        raise CorruptionError("non-zero padding bits after payload")
    bits = bits[: header.payload_bits].reshape(n, header.codebook_bits).astype(np.int64)
    codes = (bits << _bit_weights(header.codebook_bits)).sum(axis=1)
    return header, codes.reshape(header.frame_count, header.num_stages)


def file_bitrate(blob: BitstreamBlob) -> float:
    """Payload bits per second of audio; the header is not counted."""
    h = blob.header
    if h.original_length == 0:
        raise UndefinedMetricError("bitrate is undefined for zero-length audio")
    return h.payload_bits / (h.original_length / h.sample_rate)


def header_overhead_bits(blob: BitstreamBlob) -> int:
    return 8 * HEADER_SIZE


def write_spc(blob: BitstreamBlob, path) -> None:
    Path(path).write_bytes(blob.to_bytes())


def read_spc(path) -> BitstreamBlob:
    return BitstreamBlob.from_bytes(Path(path).read_bytes())
