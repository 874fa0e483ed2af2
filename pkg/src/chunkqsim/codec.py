"""Per-chunk amplitude codecs.

LOSSY_PQ: previous-value prediction with uniform quantization (absolute error
bound per real/imaginary component), zigzag 16-bit codes split into low/high
byte planes, each plane run-length encoded as (byte, count) pairs.

LOSSLESS_RLE: raw little-endian float64 values, byte-plane shuffled, each
plane run-length encoded the same way.

Payload layout (little-endian)::

    u8  codec_id
    f64 error_bound
    u32 element_count
    u32 unpredictable_count
    RLE planes ...
    f64 unpredictable values in order of occurrence (LOSSY_PQ only)

Value planes are ordered real part then imaginary part.
"""
from __future__ import annotations

import enum
import math
import struct
import sys
import zlib
from itertools import accumulate
from typing import NamedTuple

import numpy as np
from numba import njit

# the numba kernels write multi-byte fields in native order
if sys.byteorder != "little":
    raise ImportError("chunkqsim.codec requires a little-endian host")

HEADER = struct.Struct("<BdII")
HEADER_SIZE = HEADER.size
SENTINEL = -(1 << 15)


class CodecId(enum.IntEnum):
    LOSSY_PQ = 1
    LOSSLESS_RLE = 2


class CodecError(ValueError):
    pass


class ChecksumError(CodecError):
    pass


class CompressedChunk(NamedTuple):
    """Immutable compressed record (a tuple: cheap to build on the hot path)."""

    chunk_index: int
    codec_id: CodecId
    error_bound: float
    element_count: int
    payload: bytes
    checksum: int

    @property
    def nbytes(self) -> int:
        return len(self.payload)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(nogil=True, cache=True)
def _rle_into(plane, out, pos):
    n = plane.shape[0]
    i = 0
    while i < n:
        b = plane[i]
        j = i + 1
        while j < n and j - i < 255 and plane[j] == b:
            j += 1
        out[pos] = b
        out[pos + 1] = j - i
        pos += 2
        i = j
    return pos


@njit(nogil=True, cache=True)
def _unrle(src, pos, dst):
    """Expand pairs from src[pos:] until dst is full. Returns the new position, or -1 if malformed."""
    n = dst.shape[0]
    k = 0
    while k < n:
        if pos + 1 >= src.shape[0]:
            return -1
        b = src[pos]
        cnt = np.int64(src[pos + 1])
        if cnt == 0 or k + cnt > n:
            return -1
        for t in range(cnt):
            dst[k + t] = b
        k += cnt
        pos += 2
    return pos


@njit(nogil=True, cache=True)
def _put_header(out, start, codec_id, error_bound, count, nraw):
    out[start] = codec_id
    eb = np.empty(1, np.float64)
    eb[0] = error_bound
    out[start + 1 : start + 9] = eb.view(np.uint8)
    for k in range(4):
        out[start + 9 + k] = (count >> (8 * k)) & 0xFF
        out[start + 13 + k] = (nraw >> (8 * k)) & 0xFF


@njit(nogil=True, cache=True)
def _u32(buf, pos):
    return np.int64(buf[pos]) | (np.int64(buf[pos + 1]) << 8) | (np.int64(buf[pos + 2]) << 16) | (np.int64(buf[pos + 3]) << 24)


@njit(nogil=True, cache=True)
def _lossy_into(a, error_bound, exact, out, start):
    """Predict/quantize the real plane then the imaginary plane and write one payload at out[start:].

    The predictor restarts at 0 for each plane. Values listed in `exact`
    (amplitude offsets), non-finite values and any value whose reconstruction
    would miss the bound take the unpredictable path. Returns the end offset.
    """
    n = a.shape[0]
    total = 2 * n
    two_eb = 2.0 * error_bound
    force = np.zeros(total, np.bool_)
    for t in range(exact.shape[0]):
        force[exact[t]] = True
        force[exact[t] + n] = True
    low = np.empty(total, np.uint8)
    high = np.empty(total, np.uint8)
    raws = np.empty(total, np.float64)
    nraw = 0
    pred = 0.0
    for i in range(total):
        if i == n:
            pred = 0.0
        v = a[i].real if i < n else a[i - n].imag
        raw = force[i] or not math.isfinite(v)
        code = 0
        r = 0.0
        if not raw:
            q = np.rint((v - pred) / two_eb)
            if not (abs(q) < 32768.0):
                raw = True
            else:
                code = np.int64(q)
                r = pred + code * two_eb
                # guards the bound against floating-point rounding at the edge
                if not (abs(r - v) <= error_bound):
                    raw = True
        if raw:
            code = -32768
            raws[nraw] = v
            nraw += 1
            r = v
        z = ((code << 1) ^ (code >> 63)) & 0xFFFF
        low[i] = z & 0xFF
        high[i] = z >> 8
        pred = r
    _put_header(out, start, 1, error_bound, n, nraw)
    pos = _rle_into(low, out, start + HEADER_SIZE)
    pos = _rle_into(high, out, pos)
    out[pos : pos + 8 * nraw] = raws[:nraw].copy().view(np.uint8)
    return pos + 8 * nraw


@njit(nogil=True, cache=True)
def _lossless_into(a, out, start):
    n = a.shape[0]
    count = 2 * n
    values = np.empty(count, np.float64)
    for i in range(n):
        values[i] = a[i].real
        values[n + i] = a[i].imag
    raw = values.view(np.uint8)
    _put_header(out, start, 2, 0.0, n, 0)
    plane = np.empty(count, np.uint8)
    pos = start + HEADER_SIZE
    for k in range(8):
        for i in range(count):
            plane[i] = raw[8 * i + k]
        pos = _rle_into(plane, out, pos)
    return pos


@njit(nogil=True, cache=True)
def _max_payload(n):
    # lossless worst case: 8 planes of 2n bytes, each doubling under RLE
    return HEADER_SIZE + 32 * n


@njit(nogil=True, cache=True)
def _compress_one(a, error_bound, exact):
    out = np.empty(_max_payload(a.shape[0]), np.uint8)
    if error_bound > 0:
        end = _lossy_into(a, error_bound, exact, out, 0)
    else:
        end = _lossless_into(a, out, 0)
    return out[:end]


@njit(nogil=True, cache=True)
def _compress_rows(rows, error_bound):
    """Compress every row of a (k, n) array; returns (concatenated payloads, k+1 offsets)."""
    k, n = rows.shape
    out = np.empty(k * _max_payload(n), np.uint8)
    offsets = np.empty(k + 1, np.int64)
    offsets[0] = 0
    no_exact = np.empty(0, np.int64)
    pos = 0
    for r in range(k):
        if error_bound > 0:
            pos = _lossy_into(rows[r], error_bound, no_exact, out, pos)
        else:
            pos = _lossless_into(rows[r], out, pos)
        offsets[r + 1] = pos
    return out[:pos], offsets


@njit(nogil=True, cache=True)
def _decode_from(payload, n, out):
    """Decode one payload into `out` (length n). Status 0 ok, 1 malformed, 2 count mismatch."""
    size = payload.shape[0]
    if size < HEADER_SIZE:
        return 1
    codec_id = payload[0]
    error_bound = payload[1:9].copy().view(np.float64)[0]
    if _u32(payload, 9) != n:
        return 2
    nraw = _u32(payload, 13)
    total = 2 * n
    values = np.empty(total, np.float64)
    if codec_id == 2:
        if nraw != 0:
            return 1
        raw = values.view(np.uint8)
        plane = np.empty(total, np.uint8)
        pos = HEADER_SIZE
        for k in range(8):
            pos = _unrle(payload, pos, plane)
            if pos < 0:
                return 1
            for i in range(total):
                raw[8 * i + k] = plane[i]
        if pos != size:
            return 1
    elif codec_id == 1:
        if not error_bound > 0:
            return 1
        end = size - 8 * nraw
        if end < HEADER_SIZE:
            return 1
        body = payload[:end]
        low = np.empty(total, np.uint8)
        high = np.empty(total, np.uint8)
        pos = _unrle(body, HEADER_SIZE, low)
        if pos < 0:
            return 1
        pos = _unrle(body, pos, high)
        if pos != end:
            return 1
        raws = payload[end:].copy().view(np.float64)
        two_eb = 2.0 * error_bound
        k = 0
        pred = 0.0
        for i in range(total):
            if i == n:
                pred = 0.0
            z = np.int64(low[i]) | (np.int64(high[i]) << 8)
            code = (z >> 1) ^ -(z & 1)
            if code == -32768:
                if k >= nraw:
                    return 1
                r = raws[k]
                k += 1
            else:
                r = pred + code * two_eb
            values[i] = r
            pred = r
        if k != nraw:
            return 1
    else:
        return 1
    for i in range(n):
        out[i] = complex(values[i], values[n + i])
    return 0


@njit(nogil=True, cache=True)
def _decompress_rows(data, offsets, out):
    """Decode consecutive payloads data[offsets[r]:offsets[r+1]] into out[r]; returns (row, status) of the first failure."""
    for r in range(out.shape[0]):
        st = _decode_from(data[offsets[r] : offsets[r + 1]], out.shape[1], out[r])
        if st:
            return r, st
    return -1, 0


@njit(nogil=True, cache=True)
def _fnv1a64(data, h):
    for i in range(data.shape[0]):
        h ^= np.uint64(data[i])
        h *= np.uint64(0x100000001B3)
    return h


FNV_OFFSET = 0xCBF29CE484222325


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    return int(_fnv1a64(np.frombuffer(data, np.uint8), np.uint64(h)))


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


_NO_EXACT = np.empty(0, np.int64)
_STATUS = {1: "malformed payload", 2: "payload element count disagrees with metadata"}


def _check_bound(error_bound: float) -> float:
    if not (error_bound >= 0 and math.isfinite(error_bound)):
        raise CodecError(f"error bound must be finite and non-negative, got {error_bound}")
    return float(error_bound)


def _check_length(n: int):
    if n < 1 or n & (n - 1):
        raise CodecError(f"chunk length must be a power of two, got {n}")


def _codec_for(error_bound: float) -> CodecId:
    return CodecId.LOSSY_PQ if error_bound > 0 else CodecId.LOSSLESS_RLE


def compress(amplitudes: np.ndarray, error_bound: float, chunk_index: int = 0, *, exact=None) -> CompressedChunk:
    """Compress one chunk; error_bound == 0 selects the lossless codec.

    `exact` optionally lists amplitude offsets whose real and imaginary parts
    must be stored verbatim (routed through the unpredictable-value path).
    """
    error_bound = _check_bound(error_bound)
    a = np.asarray(amplitudes, dtype=np.complex128)
    if a.ndim != 1:
        raise CodecError("amplitude chunk must be one-dimensional")
    _check_length(a.shape[0])
    ex = _NO_EXACT if exact is None else np.asarray(exact, dtype=np.int64)
    payload = _compress_one(a, error_bound, ex).tobytes()
    return CompressedChunk(chunk_index, _codec_for(error_bound), error_bound, a.shape[0], payload, zlib.crc32(payload))


def compress_many(rows: np.ndarray, error_bound: float, chunk_indices) -> list[CompressedChunk]:
    """Compress each row of a (k, 2**c) array independently, in a single kernel call."""
    error_bound = _check_bound(error_bound)
    rows = np.ascontiguousarray(rows, dtype=np.complex128)
    _check_length(rows.shape[1])
    data, offsets = _compress_rows(rows, error_bound)
    blob = data.tobytes()
    codec, n = _codec_for(error_bound), rows.shape[1]
    offs = offsets.tolist()
    payloads = [blob[a:b] for a, b in zip(offs, offs[1:])]
    make = CompressedChunk._make
    return [
        make((idx, codec, error_bound, n, p, crc))
        for idx, p, crc in zip(chunk_indices, payloads, map(zlib.crc32, payloads))
    ]


def _verify(cc: CompressedChunk):
    payload = cc.payload
    if zlib.crc32(payload) != cc.checksum:
        raise ChecksumError(f"checksum mismatch in chunk {cc.chunk_index}")
    if not payload or payload[0] != cc.codec_id:
        raise CodecError(f"payload codec id disagrees with chunk {cc.chunk_index} metadata")


def decompress(cc: CompressedChunk) -> np.ndarray:
    """Reconstruct the complex128 amplitudes of `cc`."""
    _verify(cc)
    out = np.empty(cc.element_count, np.complex128)
    status = _decode_from(np.frombuffer(cc.payload, np.uint8), cc.element_count, out)
    if status:
        raise CodecError(f"{_STATUS[status]} in chunk {cc.chunk_index}")
    return out


def decompress_many(chunks, out: np.ndarray | None = None) -> np.ndarray:
    """Decompress equally sized chunks into the rows of a (k, n) array."""
    if not chunks:
        raise CodecError("no chunks to decompress")
    n = chunks[0].element_count
    payloads = [cc.payload for cc in chunks]
    if list(map(zlib.crc32, payloads)) != [cc.checksum for cc in chunks] or any(
        not p or p[0] != cc.codec_id or cc.element_count != n for p, cc in zip(payloads, chunks)
    ):
        for cc in chunks:
            _verify(cc)
            if cc.element_count != n:
                raise CodecError("chunks differ in element count")
    if out is None:
        out = np.empty((len(chunks), n), np.complex128)
    offsets = np.array(list(accumulate(map(len, payloads), initial=0)), np.int64)
    data = np.frombuffer(b"".join(payloads), np.uint8)
    row, status = _decompress_rows(data, offsets, out)
    if status:
        raise CodecError(f"{_STATUS[status]} in chunk {chunks[row].chunk_index}")
    return out


def ratio(cc: CompressedChunk) -> float:
    return cc.element_count * 16 / len(cc.payload)
