"""Host-memory state vector held as independently compressed chunks.

Global amplitude index g lives in chunk ``g >> c`` at offset ``g & (2**c - 1)``.
"""
from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codec
from .codec import CompressedChunk

MAX_QUBITS = 40

# Per-chunk record header: index u32, codec u8, error bound f64, element count
# u32, checksum u32, payload length u32. Also the per-chunk footprint overhead.
RECORD = struct.Struct("<IBdIII")
RECORD_OVERHEAD = RECORD.size
FILE_HEADER = struct.Struct("<4sIId")
MAGIC = b"CQSS"

class StoreError(ValueError):
    pass


@dataclass(frozen=True)
class Footprint:
    current_bytes: int
    peak_bytes: int
    dense_bytes: int

    @property
    def ratio(self) -> float:
        return self.dense_bytes / self.current_bytes

    def as_dict(self) -> dict:
        return {
            "current_bytes": self.current_bytes,
            "peak_bytes": self.peak_bytes,
            "dense_bytes": self.dense_bytes,
            "ratio": self.ratio,
        }


def _record_bytes(cc: CompressedChunk) -> int:
    return len(cc.payload) + RECORD_OVERHEAD


class ChunkStore:
    """Table of 2**(n-c) compressed chunks plus footprint counters.

    Each chunk slot holds one immutable record and is replaced by a single
    reference swap, which is atomic in CPython, so concurrent loads and stores
    of any indices need no per-chunk locking; readers see either the old or
    the new record. Footprint counters are guarded by a lock.
    """

    def __init__(self, num_qubits: int, chunk_qubits: int, error_bound: float, chunks: list[CompressedChunk]):
        self.num_qubits = num_qubits
        self.chunk_qubits = chunk_qubits
        self.error_bound = float(error_bound)
        if len(chunks) != 1 << (num_qubits - chunk_qubits):
            raise StoreError("chunk table must cover every chunk index")
        self._chunks = chunks
        self._counter_lock = threading.Lock()
        self._current = sum(_record_bytes(cc) for cc in chunks)
        self._peak = self._current

    @property
    def num_chunks(self) -> int:
        return len(self._chunks)

    @property
    def chunk_size(self) -> int:
        return 1 << self.chunk_qubits

    def _check_index(self, i: int):
        if not 0 <= i < len(self._chunks):
            raise StoreError(f"chunk index {i} out of range [0, {len(self._chunks)})")

    def chunk(self, i: int) -> CompressedChunk:
        self._check_index(i)
        return self._chunks[i]

    def load_chunk(self, i: int) -> np.ndarray:
        self._check_index(i)
        return codec.decompress(self._chunks[i])

    def store_chunk(self, i: int, amplitudes: np.ndarray) -> CompressedChunk:
        self._check_index(i)
        if len(amplitudes) != self.chunk_size:
            raise StoreError(f"chunk {i}: expected {self.chunk_size} amplitudes, got {len(amplitudes)}")
        cc = codec.compress(amplitudes, self.error_bound, i)
        self.put(cc)
        return cc

    def put(self, cc: CompressedChunk):
        """Replace chunk `cc.chunk_index` with an already compressed record."""
        i = cc.chunk_index
        self._check_index(i)
        if cc.element_count != self.chunk_size:
            raise StoreError(f"chunk {i}: element count {cc.element_count} != {self.chunk_size}")
        with self._counter_lock:
            old = self._chunks[i]
            self._chunks[i] = cc
            self._current += _record_bytes(cc) - _record_bytes(old)
            if self._current > self._peak:
                self._peak = self._current

    def load_many(self, indices, out: np.ndarray | None = None) -> np.ndarray:
        """Decompress chunks `indices` into the rows of a (k, 2**c) array."""
        chunks = self._chunks
        try:
            picked = [chunks[i] for i in indices]
        except IndexError:
            picked = []
        if len(picked) != len(indices) or min(indices) < 0:
            for i in indices:
                self._check_index(i)
        return codec.decompress_many(picked, out)

    def store_many(self, indices, rows: np.ndarray) -> list[CompressedChunk]:
        """Compress each row of `rows` and replace the corresponding chunk."""
        indices = list(indices)
        if indices and (min(indices) < 0 or max(indices) >= len(self._chunks)):
            for i in indices:
                self._check_index(i)
        if rows.shape != (len(indices), self.chunk_size):
            raise StoreError(f"expected rows of shape {(len(indices), self.chunk_size)}, got {rows.shape}")
        new = codec.compress_many(rows, self.error_bound, indices)
        chunks = self._chunks
        with self._counter_lock:
            delta = 0
            for cc in new:
                i = cc.chunk_index
                delta += len(cc.payload) - len(chunks[i].payload)
                chunks[i] = cc
            self._current += delta
            if self._current > self._peak:
                self._peak = self._current
        return new

    def amplitude(self, g: int) -> complex:
        if not 0 <= g < 1 << self.num_qubits:
            raise StoreError(f"global index {g} out of range for {self.num_qubits} qubits")
        return complex(self.load_chunk(g >> self.chunk_qubits)[g & (self.chunk_size - 1)])

    def footprint(self) -> Footprint:
        with self._counter_lock:
            return Footprint(self._current, self._peak, (1 << self.num_qubits) * 16)

    def blocks(self, max_amplitudes: int = 1 << 20):
        """Yield (first chunk index, decompressed rows) over the store in bounded blocks."""
        step = max(1, max_amplitudes >> self.chunk_qubits)
        for lo in range(0, self.num_chunks, step):
            yield lo, self.load_many(range(lo, min(lo + step, self.num_chunks)))

    def to_dense(self) -> np.ndarray:
        out = np.empty(1 << self.num_qubits, np.complex128)
        rows = out.reshape(self.num_chunks, self.chunk_size)
        for lo, block in self.blocks():
            rows[lo : lo + len(block)] = block
        return out

    def payloads(self):
        for cc in self._chunks:
            yield cc.payload

    def digest(self) -> int:
        """64-bit FNV-1a over all payload bytes in chunk order."""
        h = codec.FNV_OFFSET
        chunks = self._chunks
        for lo in range(0, len(chunks), 4096):
            h = codec.fnv1a64(b"".join([cc.payload for cc in chunks[lo : lo + 4096]]), h)
        return h

    # -- dump / restore ---------------------------------------------------

    def dump(self, path: str | Path):
        with open(path, "wb") as f:
            f.write(FILE_HEADER.pack(MAGIC, self.num_qubits, self.chunk_qubits, self.error_bound))
            for cc in self._chunks:
                f.write(RECORD.pack(cc.chunk_index, cc.codec_id, cc.error_bound, cc.element_count, cc.checksum, len(cc.payload)))
                f.write(cc.payload)

    @classmethod
    def restore(cls, path: str | Path) -> "ChunkStore":
        data = Path(path).read_bytes()
        magic, n, c, eb = FILE_HEADER.unpack_from(data)
        if magic != MAGIC:
            raise StoreError(f"{path}: not a chunk store dump")
        pos = FILE_HEADER.size
        chunks = []
        for expect in range(1 << (n - c)):
            if pos + RECORD.size > len(data):
                raise StoreError(f"{path}: truncated at chunk {expect}")
            idx, cid, ceb, count, crc, size = RECORD.unpack_from(data, pos)
            pos += RECORD.size
            if idx != expect:
                raise StoreError(f"{path}: chunk records out of order at {expect}")
            chunks.append(CompressedChunk(idx, codec.CodecId(cid), ceb, count, data[pos : pos + size], crc))
            pos += size
        if pos != len(data):
            raise StoreError(f"{path}: trailing bytes")
        return cls(n, c, eb, chunks)


def init_basis_state(num_qubits: int, chunk_qubits: int, error_bound: float) -> ChunkStore:
    """|0...0> with every chunk compressed; amplitude 0 is stored exactly."""
    if not 1 <= chunk_qubits <= num_qubits:
        raise StoreError(f"need 1 <= chunk_qubits <= num_qubits, got c={chunk_qubits}, n={num_qubits}")
    if num_qubits > MAX_QUBITS:
        raise StoreError(f"{num_qubits} qubits exceeds the {MAX_QUBITS}-bit address width")
    size = 1 << chunk_qubits
    first = np.zeros(size, np.complex128)
    first[0] = 1.0
    head = codec.compress(first, error_bound, 0)
    if abs(codec.decompress(head)[0] - 1.0) > 1e-12:
        head = codec.compress(first, error_bound, 0, exact=[0])
    zero = codec.compress(np.zeros(size, np.complex128), error_bound, 0)
    chunks = [head] + [
        CompressedChunk(i, zero.codec_id, zero.error_bound, size, zero.payload, zero.checksum)
        for i in range(1, 1 << (num_qubits - chunk_qubits))
    ]
    return ChunkStore(num_qubits, chunk_qubits, error_bound, chunks)
