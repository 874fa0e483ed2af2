"""Dense in-memory reference simulator.

Deliberately independent of the chunked kernels: amplitudes are updated with
reshape/tensordot over the full state rather than bit-twiddled index loops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, check, gate_matrix

ORACLE_LIMIT = 24


class OracleError(ValueError):
    pass


@dataclass
class DenseState:
    num_qubits: int
    amplitudes: np.ndarray

    @classmethod
    def basis(cls, n: int, index: int = 0) -> "DenseState":
        a = np.zeros(1 << n, np.complex128)
        a[index] = 1.0
        return cls(n, a)

    def norm(self) -> float:
        return math.fsum((self.amplitudes.real**2 + self.amplitudes.imag**2).tolist())


def apply_unitary(state: DenseState, qubits, matrix: np.ndarray):
    """Apply `matrix` to `qubits` (first listed = most significant row bit) in place."""
    n = state.num_qubits
    k = len(qubits)
    # tensor axis a corresponds to qubit n - 1 - a
    psi = state.amplitudes.reshape((2,) * n)
    axes = [n - 1 - q for q in qubits]
    u = matrix.reshape((2,) * (2 * k))
    out = np.tensordot(u, psi, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    state.amplitudes[:] = out.reshape(-1)


def simulate_dense(circuit: Circuit, limit: int = ORACLE_LIMIT) -> DenseState:
    check(circuit)
    if circuit.num_qubits > limit:
        raise OracleError(f"{circuit.num_qubits} qubits exceeds oracle limit {limit}")
    st = DenseState.basis(circuit.num_qubits)
    for g in circuit.gates:
        apply_unitary(st, g.qubits, gate_matrix(g))
    return st


def _amplitudes(x) -> np.ndarray:
    if isinstance(x, DenseState):
        return x.amplitudes
    if isinstance(x, np.ndarray):
        return x
    return x.to_dense()  # ChunkStore


def _num_qubits(x) -> int:
    if isinstance(x, np.ndarray):
        return int(len(x)).bit_length() - 1
    return x.num_qubits


def overlap(a, b) -> complex:
    """<a|b> with compensated summation of the real and imaginary parts."""
    if _num_qubits(a) != _num_qubits(b):
        raise OracleError(f"dimension mismatch: {_num_qubits(a)} vs {_num_qubits(b)} qubits")
    re, im = [], []
    if hasattr(b, "load_chunk") and not isinstance(a, np.ndarray) and hasattr(a, "amplitudes"):
        av = a.amplitudes
        L = b.chunk_size
        for lo, block in b.blocks():
            prod = np.conj(av[lo * L : lo * L + block.size]) * block.ravel()
            re.append(math.fsum(prod.real.tolist()))
            im.append(math.fsum(prod.imag.tolist()))
    else:
        prod = np.conj(_amplitudes(a)) * _amplitudes(b)
        re, im = prod.real.tolist(), prod.imag.tolist()
    return complex(math.fsum(re), math.fsum(im))


def fidelity(a, b) -> float:
    """|<a|b>|^2; `b` (or `a`) may be a ChunkStore, decompressed chunk by chunk."""
    if hasattr(a, "load_chunk") and not hasattr(b, "load_chunk"):
        a, b = b, a
    return abs(overlap(a, b)) ** 2
