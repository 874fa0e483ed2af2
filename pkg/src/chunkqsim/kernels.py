"""In-place gate kernels over a contiguous amplitude buffer.

Work is addressed by group index ranges [lo, hi) so a gate can be split
across workers over disjoint index ranges: a single-qubit gate has len/2
pair groups, a two-qubit gate len/4 quad groups.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .circuit import Gate, arity, gate_matrix


@njit(nogil=True, cache=True)
def _apply_1q(buf, b, u, lo, hi):
    low_mask = (1 << b) - 1
    step = 1 << b
    m00, m01, m10, m11 = u[0, 0], u[0, 1], u[1, 0], u[1, 1]
    for k in range(lo, hi):
        i = ((k & ~low_mask) << 1) | (k & low_mask)
        j = i | step
        a0 = buf[i]
        a1 = buf[j]
        buf[i] = m00 * a0 + m01 * a1
        buf[j] = m10 * a0 + m11 * a1


@njit(nogil=True, cache=True)
def _apply_2q(buf, b_first, b_second, u, lo, hi):
    lo_bit = min(b_first, b_second)
    hi_bit = max(b_first, b_second)
    m_lo = (1 << lo_bit) - 1
    m_hi = (1 << hi_bit) - 1
    s1 = 1 << b_first
    s2 = 1 << b_second
    for k in range(lo, hi):
        t = ((k & ~m_lo) << 1) | (k & m_lo)
        i00 = ((t & ~m_hi) << 1) | (t & m_hi)
        i01 = i00 | s2
        i10 = i00 | s1
        i11 = i10 | s2
        a0 = buf[i00]
        a1 = buf[i01]
        a2 = buf[i10]
        a3 = buf[i11]
        buf[i00] = u[0, 0] * a0 + u[0, 1] * a1 + u[0, 2] * a2 + u[0, 3] * a3
        buf[i01] = u[1, 0] * a0 + u[1, 1] * a1 + u[1, 2] * a2 + u[1, 3] * a3
        buf[i10] = u[2, 0] * a0 + u[2, 1] * a1 + u[2, 2] * a2 + u[2, 3] * a3
        buf[i11] = u[3, 0] * a0 + u[3, 1] * a1 + u[3, 2] * a2 + u[3, 3] * a3


@njit(nogil=True, cache=True)
def _apply_seq(buf, arities, bits, mats):
    """Apply a packed gate sequence over the whole buffer in one call."""
    n = buf.shape[0]
    for g in range(arities.shape[0]):
        if arities[g] == 1:
            _apply_1q(buf, bits[g, 0], mats[g], 0, n >> 1)
        else:
            _apply_2q(buf, bits[g, 0], bits[g, 1], mats[g], 0, n >> 2)


class CompiledGate:
    """A gate over buffer bits with its matrix precomputed."""

    __slots__ = ("gate", "bits", "matrix")

    def __init__(self, gate: Gate):
        self.gate = gate
        self.bits = gate.qubits
        self.matrix = np.ascontiguousarray(gate_matrix(gate))

    def groups(self, length: int) -> int:
        return length >> arity(self.gate.kind)

    def run(self, buf: np.ndarray, lo: int, hi: int):
        if len(self.bits) == 1:
            _apply_1q(buf, self.bits[0], self.matrix, lo, hi)
        else:
            _apply_2q(buf, self.bits[0], self.bits[1], self.matrix, lo, hi)


class GateSequence(list):
    """List of CompiledGate plus a packed array form for single-call application."""

    def __init__(self, compiled):
        super().__init__(compiled)
        k = len(self)
        self.arities = np.array([len(cg.bits) for cg in self], np.int64)
        self.bits = np.zeros((k, 2), np.int64)
        self.mats = np.zeros((k, 4, 4), np.complex128)
        self.max_bit = max((max(cg.bits) for cg in self), default=-1)
        for i, cg in enumerate(self):
            d = len(cg.matrix)
            self.bits[i, : len(cg.bits)] = cg.bits
            self.mats[i, :d, :d] = cg.matrix


def compile_gates(gates, num_bits: int) -> GateSequence:
    out = []
    for g in gates:
        for b in g.qubits:
            if not 0 <= b < num_bits:
                raise ValueError(f"buffer bit {b} of {g} out of range for a {num_bits}-bit buffer")
        out.append(CompiledGate(g))
    return GateSequence(out)


def apply_all(buf: np.ndarray, gates):
    """Apply `gates` (Gates or a GateSequence) in order over the whole buffer on the calling thread."""
    if not isinstance(gates, GateSequence):
        gates = compile_gates(gates, len(buf).bit_length() - 1)
    if len(gates):
        _apply_seq(buf, gates.arities, gates.bits, gates.mats)
