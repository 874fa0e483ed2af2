"""Offline partitioning of a circuit into stages and of each stage's sweep into batches.

A stage is a run of consecutive gates whose high qubits (index >= c) fit in
the device window of m - c bits. During a stage, a batch holds the 2**|S|
chunks that differ only in the stage's high qubits S, so every gate of the
stage acts locally inside the batch buffer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

from .circuit import Circuit, CircuitError, Gate, validate


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Stage:
    index: int
    gates: tuple[Gate, ...]
    start: int  # index of the first gate in the original circuit
    high_set: tuple[int, ...]
    chunk_qubits: int

    @property
    def stop(self) -> int:
        return self.start + len(self.gates)

    @property
    def layout(self) -> dict[int, int]:
        c = self.chunk_qubits
        lay = {q: q for q in range(c)}
        lay.update({q: c + r for r, q in enumerate(self.high_set)})
        return lay

    def remapped_gates(self) -> list[Gate]:
        lay = self.layout
        return [remap_gate(g, lay) for g in self.gates]


@dataclass(frozen=True)
class ExecutionPlan:
    num_qubits: int
    chunk_qubits: int
    batch_qubits: int
    stages: tuple[Stage, ...] = field(default_factory=tuple)

    def batch_count(self, stage: Stage) -> int:
        return 1 << (self.num_qubits - self.chunk_qubits - len(stage.high_set))


class Batch:
    """One device-window's worth of chunks.

    `members[p]` is the chunk whose high-set bits spell p, so member p fills
    buffer positions [p * 2**c, (p + 1) * 2**c).
    """

    __slots__ = ("ordinal", "members", "chunk_qubits", "size")

    def __init__(self, ordinal: int, members: np.ndarray, chunk_qubits: int):
        self.ordinal = ordinal
        self.members = members
        self.chunk_qubits = chunk_qubits
        self.size = len(members) << chunk_qubits

    def buffer_positions(self) -> np.ndarray:
        """Destination buffer index of each amplitude, in member-major host order (read-only)."""
        return _positions(len(self.members), self.chunk_qubits)

    def __repr__(self):
        return f"Batch(ordinal={self.ordinal}, members={self.members.tolist()}, chunk_qubits={self.chunk_qubits})"


@lru_cache(maxsize=64)
def _positions(members: int, c: int) -> np.ndarray:
    L = 1 << c
    # member p sits at slot p; the general gather map reduces to a contiguous placement
    slots = np.arange(members, dtype=np.int64)
    pos = (slots[:, None] * L + np.arange(L, dtype=np.int64)[None, :]).ravel()
    pos.flags.writeable = False
    return pos


def check_params(n: int, c: int, m: int):
    if not 1 <= c <= n:
        raise PlanError(f"chunk qubits must satisfy 1 <= c <= n, got c={c}, n={n}")
    if not c <= m <= n:
        raise PlanError(f"batch qubits must satisfy c <= m <= n, got m={m}, c={c}, n={n}")
    if m - c < 2 and m != n:
        raise PlanError(f"batch window m - c = {m - c} cannot co-locate a two-qubit gate (need >= 2 or m = n)")


def plan(circuit: Circuit, c: int, m: int) -> ExecutionPlan:
    """Greedy left-to-right staging, then pad each stage's high set up to the window."""
    errs = validate(circuit)
    if errs:
        raise CircuitError(errs)
    n = circuit.num_qubits
    check_params(n, c, m)
    window = m - c

    groups: list[tuple[int, list[Gate], set[int]]] = []
    start, cur, S = 0, [], set()
    for i, g in enumerate(circuit.gates):
        G = {q for q in g.qubits if q >= c}
        if len(S | G) <= window:
            cur.append(g)
            S |= G
        else:
            groups.append((start, cur, S))
            start, cur, S = i, [g], set(G)
    if cur:
        groups.append((start, cur, S))

    target = min(window, n - c)
    stages = []
    for k, (start, gates, S) in enumerate(groups):
        S = set(S)
        q = c
        while len(S) < target:
            if q not in S:
                S.add(q)
            q += 1
        stages.append(Stage(k, tuple(gates), start, tuple(sorted(S)), c))
    return ExecutionPlan(n, c, m, tuple(stages))


def batches(stage: Stage, n: int, c: int) -> Iterator[Batch]:
    """Batches of `stage` in ascending order of their free-bit assignment."""
    high = n - c
    s_bits = [q - c for q in stage.high_set]
    free_bits = [j for j in range(high) if j + c not in stage.high_set]
    pattern_off = _bit_offsets(s_bits)
    free_off = _bit_offsets(free_bits)
    for v in range(len(free_off)):
        yield Batch(v, free_off[v] + pattern_off, c)


def _bit_offsets(bits: list[int]) -> np.ndarray:
    """offsets[p] = sum over k of bit k of p shifted to position bits[k]."""
    off = np.zeros(1 << len(bits), dtype=np.int64)
    for k, b in enumerate(bits):
        half = 1 << k
        off[half : 2 * half] = off[:half] + (1 << b)
    return off


def remap_gate(g: Gate, layout: dict[int, int]) -> Gate:
    try:
        qubits = tuple(layout[q] for q in g.qubits)
    except KeyError as e:
        raise PlanError(f"qubit {e.args[0]} of {g} is not mapped into the batch buffer") from None
    return Gate(g.kind, qubits, g.params)


def explain(p: ExecutionPlan) -> str:
    """Human-readable stage table."""
    rows = [f"plan: n={p.num_qubits} c={p.chunk_qubits} m={p.batch_qubits} stages={len(p.stages)}"]
    rows.append(f"{'stage':>5}  {'gates':>11}  {'batches':>7}  high set")
    for s in p.stages:
        rng = f"[{s.start},{s.stop})"
        rows.append(f"{s.index:>5}  {rng:>11}  {p.batch_count(s):>7}  {{{', '.join(map(str, s.high_set))}}}")
    return "\n".join(rows)
