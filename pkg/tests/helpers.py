"""Shared oracles for the test suite."""
import numpy as np

from chunkqsim.circuit import gate_matrix
from chunkqsim.oracle import DenseState, apply_unitary
from chunkqsim.planner import batches, plan


def random_state(rng, n):
    v = rng.standard_normal(1 << n) + 1j * rng.standard_normal(1 << n)
    return v / np.linalg.norm(v)


def check_plan(circ, c, m, p):
    """Brute-force stage checker; returns a list of violated properties."""
    bad = []
    n, window = circ.num_qubits, m - c
    flat = [g for s in p.stages for g in s.gates]
    if flat != list(circ.gates):
        bad.append("stage slices do not concatenate to the circuit")
    pos = 0
    for k, s in enumerate(p.stages):
        if s.start != pos:
            bad.append(f"stage {k} start")
        pos += len(s.gates)
        used = {q for g in s.gates for q in g.qubits if q >= c}
        S = set(s.high_set)
        if len(S) > window or not used <= S or any(q < c or q >= n for q in S):
            bad.append(f"stage {k} window fit")
        # padding: the used set plus the smallest missing qubits, up to min(window, n - c)
        expect = set(used)
        for q in range(c, n):
            if len(expect) >= min(window, n - c):
                break
            expect.add(q)
        if S != expect:
            bad.append(f"stage {k} padding {sorted(S)} != {sorted(expect)}")
        if k + 1 < len(p.stages):
            nxt = {q for q in p.stages[k + 1].gates[0].qubits if q >= c}
            if len(used | nxt) <= window:
                bad.append(f"stage {k} closed early")
        lay = s.layout
        if len(set(lay.values())) != len(lay) or not all(0 <= b < m for b in lay.values()):
            bad.append(f"stage {k} layout not injective into [0, m)")
    return bad


def check_partition(stage, n, c):
    """True when the stage's batches cover every chunk index exactly once."""
    seen = np.concatenate([b.members for b in batches(stage, n, c)])
    return len(seen) == 1 << (n - c) and set(seen.tolist()) == set(range(1 << (n - c)))


def run_plan_dense(circ, c, m):
    """Execute a plan batch by batch on a dense vector, using only the planner's layout."""
    n = circ.num_qubits
    p = plan(circ, c, m)
    x = np.zeros(1 << n, np.complex128)
    x[0] = 1
    chunks = x.reshape(-1, 1 << c)
    for s in p.stages:
        gates = s.remapped_gates()
        for b in batches(s, n, c):
            buf = np.empty(b.size, np.complex128)
            buf[b.buffer_positions()] = chunks[b.members].ravel()
            st = DenseState(c + len(s.high_set), buf)
            for g in gates:
                apply_unitary(st, g.qubits, gate_matrix(g))
            chunks[b.members] = st.amplitudes[b.buffer_positions()].reshape(len(b.members), -1)
    return chunks.ravel()
