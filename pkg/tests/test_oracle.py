import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkqsim.circuit import Circuit, Gate, gate_matrix, ghz, random_circuit
from chunkqsim.oracle import DenseState, OracleError, apply_unitary, fidelity, overlap, simulate_dense
from chunkqsim.store import init_basis_state

from helpers import random_state


def test_ghz3():
    a = simulate_dense(ghz(3)).amplitudes
    expect = np.zeros(8)
    expect[[0, 7]] = 2**-0.5
    assert np.abs(a - expect).max() <= 1e-15


def test_empty_circuit():
    a = simulate_dense(Circuit(5, [])).amplitudes
    assert a[0] == 1 and np.count_nonzero(a) == 1


def test_inverse_identity():
    circ = random_circuit(8, 20, seed=5)
    st = simulate_dense(circ)
    for g in reversed(circ.gates):
        apply_unitary(st, g.qubits, gate_matrix(g).conj().T)
    e0 = np.zeros(256)
    e0[0] = 1
    assert np.abs(st.amplitudes - e0).max() <= 1e-12


def test_qubit_order_convention():
    # X on qubit 2 of 3 sets bit 2 of the basis index
    a = simulate_dense(Circuit(3, [Gate("X", (2,))])).amplitudes
    assert a[4] == 1
    # CX with qubit 1 controlling qubit 0
    a = simulate_dense(Circuit(2, [Gate("X", (1,)), Gate("CX", (1, 0))])).amplitudes
    assert a[3] == 1


def test_limit():
    with pytest.raises(OracleError):
        simulate_dense(Circuit(30, []))
    with pytest.raises(OracleError):
        simulate_dense(Circuit(6, []), limit=5)


def test_fidelity_examples(rng):
    x = random_state(rng, 6)
    assert abs(fidelity(x, x) - 1) <= 1e-12
    e0, e1 = DenseState.basis(1, 0), DenseState.basis(1, 1)
    assert fidelity(e0, e1) == 0
    plus = simulate_dense(Circuit(1, [Gate("H", (0,))]))
    assert abs(fidelity(e0, plus) - 0.5) <= 1e-12


def test_fidelity_dimension_mismatch():
    with pytest.raises(OracleError):
        fidelity(np.ones(4) / 2, np.ones(8) / 8**0.5)


def test_fidelity_against_store():
    store = init_basis_state(6, 3, 1e-6)
    ref = DenseState.basis(6, 0)
    assert fidelity(ref, store) == 1.0
    assert fidelity(store, ref) == 1.0
    assert overlap(ref, store) == 1.0


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 16), seed=st.integers(0, 10**6))
def test_norm_preservation(n, seed):
    depth = 1000 if n <= 10 else 200
    assert abs(simulate_dense(random_circuit(n, depth, seed)).norm() - 1) <= 1e-12


def test_norm_preservation_deep_16():
    assert abs(simulate_dense(random_circuit(16, 1000, seed=8)).norm() - 1) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_fidelity_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = random_state(rng, 5), random_state(rng, 5)
    assert abs(fidelity(a, b) - fidelity(b, a)) <= 1e-12
    assert 0 <= fidelity(a, b) <= 1 + 1e-12
