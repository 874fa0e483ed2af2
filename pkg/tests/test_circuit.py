import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkqsim.circuit import (
    KINDS,
    PARAM_COUNT,
    Circuit,
    Gate,
    QasmError,
    arity,
    gate_matrix,
    ghz,
    parse_qasm,
    qft,
    random_circuit,
    to_qasm,
    validate,
)

HEADER = 'OPENQASM 2.0;\ninclude "qelib1.inc";\n'


def test_parse_bell():
    c = parse_qasm("OPENQASM 2.0; qreg q[2]; h q[0]; cx q[0],q[1];")
    assert c == Circuit(2, [Gate("H", (0,)), Gate("CX", (0, 1))])


def test_parse_pi_half():
    c = parse_qasm(HEADER + "qreg q[1];\nrz(pi/2) q[0];")
    assert c.gates == [Gate("RZ", (0,), (1.5707963267948966,))]


@pytest.mark.parametrize(
    "expr, value",
    [
        ("pi", math.pi),
        ("-pi/4", -math.pi / 4),
        ("3*pi/4", 3 * math.pi / 4),
        ("0.25", 0.25),
        ("-1.5e-3", -1.5e-3),
        ("2*pi", 2 * math.pi),
    ],
)
def test_angle_grammar(expr, value):
    c = parse_qasm(HEADER + f"qreg q[1];\nrx({expr}) q[0];")
    assert c.gates[0].params == (value,)


def test_unsupported_gate():
    with pytest.raises(QasmError, match="unsupported gate name: ccx") as e:
        parse_qasm(HEADER + "qreg q[3];\nccx q[0],q[1],q[2];")
    assert e.value.line == 4


def test_syntax_error_reports_position():
    with pytest.raises(QasmError) as e:
        parse_qasm(HEADER + "qreg q[2];\nh q[0]\ncx q[0],q[1];")
    assert e.value.line == 5 and e.value.col == 1


def test_out_of_range_qubit():
    with pytest.raises(QasmError, match="out of range"):
        parse_qasm(HEADER + "qreg q[2];\nx q[2];")


def test_multiple_qregs():
    with pytest.raises(QasmError, match="multiple qregs"):
        parse_qasm(HEADER + "qreg q[2];\nqreg r[2];")


def test_measure_creg_barrier_ignored_with_warnings():
    c = parse_qasm(HEADER + "qreg q[2];\ncreg c[2];\nh q[0];\nbarrier q[0],q[1];\nmeasure q[0] -> c[0];\nmeasure q -> c;")
    assert c.gates == [Gate("H", (0,))]
    assert len(c.warnings) == 4


def test_register_broadcast():
    c = parse_qasm(HEADER + "qreg q[3];\nh q;")
    assert [g.qubits for g in c.gates] == [(0,), (1,), (2,)]


def test_comments_and_builtin_names():
    c = parse_qasm("OPENQASM 2.0; // header\nqreg q[2];\nU(pi,0,pi) q[1]; // x\nCX q[1],q[0];")
    assert c.gates == [Gate("U3", (1,), (math.pi, 0.0, math.pi)), Gate("CX", (1, 0))]


def test_missing_header():
    with pytest.raises(QasmError, match="OPENQASM"):
        parse_qasm("qreg q[2];")


def test_validate_examples():
    assert validate(Circuit(2, [Gate("CX", (0, 1))])) == []
    assert any("qubit 5 out of range" in e for e in validate(Circuit(2, [Gate("H", (5,))])))
    assert any("duplicate qubit" in e for e in validate(Circuit(3, [Gate("CX", (1, 1))])))


def test_validate_arity_and_params():
    errs = validate(Circuit(2, [Gate("H", (0, 1)), Gate("RX", (0,)), Gate("FOO", (0,))]))
    assert len(errs) == 3


def test_gate_matrix_examples():
    s = 1 / math.sqrt(2)
    np.testing.assert_allclose(gate_matrix(Gate("H", (0,))), [[s, s], [s, -s]], atol=1e-15)
    np.testing.assert_allclose(gate_matrix(Gate("RZ", (0,), (0.0,))), np.eye(2), atol=0)
    u = gate_matrix(Gate("U3", (0,), (math.pi, 0.0, math.pi)))
    np.testing.assert_allclose(np.abs(u), [[0, 1], [1, 0]], atol=1e-15)


def test_u3_convention_entries():
    th, ph, la = 0.3, -1.1, 2.4
    u = gate_matrix(Gate("U3", (0,), (th, ph, la)))
    expect = [
        [math.cos(th / 2), -np.exp(1j * la) * math.sin(th / 2)],
        [np.exp(1j * ph) * math.sin(th / 2), np.exp(1j * (ph + la)) * math.cos(th / 2)],
    ]
    np.testing.assert_allclose(u, expect, atol=1e-15)
    np.testing.assert_allclose(gate_matrix(Gate("U2", (0,), (ph, la))), gate_matrix(Gate("U3", (0,), (math.pi / 2, ph, la))))


def test_two_qubit_ordering():
    # first listed qubit is the high-order row bit: CX maps |10> -> |11>
    cx = gate_matrix(Gate("CX", (0, 1)))
    assert cx[3, 2] == 1 and cx[2, 3] == 1 and cx[0, 0] == 1 and cx[1, 1] == 1


angles = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(kind=st.sampled_from(KINDS), params=st.lists(angles, min_size=3, max_size=3))
def test_unitarity(kind, params):
    g = Gate(kind, tuple(range(arity(kind))), tuple(params[: PARAM_COUNT[kind]]))
    m = gate_matrix(g)
    assert np.abs(m @ m.conj().T - np.eye(len(m))).max() <= 1e-12


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 8), depth=st.integers(0, 40), seed=st.integers(0, 2**16))
def test_qasm_round_trip(n, depth, seed):
    c = random_circuit(n, depth, seed)
    once = parse_qasm(to_qasm(c))
    assert once.gates == c.gates
    assert parse_qasm(to_qasm(once)).gates == once.gates


def test_order_preserved():
    text = HEADER + "qreg q[3];\nx q[2];\nh q[0];\ncz q[1],q[2];\nt q[1];\n"
    assert [g.kind for g in parse_qasm(text).gates] == ["X", "H", "CZ", "T"]


def test_generators_are_valid():
    for c in (ghz(5), qft(5, [1, 3]), random_circuit(6, 30, 1)):
        assert validate(c) == []
    assert len(random_circuit(6, 30, 1).gates) == 30
