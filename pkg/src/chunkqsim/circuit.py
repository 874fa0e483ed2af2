"""Circuit representation, standard gate matrices and an OpenQASM 2.0 subset parser.

Qubit q corresponds to bit q of a basis-state index (qubit 0 is the LSB).
"""
from __future__ import annotations

import cmath
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

ONE_QUBIT_KINDS = ("H", "X", "Y", "Z", "S", "SDG", "T", "TDG", "RX", "RY", "RZ", "U1", "U2", "U3")
TWO_QUBIT_KINDS = ("CX", "CZ", "SWAP")
KINDS = ONE_QUBIT_KINDS + TWO_QUBIT_KINDS

PARAM_COUNT = {k: 0 for k in KINDS}
PARAM_COUNT.update(RX=1, RY=1, RZ=1, U1=1, U2=2, U3=3)


def arity(kind: str) -> int:
    return 2 if kind in TWO_QUBIT_KINDS else 1


@dataclass(frozen=True)
class Gate:
    """A gate application. Controls are listed before targets."""

    kind: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def problems(self, num_qubits: int | None = None) -> list[str]:
        errs = []
        if self.kind not in KINDS:
            return [f"unsupported gate kind: {self.kind}"]
        if len(self.qubits) != arity(self.kind):
            errs.append(f"{self.kind} expects {arity(self.kind)} qubit(s), got {len(self.qubits)}")
        if len(self.params) != PARAM_COUNT[self.kind]:
            errs.append(f"{self.kind} expects {PARAM_COUNT[self.kind]} parameter(s), got {len(self.params)}")
        if len(set(self.qubits)) != len(self.qubits):
            errs.append(f"duplicate qubit in {self}")
        for q in self.qubits:
            if q < 0 or (num_qubits is not None and q >= num_qubits):
                errs.append(f"qubit {q} out of range")
        return errs

    def __str__(self):
        args = ",".join(str(q) for q in self.qubits)
        if self.params:
            return f"{self.kind}({', '.join(repr(p) for p in self.params)})[{args}]"
        return f"{self.kind}({args})"


@dataclass
class Circuit:
    num_qubits: int
    gates: list[Gate] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list, compare=False, repr=False)

    def append(self, kind: str, *qubits: int, params: Sequence[float] = ()) -> "Circuit":
        self.gates.append(Gate(kind, qubits, tuple(params)))
        return self

    def __len__(self):
        return len(self.gates)


class CircuitError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def validate(circuit: Circuit) -> list[str]:
    """Return every invariant violation; an empty list means the circuit is valid."""
    errs = []
    if not isinstance(circuit.num_qubits, int) or circuit.num_qubits < 1:
        errs.append(f"num_qubits must be a positive integer, got {circuit.num_qubits!r}")
        return errs
    for i, g in enumerate(circuit.gates):
        errs.extend(f"gate {i}: {p}" for p in g.problems(circuit.num_qubits))
    return errs


def check(circuit: Circuit) -> Circuit:
    errs = validate(circuit)
    if errs:
        raise CircuitError(errs)
    return circuit


# ---------------------------------------------------------------------------
# Gate matrices
# ---------------------------------------------------------------------------

_S2 = 1 / math.sqrt(2)

_FIXED = {
    "H": np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
    "T": np.array([[1, 0], [0, cmath.exp(1j * math.pi / 4)]], dtype=complex),
    "TDG": np.array([[1, 0], [0, cmath.exp(-1j * math.pi / 4)]], dtype=complex),
    # first listed qubit is the high-order bit of the row index
    "CX": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "SWAP": np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex),
}


def u3_matrix(theta: float, phi: float, lam: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [
            [c, -cmath.exp(1j * lam) * s],
            [cmath.exp(1j * phi) * s, cmath.exp(1j * (phi + lam)) * c],
        ],
        dtype=complex,
    )


def gate_matrix(g: Gate) -> np.ndarray:
    """Unitary of `g` (2x2 or 4x4 complex128). Returns a fresh array."""
    if g.kind in _FIXED:
        return _FIXED[g.kind].copy()
    p = g.params
    if g.kind == "RX":
        c, s = math.cos(p[0] / 2), math.sin(p[0] / 2)
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if g.kind == "RY":
        c, s = math.cos(p[0] / 2), math.sin(p[0] / 2)
        return np.array([[c, -s], [s, c]], dtype=complex)
    if g.kind == "RZ":
        return np.array([[cmath.exp(-0.5j * p[0]), 0], [0, cmath.exp(0.5j * p[0])]], dtype=complex)
    if g.kind == "U1":
        return np.array([[1, 0], [0, cmath.exp(1j * p[0])]], dtype=complex)
    if g.kind == "U2":
        return u3_matrix(math.pi / 2, p[0], p[1])
    if g.kind == "U3":
        return u3_matrix(*p)
    raise CircuitError([f"unsupported gate kind: {g.kind}"])


# ---------------------------------------------------------------------------
# OpenQASM 2.0 subset
# ---------------------------------------------------------------------------


class QasmError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<str>"[^"\n]*")
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<arrow>->)
  | (?P<op>[;,\[\]()*/\-])
    """,
    re.VERBOSE,
)

_GATE_NAMES = {k.lower(): k for k in KINDS}
_GATE_NAMES.update({"U": "U3", "CX": "CX"})


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        mo = _TOKEN.match(text, pos)
        if mo is None:
            raise QasmError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = mo.lastgroup
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, mo.group(), line, pos - line_start + 1))
        chunk = mo.group()
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rindex("\n") + 1
        pos = mo.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.qreg: tuple[str, int] | None = None
        self.cregs: set[str] = set()
        self.gates: list[Gate] = []
        self.warnings: list[str] = []

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise QasmError(msg, tok.line, tok.col)

    def take(self, kind: str | None = None, text: str | None = None) -> _Tok:
        t = self.tok
        if (kind and t.kind != kind) or (text and t.text != text):
            want = repr(text) if text else kind
            self.error(f"expected {want}, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def peek(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "arrow")

    def parse(self) -> Circuit:
        if not (self.tok.kind == "id" and self.tok.text == "OPENQASM"):
            self.error("expected 'OPENQASM 2.0;' header")
        self.i += 1
        ver = self.take("num")
        if ver.text not in ("2.0", "2"):
            self.error(f"unsupported OpenQASM version {ver.text}", ver)
        self.take("op", ";")
        while self.tok.kind != "eof":
            self.statement()
        if self.qreg is None:
            self.error("no qreg declared")
        return Circuit(self.qreg[1], self.gates, self.warnings)

    def statement(self):
        t = self.take("id")
        word = t.text
        if word == "include":
            self.take("str")
            self.take("op", ";")
        elif word == "qreg":
            name, size = self.decl()
            if self.qreg is not None:
                self.error("multiple qregs are not supported", t)
            if size < 1:
                self.error("qreg size must be positive", t)
            self.qreg = (name, size)
        elif word == "creg":
            name, _ = self.decl()
            self.cregs.add(name)
            self.warn(t, "creg ignored")
        elif word == "measure":
            self.qarg()
            self.take("arrow")
            self.take("id")
            if self.peek("["):
                self.take("op", "[")
                self.take("num")
                self.take("op", "]")
            self.take("op", ";")
            self.warn(t, "measure ignored")
        elif word == "barrier":
            self.qargs()
            self.take("op", ";")
            self.warn(t, "barrier ignored")
        elif word in ("gate", "opaque", "if", "reset"):
            self.error(f"unsupported statement: {word}", t)
        else:
            self.gate(t)

    def warn(self, tok: _Tok, msg: str):
        w = f"line {tok.line}: {msg}"
        self.warnings.append(w)
        log.warning(w)

    def decl(self) -> tuple[str, int]:
        name = self.take("id").text
        self.take("op", "[")
        size = int(self.take("num").text)
        self.take("op", "]")
        self.take("op", ";")
        return name, size

    def qarg(self) -> list[int]:
        """One register reference; a bare register name expands to all its qubits."""
        t = self.take("id")
        if self.qreg is None:
            self.error("qubit referenced before qreg declaration", t)
        name, size = self.qreg
        if t.text != name:
            self.error(f"unknown quantum register {t.text!r}", t)
        if not self.peek("["):
            return list(range(size))
        self.take("op", "[")
        it = self.take("num")
        self.take("op", "]")
        if not it.text.isdigit():
            self.error("qubit index must be an integer", it)
        q = int(it.text)
        if q >= size:
            self.error(f"qubit index out of range: {name}[{q}]", it)
        return [q]

    def qargs(self) -> list[list[int]]:
        args = [self.qarg()]
        while self.peek(","):
            self.take("op", ",")
            args.append(self.qarg())
        return args

    def gate(self, t: _Tok):
        kind = _GATE_NAMES.get(t.text)
        if kind is None:
            self.error(f"unsupported gate name: {t.text}", t)
        params: list[float] = []
        if self.peek("("):
            self.take("op", "(")
            if not self.peek(")"):
                params.append(self.angle())
                while self.peek(","):
                    self.take("op", ",")
                    params.append(self.angle())
            self.take("op", ")")
        if len(params) != PARAM_COUNT[kind]:
            self.error(f"{t.text} takes {PARAM_COUNT[kind]} parameter(s), got {len(params)}", t)
        args = self.qargs()
        self.take("op", ";")
        if len(args) != arity(kind):
            self.error(f"{t.text} takes {arity(kind)} qubit argument(s), got {len(args)}", t)
        if kind in TWO_QUBIT_KINDS:
            if len(args[0]) != 1 or len(args[1]) != 1:
                self.error(f"register broadcast not supported for {t.text}", t)
            if args[0][0] == args[1][0]:
                self.error(f"duplicate qubit in {t.text}", t)
            self.gates.append(Gate(kind, (args[0][0], args[1][0]), params))
        else:
            for q in args[0]:
                self.gates.append(Gate(kind, (q,), params))

    def angle(self) -> float:
        # angle := ['-'] atom (('*' | '/') atom)* ; atom := number | pi
        neg = False
        if self.peek("-"):
            self.take("op", "-")
            neg = True
        value = self.atom()
        while self.peek("*") or self.peek("/"):
            op = self.take("op").text
            rhs = self.atom()
            if op == "*":
                value *= rhs
            else:
                if rhs == 0:
                    self.error("division by zero in angle")
                value /= rhs
        return -value if neg else value

    def atom(self) -> float:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return float(t.text)
        if t.kind == "id" and t.text == "pi":
            self.i += 1
            return math.pi
        self.error(f"expected number or pi in angle expression, found {t.text or 'end of input'!r}")


def parse_qasm(text: str) -> Circuit:
    """Parse the supported OpenQASM 2.0 subset into a Circuit."""
    return _Parser(text).parse()


def to_qasm(circuit: Circuit, reg: str = "q") -> str:
    """Emit `circuit` in the same subset `parse_qasm` accepts; angles round-trip exactly."""
    lines = ["OPENQASM 2.0;", 'include "qelib1.inc";', f"qreg {reg}[{circuit.num_qubits}];"]
    for g in circuit.gates:
        name = g.kind.lower()
        if g.params:
            name += "(" + ",".join(repr(p) for p in g.params) + ")"
        lines.append(f"{name} " + ",".join(f"{reg}[{q}]" for q in g.qubits) + ";")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def ghz(n: int) -> Circuit:
    c = Circuit(n).append("H", 0)
    for k in range(1, n):
        c.append("CX", 0, k)
    return c


def _cphase(c: Circuit, lam: float, a: int, b: int):
    # controlled-U1 through the supported set (the qelib1 cu1 decomposition)
    c.append("U1", a, params=[lam / 2])
    c.append("CX", a, b)
    c.append("U1", b, params=[-lam / 2])
    c.append("CX", a, b)
    c.append("U1", b, params=[lam / 2])


def qft(n: int, prep: Iterable[int] = ()) -> Circuit:
    """QFT on n qubits, optionally preceded by X on the `prep` qubits (basis-state input)."""
    c = Circuit(n)
    for q in prep:
        c.append("X", q)
    for j in reversed(range(n)):
        c.append("H", j)
        for k in reversed(range(j)):
            _cphase(c, math.pi / 2 ** (j - k), k, j)
    for q in range(n // 2):
        c.append("SWAP", q, n - 1 - q)
    return c


def random_circuit(n: int, depth: int, seed: int = 0, two_qubit_fraction: float = 0.35) -> Circuit:
    """`depth` gates drawn uniformly from the whole supported set (two-qubit kinds need n >= 2)."""
    rng = np.random.default_rng(seed)
    c = Circuit(n)
    for _ in range(depth):
        if n >= 2 and rng.random() < two_qubit_fraction:
            kind = TWO_QUBIT_KINDS[rng.integers(len(TWO_QUBIT_KINDS))]
            a, b = rng.choice(n, size=2, replace=False)
            c.append(kind, int(a), int(b))
        else:
            kind = ONE_QUBIT_KINDS[rng.integers(len(ONE_QUBIT_KINDS))]
            params = rng.uniform(-math.pi, math.pi, PARAM_COUNT[kind])
            c.append(kind, int(rng.integers(n)), params=params)
    return c
