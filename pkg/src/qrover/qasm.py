"""OpenQASM 2.0 subset: recursive-descent parser and emitter.

Accepted statements: the ``OPENQASM 2.0;`` header, ``include`` (ignored), a
single ``qreg``, an optional ``creg``, ``barrier`` (dropped), ``measure
q[i] -> c[j];`` and gate applications from :data:`GATE_ARITY`.

Two comment directives carry information standard QASM cannot express.
Other tools see them as ordinary comments:

``//@noise depolarizing(0.01) q[2];``
    a noise channel at this point of the program (see :mod:`qrover.channel`).
``//@slot theta_3``
    trailing a one-angle rotation, names the angle as a trainable slot.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Optional, Union

from .errors import ParseError

# kind -> (number of qubits, number of angles)
GATE_ARITY: dict[str, tuple[int, int]] = {
    "id": (1, 0), "h": (1, 0), "x": (1, 0), "y": (1, 0), "z": (1, 0),
    "s": (1, 0), "t": (1, 0), "sdg": (1, 0), "tdg": (1, 0),
    "rx": (1, 1), "ry": (1, 1), "rz": (1, 1), "u3": (1, 3),
    "cx": (2, 0), "cz": (2, 0),
}
ROTATIONS = ("rx", "ry", "rz")
NOISE_KINDS = ("bit_flip", "phase_flip", "depolarizing")

_MAX_DEPTH = 200


@dataclass(frozen=True)
class GateOp:
    kind: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()
    slot: Optional[str] = None

    def __post_init__(self):
        if self.kind not in GATE_ARITY:
            raise ValueError(f"unsupported gate {self.kind!r}")
        nq, npar = GATE_ARITY[self.kind]
        if len(self.qubits) != nq or len(set(self.qubits)) != nq:
            raise ValueError(f"{self.kind} needs {nq} distinct qubits, got {self.qubits}")
        if len(self.params) != npar:
            raise ValueError(f"{self.kind} takes {npar} angles, got {len(self.params)}")
        if any(not math.isfinite(p) for p in self.params):
            raise ValueError("angles must be finite")
        if self.slot is not None and self.kind not in ROTATIONS:
            raise ValueError("only rx/ry/rz gates can carry a parameter slot")


@dataclass(frozen=True)
class NoiseOp:
    """Single-qubit noise marker expanded in place when the circuit is compiled."""

    kind: str
    qubit: int
    p: float

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unsupported noise kind {self.kind!r}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"noise probability {self.p} outside [0, 1]")

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)


Op = Union[GateOp, NoiseOp]


@dataclass(frozen=True)
class CircuitIR:
    n_qubits: int
    ops: tuple[Op, ...] = ()
    measured_qubits: tuple[int, ...] = ()

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("circuit needs at least one qubit")
        seen = set()
        for op in self.ops:
            if any(q < 0 or q >= self.n_qubits for q in op.qubits):
                raise ValueError(f"{op} addresses a qubit outside 0..{self.n_qubits - 1}")
            slot = getattr(op, "slot", None)
            if slot is not None:
                if slot in seen:
                    raise ValueError(f"parameter slot {slot!r} used twice")
                seen.add(slot)
        if any(q < 0 or q >= self.n_qubits for q in self.measured_qubits):
            raise ValueError("measured qubit out of range")

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(op.slot for op in self.ops if isinstance(op, GateOp) and op.slot is not None)

    @property
    def gates(self) -> tuple[GateOp, ...]:
        return tuple(op for op in self.ops if isinstance(op, GateOp))

    @property
    def noise_ops(self) -> tuple[NoiseOp, ...]:
        return tuple(op for op in self.ops if isinstance(op, NoiseOp))

    def slot_values(self) -> dict[str, float]:
        return {op.slot: op.params[0] for op in self.gates if op.slot is not None}

    def bind(self, values) -> "CircuitIR":
        """Copy with slot angles replaced; ``values`` maps slot name to angle."""
        ops = []
        for op in self.ops:
            if isinstance(op, GateOp) and op.slot is not None and op.slot in values:
                op = GateOp(op.kind, op.qubits, (float(values[op.slot]),), op.slot)
            ops.append(op)
        return CircuitIR(self.n_qubits, tuple(ops), self.measured_qubits)

    def append(self, *ops: Op) -> "CircuitIR":
        return CircuitIR(self.n_qubits, self.ops + tuple(ops), self.measured_qubits)


# --------------------------------------------------------------------------
# Lexer

@dataclass
class _Tok:
    kind: str  # ID, NUM, STR, SYM, NOISE, SLOT, EOF
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<directive>//@(?:noise|slot)\b)
  | (?P<comment>//[^\n]*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"[^"\n]*")
  | (?P<sym>->|[;,\[\]()+\-*/{}])
    """,
    re.VERBOSE | re.ASCII,
)


def _tokenize(src: str) -> Iterator[_Tok]:
    pos, line, line_start = 0, 1, 0
    n = len(src)
    while pos < n:
        m = _TOKEN_RE.match(src, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(line, col, f"unexpected character {src[pos]!r}")
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "directive":
            yield _Tok("NOISE" if text == "//@noise" else "SLOT", text, line, col)
        elif kind == "num":
            yield _Tok("NUM", text, line, col)
        elif kind == "id":
            yield _Tok("ID", text, line, col)
        elif kind == "str":
            yield _Tok("STR", text, line, col)
        elif kind == "sym":
            yield _Tok("SYM", text, line, col)
        pos = m.end()
    yield _Tok("EOF", "", line, pos - line_start + 1)


# --------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, src: str):
        self.toks = list(_tokenize(src))
        self.i = 0
        self.qreg: Optional[tuple[str, int]] = None
        self.creg: Optional[tuple[str, int]] = None
        self.ops: list[Op] = []
        self.measured: list[int] = []
        self.slots: set[str] = set()

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, msg: str, tok: Optional[_Tok] = None):
        t = tok or self.tok
        raise ParseError(t.line, t.col, msg)

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        if t.kind != "EOF":
            self.i += 1
        return t

    def expect(self, kind: str, text: Optional[str] = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = repr(text) if text is not None else kind.lower()
            got = repr(t.text) if t.kind != "EOF" else "end of input"
            self.fail(f"expected {want}, found {got}")
        return self.advance()

    def accept(self, kind: str, text: Optional[str] = None) -> Optional[_Tok]:
        t = self.tok
        if t.kind == kind and (text is None or t.text == text):
            return self.advance()
        return None

    # program := header statement*
    def program(self) -> CircuitIR:
        self.expect("ID", "OPENQASM")
        ver = self.expect("NUM")
        if ver.text not in ("2.0", "2"):
            self.fail(f"unsupported OpenQASM version {ver.text}", ver)
        self.expect("SYM", ";")
        while self.tok.kind != "EOF":
            self.statement()
        if self.qreg is None:
            self.fail("program declares no qreg")
        return CircuitIR(self.qreg[1], tuple(self.ops), tuple(self.measured))

    def statement(self):
        t = self.tok
        if t.kind == "NOISE":
            self.advance()
            self.noise_directive()
            return
        if t.kind == "SLOT":
            self.fail("slot directive must follow a rotation gate on the same line")
        if t.kind != "ID":
            self.fail(f"unexpected {t.text!r}")
        word = t.text
        if word == "include":
            self.advance()
            self.expect("STR")
            self.expect("SYM", ";")
        elif word in ("qreg", "creg"):
            self.register(word)
        elif word == "barrier":
            self.advance()
            self.barrier_args()
            self.expect("SYM", ";")
        elif word == "measure":
            self.measure()
        elif word in ("gate", "opaque", "if", "reset"):
            self.fail(f"'{word}' statements are not supported")
        else:
            self.gate()

    def register(self, word: str):
        kw = self.advance()
        name = self.expect("ID").text
        self.expect("SYM", "[")
        size_tok = self.expect("NUM")
        size = self.int_value(size_tok)
        if size < 1:
            self.fail("register size must be positive", size_tok)
        self.expect("SYM", "]")
        self.expect("SYM", ";")
        if word == "qreg":
            if self.qreg is not None:
                self.fail("only one qreg is supported", kw)
            self.qreg = (name, size)
        else:
            if self.creg is not None:
                self.fail("only one creg is supported", kw)
            self.creg = (name, size)

    def int_value(self, tok: _Tok) -> int:
        if not tok.text.isdigit():
            self.fail(f"expected an integer, found {tok.text!r}", tok)
        return int(tok.text)

    def qubit_ref(self) -> int:
        if self.qreg is None:
            self.fail("qubit used before qreg declaration")
        name = self.expect("ID")
        if name.text != self.qreg[0]:
            self.fail(f"unknown quantum register {name.text!r}", name)
        if self.tok.kind == "SYM" and self.tok.text == "[":
            self.advance()
            idx_tok = self.expect("NUM")
            idx = self.int_value(idx_tok)
            self.expect("SYM", "]")
            if idx >= self.qreg[1]:
                self.fail(f"qubit index {idx} out of range for {name.text}[{self.qreg[1]}]", idx_tok)
            return idx
        self.fail("whole-register arguments are only allowed in barrier", name)

    def barrier_args(self):
        while True:
            name = self.expect("ID")
            if self.qreg is None or name.text != self.qreg[0]:
                self.fail(f"unknown quantum register {name.text!r}", name)
            if self.accept("SYM", "["):
                idx_tok = self.expect("NUM")
                if self.int_value(idx_tok) >= self.qreg[1]:
                    self.fail("qubit index out of range", idx_tok)
                self.expect("SYM", "]")
            if not self.accept("SYM", ","):
                return

    def measure(self):
        self.advance()
        q = self.qubit_ref()
        self.expect("SYM", "->")
        name = self.expect("ID")
        if self.creg is None or name.text != self.creg[0]:
            self.fail(f"unknown classical register {name.text!r}", name)
        self.expect("SYM", "[")
        idx_tok = self.expect("NUM")
        if self.int_value(idx_tok) >= self.creg[1]:
            self.fail("classical bit index out of range", idx_tok)
        self.expect("SYM", "]")
        self.expect("SYM", ";")
        if q not in self.measured:
            self.measured.append(q)

    def gate(self):
        name_tok = self.advance()
        kind = name_tok.text
        if kind not in GATE_ARITY:
            self.fail(f"unknown gate {kind!r}", name_tok)
        nq, npar = GATE_ARITY[kind]
        params: list[float] = []
        if self.accept("SYM", "("):
            if not (self.tok.kind == "SYM" and self.tok.text == ")"):
                params.append(self.expr(0))
                while self.accept("SYM", ","):
                    params.append(self.expr(0))
            self.expect("SYM", ")")
        if len(params) != npar:
            self.fail(f"gate {kind} takes {npar} parameter(s), got {len(params)}", name_tok)
        qubits = [self.qubit_ref()]
        while self.accept("SYM", ","):
            qubits.append(self.qubit_ref())
        end = self.expect("SYM", ";")
        if len(qubits) != nq:
            self.fail(f"gate {kind} acts on {nq} qubit(s), got {len(qubits)}", name_tok)
        if len(set(qubits)) != len(qubits):
            self.fail(f"gate {kind} repeats a qubit argument", name_tok)
        slot = None
        if self.tok.kind == "SLOT" and self.tok.line == end.line:
            slot_tok = self.advance()
            ident = self.expect("ID")
            if ident.line != slot_tok.line:
                self.fail("slot directive needs a name", slot_tok)
            if kind not in ROTATIONS:
                self.fail("only rx/ry/rz gates can carry a parameter slot", slot_tok)
            if ident.text in self.slots:
                self.fail(f"parameter slot {ident.text!r} used twice", ident)
            self.slots.add(ident.text)
            slot = ident.text
        self.ops.append(GateOp(kind, tuple(qubits), tuple(params), slot))

    def noise_directive(self):
        kind_tok = self.expect("ID")
        if kind_tok.text not in NOISE_KINDS:
            self.fail(f"unknown noise kind {kind_tok.text!r}", kind_tok)
        self.expect("SYM", "(")
        p = self.expr(0)
        self.expect("SYM", ")")
        q = self.qubit_ref()
        self.expect("SYM", ";")
        if not (0.0 <= p <= 1.0):
            self.fail(f"noise probability {p} outside [0, 1]", kind_tok)
        self.ops.append(NoiseOp(kind_tok.text, q, p))

    # expr := term (('+'|'-') term)*
    def expr(self, depth: int) -> float:
        if depth > _MAX_DEPTH:
            self.fail("expression nested too deeply")
        value = self.term(depth)
        while self.tok.kind == "SYM" and self.tok.text in ("+", "-"):
            op = self.advance().text
            rhs = self.term(depth)
            value = value + rhs if op == "+" else value - rhs
        return self.finite(value)

    # term := unary (('*'|'/') unary)*
    def term(self, depth: int) -> float:
        value = self.unary(depth)
        while self.tok.kind == "SYM" and self.tok.text in ("*", "/"):
            op_tok = self.advance()
            rhs = self.unary(depth)
            if op_tok.text == "*":
                value = value * rhs
            else:
                if rhs == 0.0:
                    self.fail("division by zero", op_tok)
                value = value / rhs
            value = self.finite(value, op_tok)
        return value

    def unary(self, depth: int) -> float:
        if depth > _MAX_DEPTH:
            self.fail("expression nested too deeply")
        if self.accept("SYM", "-"):
            return -self.unary(depth + 1)
        t = self.tok
        if t.kind == "NUM":
            self.advance()
            return self.finite(float(t.text), t)
        if t.kind == "ID" and t.text == "pi":
            self.advance()
            return math.pi
        if self.accept("SYM", "("):
            value = self.expr(depth + 1)
            self.expect("SYM", ")")
            return value
        found = repr(t.text) if t.kind != "EOF" else "end of input"
        self.fail(f"malformed expression near {found}")

    def finite(self, value: float, tok: Optional[_Tok] = None) -> float:
        if not math.isfinite(value):
            self.fail("expression is not a finite number", tok)
        return value


def parse_qasm(source: Union[str, bytes]) -> CircuitIR:
    """Parse OpenQASM 2.0 text into a :class:`CircuitIR`.

    Raises :class:`~qrover.errors.ParseError` for any input outside the
    supported subset, including undecodable bytes.
    """
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(1, exc.start + 1, "input is not valid UTF-8") from None
    return _Parser(source).program()


def _fmt_angle(x: float) -> str:
    return format(x, ".17g")


def emit_qasm(circ: CircuitIR) -> str:
    lines = ["OPENQASM 2.0;", 'include "qelib1.inc";', f"qreg q[{circ.n_qubits}];"]
    if circ.measured_qubits:
        lines.append(f"creg c[{circ.n_qubits}];")
    for op in circ.ops:
        if isinstance(op, NoiseOp):
            lines.append(f"//@noise {op.kind}({_fmt_angle(op.p)}) q[{op.qubit}];")
            continue
        head = op.kind
        if op.params:
            head += "(" + ",".join(_fmt_angle(p) for p in op.params) + ")"
        line = head + " " + ",".join(f"q[{q}]" for q in op.qubits) + ";"
        if op.slot is not None:
            line += f" //@slot {op.slot}"
        lines.append(line)
    for q in circ.measured_qubits:
        lines.append(f"measure q[{q}] -> c[{q}];")
    return "\n".join(lines) + "\n"
