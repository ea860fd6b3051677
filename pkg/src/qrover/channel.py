"""Circuit-to-channel compilation, standard noise models and noise injection.

Conventions:

* qubit 0 is the most significant tensor factor (``|q0 q1 ... q_{n-1}>``);
* ``vec`` stacks columns, so the superoperator of ``rho -> K rho K^dagger``
  is ``conj(K) kron K``;
* depolarizing noise with probability ``p`` is ``rho -> (1-p) rho + p I/2``
  on the target qubit, realised by the four Pauli Kraus operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import DEFAULT_TOL, Tolerances
from .errors import BadProbability, InvalidChannel, InvalidNoise, TooLarge
from .qasm import NOISE_KINDS, CircuitIR, GateOp, NoiseOp

MAX_KRAUS_QUBITS = 10
MAX_SUPEROP_QUBITS = 6

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
S = np.diag([1, 1j]).astype(complex)
T = np.diag([1, np.exp(1j * math.pi / 4)]).astype(complex)
CX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
CZ = np.diag([1, 1, 1, -1]).astype(complex)

_FIXED = {"id": I2, "h": H, "x": X, "y": Y, "z": Z, "s": S, "t": T,
          "sdg": S.conj().T, "tdg": T.conj().T, "cx": CX, "cz": CZ}


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def u3(theta: float, phi: float, lam: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([
        [c, -np.exp(1j * lam) * s],
        [np.exp(1j * phi) * s, np.exp(1j * (phi + lam)) * c],
    ], dtype=complex)


def gate_matrix(op: GateOp) -> np.ndarray:
    """Local 2x2 or 4x4 unitary of a gate (first listed qubit most significant)."""
    if op.kind in _FIXED:
        return _FIXED[op.kind]
    if op.kind == "rx":
        return rx(op.params[0])
    if op.kind == "ry":
        return ry(op.params[0])
    if op.kind == "rz":
        return rz(op.params[0])
    if op.kind == "u3":
        return u3(*op.params)
    raise ValueError(f"no matrix for gate {op.kind!r}")


def apply_local(mats: np.ndarray, local: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Left-multiply every column of ``mats`` by ``local`` acting on ``qubits``.

    ``mats`` has shape ``(2**n, m)``; the result has the same shape.
    """
    k = len(qubits)
    m = mats.shape[1]
    t = mats.reshape((2,) * n_qubits + (m,))
    g = local.reshape((2,) * (2 * k))
    t = np.tensordot(g, t, axes=(list(range(k, 2 * k)), list(qubits)))
    # tensordot puts the gate's output axes first; move them back into place
    t = np.moveaxis(t, list(range(k)), list(qubits))
    return t.reshape(2 ** n_qubits, m)


def embed(local: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Lift a local operator to the full ``2**n``-dimensional space."""
    return apply_local(np.eye(2 ** n_qubits, dtype=complex), local, qubits, n_qubits)


# --------------------------------------------------------------------------
# Channels

class KrausChannel:
    """CPTP map stored as Kraus operators, all of shape ``(dim, dim)``."""

    __slots__ = ("_ops", "dim")

    def __init__(self, kraus_ops, tol: Tolerances = DEFAULT_TOL, *, validate: bool = True):
        ops = np.array([np.asarray(k, dtype=complex) for k in kraus_ops])
        if ops.ndim != 3 or ops.shape[1] != ops.shape[2] or len(ops) == 0:
            raise InvalidChannel("Kraus operators must be a non-empty list of square matrices")
        self.dim = ops.shape[1]
        if len(ops) > self.dim ** 2:
            ops = _compress(ops)
        if validate:
            err = completeness_error(ops)
            if err > tol.completeness:
                raise InvalidChannel(f"sum K^dagger K deviates from identity by {err:.3e}")
        ops.setflags(write=False)
        self._ops = ops

    @classmethod
    def identity(cls, dim: int) -> "KrausChannel":
        return cls([np.eye(dim)])

    @property
    def kraus_ops(self) -> np.ndarray:
        return self._ops

    @property
    def n_qubits(self) -> int:
        return int(round(math.log2(self.dim)))

    def __len__(self) -> int:
        return len(self._ops)

    def apply(self, rho) -> np.ndarray:
        r = np.asarray(rho, dtype=complex)
        out = np.einsum("kij,jl,kml->im", self._ops, r, self._ops.conj(), optimize=True)
        return 0.5 * (out + out.conj().T)

    def adjoint(self, m) -> np.ndarray:
        """Heisenberg-picture map ``M -> sum_k K^dagger M K``."""
        a = np.asarray(m, dtype=complex)
        out = np.einsum("kji,jl,klm->im", self._ops.conj(), a, self._ops, optimize=True)
        return 0.5 * (out + out.conj().T)

    def then(self, other: "KrausChannel") -> "KrausChannel":
        """Sequential composition: apply ``self`` first, then ``other``."""
        if other.dim != self.dim:
            raise InvalidChannel("cannot compose channels of different dimension")
        ops = np.einsum("aij,bjk->baik", other._ops, self._ops).reshape(-1, self.dim, self.dim)
        return KrausChannel(ops, validate=False)

    def superop(self) -> "SuperOp":
        if self.dim > 2 ** MAX_SUPEROP_QUBITS:
            raise TooLarge(f"superoperator form limited to {MAX_SUPEROP_QUBITS} qubits")
        s = sum(np.kron(k.conj(), k) for k in self._ops)
        return SuperOp(s)


def completeness_error(ops: np.ndarray) -> float:
    dim = ops.shape[1]
    acc = np.einsum("kji,kjl->il", ops.conj(), ops)
    return float(np.max(np.abs(acc - np.eye(dim))))


def _compress(ops: np.ndarray) -> np.ndarray:
    """Canonical Kraus form with at most dim**2 operators (via the Gram matrix)."""
    m, dim, _ = ops.shape
    flat = ops.reshape(m, -1)
    gram = flat.conj() @ flat.T
    w, v = np.linalg.eigh(0.5 * (gram + gram.conj().T))
    keep = w > 1e-14 * max(w[-1], 1.0)
    new = (v[:, keep].T @ flat).reshape(-1, dim, dim)
    return new[::-1][: dim * dim]


class SuperOp:
    """Dense ``N^2 x N^2`` matrix acting on column-stacked density matrices."""

    __slots__ = ("matrix", "dim")

    def __init__(self, matrix):
        m = np.array(matrix, dtype=complex)
        n2 = m.shape[0]
        dim = int(round(math.sqrt(n2)))
        if m.shape != (n2, n2) or dim * dim != n2:
            raise InvalidChannel("superoperator must be square with perfect-square size")
        m.setflags(write=False)
        self.matrix = m
        self.dim = dim

    def apply(self, rho) -> np.ndarray:
        r = np.asarray(rho, dtype=complex)
        out = (self.matrix @ vec(r)).reshape(self.dim, self.dim, order="F")
        return 0.5 * (out + out.conj().T)


def vec(m: np.ndarray) -> np.ndarray:
    return np.asarray(m).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


# --------------------------------------------------------------------------
# Noise

def _check_p(p: float):
    if not (isinstance(p, (int, float)) and 0.0 <= p <= 1.0):
        raise BadProbability(f"noise probability must lie in [0, 1], got {p!r}")


def local_noise_kraus(kind: str, p: float) -> list[np.ndarray]:
    _check_p(p)
    if kind == "bit_flip":
        return [math.sqrt(1 - p) * I2, math.sqrt(p) * X]
    if kind == "phase_flip":
        return [math.sqrt(1 - p) * I2, math.sqrt(p) * Z]
    if kind == "depolarizing":
        q = math.sqrt(p / 4)
        return [math.sqrt(1 - 3 * p / 4) * I2, q * X, q * Y, q * Z]
    raise InvalidNoise(f"unknown noise kind {kind!r}")


def standard_noise(kind: str, p: float, qubit: int, n_qubits: int) -> KrausChannel:
    """Single-qubit noise channel lifted to ``n_qubits``."""
    if not (0 <= qubit < n_qubits):
        raise InvalidNoise(f"qubit {qubit} out of range")
    return KrausChannel([embed(k, [qubit], n_qubits) for k in local_noise_kraus(kind, p)])


@dataclass(frozen=True)
class NoiseSpec:
    """Noise configuration for a model.

    ``placement="end"`` applies ``kind`` to every qubit after the last gate
    (``custom`` Kraus operators may be single-qubit, applied per qubit, or
    full-dimension). ``placement="random"`` injects one operation per qubit
    with probability drawn from ``(0, p]``; ``kind="random"`` draws the kind
    too.
    """

    kind: str
    p: float = 0.0
    placement: str = "end"
    seed: int = 0
    custom_kraus: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        kinds = NOISE_KINDS + ("custom", "random")
        if self.kind not in kinds:
            raise InvalidNoise(f"noise kind must be one of {kinds}, got {self.kind!r}")
        if self.placement not in ("end", "random"):
            raise InvalidNoise(f"placement must be 'end' or 'random', got {self.placement!r}")
        _check_p(self.p)
        if self.kind == "custom":
            if self.placement != "end":
                raise InvalidNoise("custom noise supports end placement only")
            if not self.custom_kraus:
                raise InvalidNoise("custom noise needs Kraus operators")
            ops = np.array(self.custom_kraus, dtype=complex)
            if ops.ndim != 3 or ops.shape[1] != ops.shape[2]:
                raise InvalidNoise("custom Kraus operators must be square matrices")
            if completeness_error(ops) > DEFAULT_TOL.completeness:
                raise InvalidNoise("custom Kraus operators are not trace preserving")
        if self.kind == "random" and self.placement != "random":
            raise InvalidNoise("kind 'random' requires random placement")
        if self.placement == "random" and self.p <= 0.0:
            raise InvalidNoise("random placement needs p_max > 0")
        if not (0 <= self.seed < 2 ** 64):
            raise InvalidNoise("seed must be an unsigned 64-bit integer")


class SplitMix64:
    """Seedable 64-bit generator (SplitMix64), fixed for reproducible noise placement."""

    _MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self._MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self._MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self._MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self._MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Float in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, k: int) -> int:
        return min(int(self.uniform() * k), k - 1)


def inject_random_noise(circ: CircuitIR, seed: int, p_max: float,
                        kinds: Sequence[str] = NOISE_KINDS) -> CircuitIR:
    """Insert one noise marker per qubit at a random point of its timeline.

    For qubit ``q`` with ``k`` gates, position ``j`` in ``0..k`` puts the
    marker after its ``j``-th gate. Draws per qubit, in ascending order:
    kind, position, probability ``p = p_max * (1 - u)``.
    """
    if not (0.0 < p_max <= 1.0):
        raise InvalidNoise(f"p_max must lie in (0, 1], got {p_max!r}")
    kinds = tuple(kinds)
    if not kinds or any(k not in NOISE_KINDS for k in kinds):
        raise InvalidNoise(f"noise kinds must be drawn from {NOISE_KINDS}")
    rng = SplitMix64(seed)
    n = circ.n_qubits
    counts = [0] * n
    for op in circ.ops:
        for q in op.qubits:
            counts[q] += 1
    plan = []
    for q in range(n):
        kind = kinds[rng.below(len(kinds))]
        pos = rng.below(counts[q] + 1)
        p = p_max * (1.0 - rng.uniform())
        plan.append((kind, pos, p))

    def marker(q):
        kind, _, p = plan[q]
        return NoiseOp(kind, q, p)

    ops = [marker(q) for q in range(n) if plan[q][1] == 0]
    seen = [0] * n
    for op in circ.ops:
        ops.append(op)
        for q in op.qubits:
            seen[q] += 1
            if plan[q][1] == seen[q]:
                ops.append(marker(q))
    return CircuitIR(n, tuple(ops), circ.measured_qubits)


def apply_noise_spec(circ: CircuitIR, noise: Optional[NoiseSpec]) -> CircuitIR:
    """Materialise standard-kind noise as markers (custom noise is left to compilation)."""
    if noise is None or noise.kind == "custom":
        return circ
    if noise.placement == "random":
        kinds = NOISE_KINDS if noise.kind == "random" else (noise.kind,)
        return inject_random_noise(circ, noise.seed, noise.p, kinds)
    return circ.append(*(NoiseOp(noise.kind, q, noise.p) for q in range(circ.n_qubits)))


def _custom_end_channel(noise: NoiseSpec, n: int) -> KrausChannel:
    ops = np.array(noise.custom_kraus, dtype=complex)
    dim = 2 ** n
    if ops.shape[1] == dim:
        return KrausChannel(ops)
    if ops.shape[1] != 2:
        raise InvalidNoise(f"custom Kraus operators must be 2x2 or {dim}x{dim}")
    ch = KrausChannel.identity(dim)
    for q in range(n):
        ch = ch.then(KrausChannel([embed(k, [q], n) for k in ops]))
    return ch


def compile_kraus(circ: CircuitIR, noise: Optional[NoiseSpec] = None) -> KrausChannel:
    n = circ.n_qubits
    if n > MAX_KRAUS_QUBITS:
        raise TooLarge(f"{n} qubits exceeds the {MAX_KRAUS_QUBITS}-qubit limit for Kraus compilation")
    circ = apply_noise_spec(circ, noise)
    dim = 2 ** n
    # Columns of each Kraus operator are transformed in place; all operators
    # are stacked side by side so one tensordot handles the whole list.
    ops = np.eye(dim, dtype=complex)[None]
    for op in circ.ops:
        if isinstance(op, GateOp):
            if op.kind == "id":
                continue
            stacked = ops.transpose(1, 0, 2).reshape(dim, -1)
            stacked = apply_local(stacked, gate_matrix(op), op.qubits, n)
            ops = stacked.reshape(dim, len(ops), dim).transpose(1, 0, 2)
        else:
            locals_ = local_noise_kraus(op.kind, op.p)
            new = []
            for k in locals_:
                stacked = ops.transpose(1, 0, 2).reshape(dim, -1)
                stacked = apply_local(stacked, k, [op.qubit], n)
                new.append(stacked.reshape(dim, len(ops), dim).transpose(1, 0, 2))
            ops = np.concatenate(new)
            if len(ops) > dim * dim:
                ops = _compress(ops)
    ch = KrausChannel(ops)
    if noise is not None and noise.kind == "custom":
        ch = ch.then(_custom_end_channel(noise, n))
    return ch


def compile_channel(circ: CircuitIR, noise: Optional[NoiseSpec] = None) -> tuple[KrausChannel, Optional[SuperOp]]:
    """Compile a circuit (plus optional noise) into Kraus and superoperator forms.

    The superoperator is ``None`` above :data:`MAX_SUPEROP_QUBITS` qubits.
    """
    ch = compile_kraus(circ, noise)
    sup = ch.superop() if circ.n_qubits <= MAX_SUPEROP_QUBITS else None
    return ch, sup


# --------------------------------------------------------------------------
# Direct simulation

def simulate_pure(circ: CircuitIR, psi0: Optional[np.ndarray] = None) -> np.ndarray:
    """State vector after a noiseless circuit, starting from ``|0...0>`` by default."""
    n = circ.n_qubits
    if psi0 is None:
        psi = np.zeros((2 ** n, 1), dtype=complex)
        psi[0, 0] = 1.0
    else:
        psi = np.asarray(psi0, dtype=complex).reshape(-1, 1)
    for op in circ.ops:
        if isinstance(op, NoiseOp):
            raise InvalidNoise("pure-state simulation cannot apply noise; use compile_channel")
        if op.kind != "id":
            psi = apply_local(psi, gate_matrix(op), op.qubits, n)
    return psi[:, 0]
