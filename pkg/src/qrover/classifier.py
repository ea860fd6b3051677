"""Quantum classifiers: a CPTP channel followed by a POVM readout.

Labels are opaque strings; internally every class is addressed by its
index in ``povm.labels``. Ties in the arg-max go to the smallest index.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .channel import KrausChannel, NoiseSpec, SuperOp, compile_channel
from .config import DEFAULT_TOL, Tolerances
from .errors import DimMismatch, DistributionInvalid, InvalidPovm, OutOfRange
from .qasm import CircuitIR


class Povm:
    """Ordered POVM elements with their class labels."""

    def __init__(self, labels: Sequence[str], elements, tol: Tolerances = DEFAULT_TOL):
        labels = tuple(str(l) for l in labels)
        mats = np.array([np.asarray(e, dtype=complex) for e in elements])
        if len(labels) != len(mats):
            raise InvalidPovm(f"{len(labels)} labels for {len(mats)} POVM elements")
        if len(set(labels)) != len(labels):
            raise InvalidPovm("POVM labels must be unique")
        if len(mats) < 1 or mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise InvalidPovm("POVM elements must be square matrices of equal size")
        if not np.all(np.isfinite(mats)):
            raise InvalidPovm("POVM has non-finite entries")
        for label, m in zip(labels, mats):
            if np.max(np.abs(m - m.conj().T)) > tol.hermitian:
                raise InvalidPovm(f"element {label!r} is not Hermitian")
            lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
            if lam < -tol.psd:
                raise InvalidPovm(f"element {label!r} is not PSD (min eigenvalue {lam:.3e})")
        err = float(np.max(np.abs(mats.sum(axis=0) - np.eye(mats.shape[1]))))
        if err > tol.completeness:
            raise InvalidPovm(f"elements sum to identity only within {err:.3e}")
        mats.setflags(write=False)
        self.labels = labels
        self.elements = mats

    @property
    def dim(self) -> int:
        return self.elements.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise InvalidPovm(f"unknown label {label!r}; expected one of {self.labels}") from None

    @classmethod
    def computational(cls, n_qubits: int, qubits: Optional[Sequence[int]] = None,
                      labels: Optional[Sequence[str]] = None) -> "Povm":
        """Projective measurement of ``qubits`` in the Z basis; labels are bitstrings by default."""
        qubits = list(range(n_qubits)) if qubits is None else list(qubits)
        k = len(qubits)
        dim = 2 ** n_qubits
        idx = np.arange(dim)
        bits = [(idx >> (n_qubits - 1 - q)) & 1 for q in qubits]
        outcome = np.zeros(dim, dtype=int)
        for b in bits:
            outcome = (outcome << 1) | b
        elements = [np.diag((outcome == o).astype(complex)) for o in range(2 ** k)]
        if labels is None:
            labels = [format(o, f"0{k}b") for o in range(2 ** k)]
        return cls(labels, elements)


class Classifier:
    """``A = (E, {M_c})``: predicts the most probable POVM outcome of ``E(rho)``."""

    def __init__(self, channel: KrausChannel, povm: Povm, superop: Optional[SuperOp] = None):
        if channel.dim != povm.dim:
            raise DimMismatch(f"channel acts on dimension {channel.dim}, POVM on {povm.dim}")
        if superop is not None and superop.dim != channel.dim:
            raise DimMismatch("superoperator dimension disagrees with the Kraus form")
        self.channel = channel
        self.povm = povm
        self.superop = superop
        # Heisenberg-picture effects E^dagger(M_c): p_c = Tr[E^dagger(M_c) rho]
        eff = np.array([channel.adjoint(m) for m in povm.elements])
        eff.setflags(write=False)
        self.effects = eff

    @classmethod
    def from_circuit(cls, circ: CircuitIR, povm: Povm, noise: Optional[NoiseSpec] = None) -> "Classifier":
        kraus, sup = compile_channel(circ, noise)
        return cls(kraus, povm, sup)

    @property
    def dim(self) -> int:
        return self.channel.dim

    @property
    def n_qubits(self) -> int:
        return self.channel.n_qubits

    @property
    def labels(self) -> tuple[str, ...]:
        return self.povm.labels

    def raw_probabilities(self, rho) -> np.ndarray:
        """Unclamped ``Tr[M_c E(rho)]``; accepts a single matrix or a stack of them."""
        r = np.asarray(rho, dtype=complex)
        if r.shape[-2:] != (self.dim, self.dim):
            raise DimMismatch(f"state of shape {r.shape} does not match classifier dimension {self.dim}")
        # Tr[A rho] = sum_ij A_ji rho_ij
        return np.real(np.einsum("cji,...ij->...c", self.effects, r))

    def outcome_distribution(self, rho, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
        p = self.raw_probabilities(rho)
        return normalize_distribution(p, tol)

    def classify(self, rho) -> int:
        """Index of the predicted label."""
        return int(np.argmax(self.outcome_distribution(rho)))

    def classify_many(self, states) -> np.ndarray:
        p = np.clip(self.raw_probabilities(states), 0.0, 1.0)
        return np.argmax(p, axis=-1)

    def effective_operator(self, winner: int, other: int) -> np.ndarray:
        """``E^dagger(M_winner - M_other)``; ``Tr[A sigma] <= 0`` means ``sigma`` is not won by ``winner``."""
        return self.effects[winner] - self.effects[other]


def normalize_distribution(p: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    total = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > tol.distribution):
        raise DistributionInvalid(f"probabilities sum to {np.ravel(total)[0]:.12g}, not 1")
    q = np.clip(p, 0.0, 1.0)
    return q / q.sum(axis=-1, keepdims=True)


def expectation_to_probability(z: float) -> float:
    """Map a Pauli-Z expectation in [-1, 1] to the probability of outcome 0."""
    if not (-1.0 <= z <= 1.0):
        raise OutOfRange(f"expectation {z!r} outside [-1, 1]")
    return (z + 1.0) / 2.0
