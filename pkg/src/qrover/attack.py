"""Feature-space attacks giving empirical robustness upper bounds.

Classical features are turned into quantum inputs by an encoding circuit
whose rotation angles are the features themselves. Gradients with respect
to the features use the parameter-shift rule on those rotations, so each
gradient costs two classifier evaluations per feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .classifier import Classifier
from .errors import NonShiftableGate, OutOfRange
from .qasm import ROTATIONS, CircuitIR, GateOp
from .channel import simulate_pure
from .qcore import DensityMatrix, fidelity_distance
from .bounds import robustness_lower_bound

ENCODINGS = ("angle", "amplitude", "cluster")
SHIFT = math.pi / 2


def feature_slot(i: int) -> str:
    return f"x_{i}"


def encoding_circuit(n_features: int, n_qubits: int, encoding: str = "angle") -> CircuitIR:
    """Template circuit whose slot ``x_i`` carries feature ``i`` (all angles zero).

    ``angle``: feature ``i`` drives ``ry`` on qubit ``i mod n``; consecutive
    layers of ``n`` features are separated by a CZ ladder.
    ``cluster``: ``H`` on all qubits, CZ between neighbours, then feature
    ``i`` drives ``rx`` on qubit ``i`` (one feature per qubit).
    """
    ops: list[GateOp] = []
    if encoding == "angle":
        for i in range(n_features):
            q = i % n_qubits
            if i and q == 0 and n_qubits > 1:
                ops.extend(GateOp("cz", (k, k + 1)) for k in range(n_qubits - 1))
            ops.append(GateOp("ry", (q,), (0.0,), feature_slot(i)))
    elif encoding == "cluster":
        if n_features != n_qubits:
            raise ValueError("cluster encoding takes exactly one feature per qubit")
        ops.extend(GateOp("h", (q,)) for q in range(n_qubits))
        ops.extend(GateOp("cz", (q, q + 1)) for q in range(n_qubits - 1))
        ops.extend(GateOp("rx", (q,), (0.0,), feature_slot(q)) for q in range(n_qubits))
    else:
        raise ValueError(f"no circuit template for encoding {encoding!r}")
    return CircuitIR(n_qubits, tuple(ops))


@dataclass(frozen=True, eq=False)
class EncodedInput:
    features: np.ndarray
    encoding: str
    n_qubits: int
    circuit: Optional[CircuitIR]
    state: DensityMatrix

    def with_features(self, x) -> "EncodedInput":
        return encode(x, self.n_qubits, self.encoding)

    def __eq__(self, other):
        if not isinstance(other, EncodedInput):
            return NotImplemented
        return (self.encoding == other.encoding and self.n_qubits == other.n_qubits
                and np.array_equal(self.features, other.features))

    __hash__ = None


def encode(x, n_qubits: int, encoding: str = "angle") -> EncodedInput:
    """Prepare the pure input state for feature vector ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    x.setflags(write=False)
    if encoding == "amplitude":
        dim = 2 ** n_qubits
        if len(x) != dim:
            raise ValueError(f"amplitude encoding needs {dim} features, got {len(x)}")
        norm = np.linalg.norm(x)
        if norm == 0:
            raise ValueError("cannot amplitude-encode the zero vector")
        psi = (x / norm).astype(complex)
        return EncodedInput(x, encoding, n_qubits, None, DensityMatrix.from_pure(psi))
    template = encoding_circuit(len(x), n_qubits, encoding)
    circ = template.bind({feature_slot(i): v for i, v in enumerate(x)})
    psi = simulate_pure(circ)
    return EncodedInput(x, encoding, n_qubits, circ, DensityMatrix(np.outer(psi, psi.conj()), validate=False))


def encoded_states(xs, n_qubits: int, encoding: str) -> np.ndarray:
    return np.array([encode(x, n_qubits, encoding).state.matrix for x in xs])


# --------------------------------------------------------------------------
# Losses

class NLLLoss:
    """``-log p_target``; the attack loss, maximised to push the input off its class."""

    def __init__(self, target: int, floor: float = 1e-12):
        self.target = target
        self.floor = floor

    def value(self, p: np.ndarray) -> float:
        return -math.log(max(p[self.target], self.floor))

    def grad(self, p: np.ndarray) -> np.ndarray:
        g = np.zeros_like(p)
        g[self.target] = -1.0 / max(p[self.target], self.floor)
        return g


class LinearLoss:
    """``sum_c w_c p_c``; with weights (1, -1) this is the Z expectation of a one-qubit readout."""

    def __init__(self, weights: Sequence[float]):
        self.weights = np.asarray(weights, dtype=float)

    def value(self, p: np.ndarray) -> float:
        return float(self.weights @ p)

    def grad(self, p: np.ndarray) -> np.ndarray:
        return self.weights.copy()


# --------------------------------------------------------------------------
# Gradients

class ShotSampler:
    """Replaces exact probabilities with multinomial estimates from ``shots`` samples."""

    def __init__(self, shots: int, seed: int):
        if shots < 1:
            raise ValueError("shots must be positive")
        self.shots = shots
        self.rng = np.random.default_rng(seed)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        p = np.clip(p, 0.0, None)
        counts = self.rng.multinomial(self.shots, p / p.sum())
        return counts / self.shots


def shift_gradient(distribution: Callable[[np.ndarray], np.ndarray], values: np.ndarray,
                   loss, indices: Optional[Sequence[int]] = None) -> tuple[np.ndarray, int]:
    """Parameter-shift gradient of ``loss(distribution(values))``.

    ``distribution`` maps a full angle vector to class probabilities; every
    angle must enter through exactly one rx/ry/rz gate. Returns the gradient
    and the number of ``distribution`` evaluations spent.
    """
    values = np.asarray(values, dtype=float)
    p0 = distribution(values)
    dloss = loss.grad(p0)
    idx = range(len(values)) if indices is None else indices
    grad = np.zeros(len(values))
    evals = 1
    for i in idx:
        plus = values.copy()
        plus[i] += SHIFT
        minus = values.copy()
        minus[i] -= SHIFT
        dp = 0.5 * (distribution(plus) - distribution(minus))
        grad[i] = float(dloss @ dp)
        evals += 2
    return grad, evals


def _check_shiftable(inp: EncodedInput):
    if inp.circuit is None:
        raise NonShiftableGate(f"{inp.encoding} encoding has no rotation gates to shift")
    slots = {feature_slot(i) for i in range(len(inp.features))}
    for op in inp.circuit.gates:
        if op.slot in slots and op.kind not in ROTATIONS:
            raise NonShiftableGate(f"feature gate {op.kind} is not a one-parameter rotation")


def parameter_shift_gradient(a: Classifier, inp: EncodedInput, loss,
                             sampler: Optional[ShotSampler] = None) -> np.ndarray:
    """Gradient of ``loss`` (over the outcome distribution) with respect to the features."""
    grad, _ = _feature_gradient(a, inp, loss, sampler)
    return grad


def _feature_gradient(a: Classifier, inp: EncodedInput, loss, sampler=None):
    _check_shiftable(inp)

    def dist(x):
        p = a.outcome_distribution(encode(x, inp.n_qubits, inp.encoding).state.matrix)
        return sampler(p) if sampler is not None else p

    return shift_gradient(dist, np.array(inp.features, dtype=float), loss)


# --------------------------------------------------------------------------
# Steps

def _sign(g: np.ndarray) -> np.ndarray:
    return np.sign(np.asarray(g, dtype=float))


def fgsm_step(x, grad, eps: float) -> np.ndarray:
    """``x + eps * sign(grad)`` with ``sign(0) = 0``."""
    if eps < 0:
        raise OutOfRange("step size must be non-negative")
    return np.asarray(x, dtype=float) + eps * _sign(grad)


def top_k_mask(grad, fraction: float) -> np.ndarray:
    """Boolean mask of the ``ceil(fraction * d)`` largest ``|grad_i|``; ties go to the smaller index."""
    g = np.abs(np.asarray(grad, dtype=float))
    d = len(g)
    if not (0.0 < fraction <= 1.0):
        raise OutOfRange(f"mask fraction must lie in (0, 1], got {fraction!r}")
    k = max(1, min(d, math.ceil(fraction * d - 1e-9)))
    order = sorted(range(d), key=lambda i: (-g[i], i))
    mask = np.zeros(d, dtype=bool)
    mask[order[:k]] = True
    return mask


def mask_fgsm_step(x, grad, eps: float, mask_fraction: float) -> np.ndarray:
    if eps < 0:
        raise OutOfRange("step size must be non-negative")
    mask = top_k_mask(grad, mask_fraction)
    return np.asarray(x, dtype=float) + eps * np.where(mask, _sign(grad), 0.0)


# --------------------------------------------------------------------------
# Attack driver

@dataclass(frozen=True)
class AttackConfig:
    strategy: str = "mask_fgsm"
    strength: float = 0.05
    mask_fraction: float = 0.25
    max_escalations: int = 10
    shots: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("fgsm", "mask_fgsm"):
            raise ValueError(f"strategy must be 'fgsm' or 'mask_fgsm', got {self.strategy!r}")
        if not (self.strength > 0 and math.isfinite(self.strength)):
            raise ValueError("attack strength must be positive")
        if not (0.0 < self.mask_fraction <= 1.0):
            raise ValueError("mask fraction must lie in (0, 1]")
        if self.max_escalations < 0:
            raise ValueError("max_escalations must be non-negative")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive")

    def for_item(self, index: int) -> "AttackConfig":
        """Per-item copy with its own random stream."""
        return AttackConfig(self.strategy, self.strength, self.mask_fraction,
                            self.max_escalations, self.shots, self.seed ^ index)


@dataclass(frozen=True)
class AttackResult:
    success: bool
    original: EncodedInput
    adversarial_input: Optional[EncodedInput]
    rub: Optional[float]
    escalations_used: int
    eps_used: Optional[float]
    evaluations: int
    perturbed_features: int = 0
    original_label: int = 0
    adversarial_label: Optional[int] = None

    @property
    def feature_delta(self) -> Optional[np.ndarray]:
        if self.adversarial_input is None:
            return None
        return self.adversarial_input.features - self.original.features


def run_attack(a: Classifier, inp: EncodedInput, cfg: AttackConfig) -> AttackResult:
    """One gradient evaluation, then sign steps of growing size until the label flips.

    The step size starts at ``cfg.strength`` and doubles up to
    ``cfg.max_escalations`` times.
    """
    if cfg.strategy == "mask_fgsm" and cfg.mask_fraction * len(inp.features) < 1 - 1e-9:
        raise OutOfRange(f"mask fraction {cfg.mask_fraction} selects no feature out of {len(inp.features)}")
    top = a.classify(inp.state.matrix)
    sampler = ShotSampler(cfg.shots, cfg.seed) if cfg.shots else None
    grad, evals = _feature_gradient(a, inp, NLLLoss(top), sampler)
    if cfg.strategy == "mask_fgsm":
        support = int(top_k_mask(grad, cfg.mask_fraction).sum())
    else:
        support = len(grad)
    support = min(support, int(np.count_nonzero(grad)))
    eps = cfg.strength
    for k in range(cfg.max_escalations + 1):
        if cfg.strategy == "fgsm":
            x_adv = fgsm_step(inp.features, grad, eps)
        else:
            x_adv = mask_fgsm_step(inp.features, grad, eps, cfg.mask_fraction)
        adv = encode(x_adv, inp.n_qubits, inp.encoding)
        label = a.classify(adv.state.matrix)
        if label != top:
            rub = fidelity_distance(inp.state, adv.state)
            return AttackResult(True, inp, adv, rub, k, eps, evals, support, top, label)
        eps *= 2.0
    return AttackResult(False, inp, None, None, cfg.max_escalations, None, evals, support, top, None)


def lower_bound_of(a: Classifier, inp: EncodedInput) -> float:
    return robustness_lower_bound(a.outcome_distribution(inp.state.matrix))
