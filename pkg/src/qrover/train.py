"""Minimal variational classifier and trainer, plus the synthetic task generators.

The model circuit is ``layers`` repetitions of ``ry``/``rz`` on every qubit
followed by a CX ladder, read out by a Z measurement of one qubit. Training
is plain gradient descent on the (weighted) mean negative log-likelihood,
with parameter-shift gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .attack import AttackConfig, encode, run_attack
from .bounds import robustness_lower_bound
from .channel import NoiseSpec, compile_kraus
from .classifier import Classifier, Povm
from .errors import Diverged
from .qasm import CircuitIR, GateOp
from .qcore import DensityMatrix, fidelity
from .verify import LabeledDataset, verify_state

LCEI_LABELS = ("non-excited", "excited")
LCEI_THRESHOLD = math.pi / 4
SYNTHETIC_LABELS = ("A", "B")


def theta_slot(k: int) -> str:
    return f"theta_{k}"


def ansatz(n_qubits: int, layers: int, readout: int = 0) -> CircuitIR:
    ops = []
    k = 0
    for _ in range(layers):
        for q in range(n_qubits):
            ops.append(GateOp("ry", (q,), (0.0,), theta_slot(k)))
            ops.append(GateOp("rz", (q,), (0.0,), theta_slot(k + 1)))
            k += 2
        ops.extend(GateOp("cx", (q, q + 1)) for q in range(n_qubits - 1))
    # closing rotation on the readout qubit sets the measurement basis
    ops.append(GateOp("ry", (readout,), (0.0,), theta_slot(k)))
    return CircuitIR(n_qubits, tuple(ops), (readout,))


@dataclass(frozen=True)
class VariationalModel:
    n_qubits: int
    layers: int
    theta: np.ndarray
    labels: tuple = SYNTHETIC_LABELS
    readout: int = 0
    encoding: Optional[str] = "angle"
    noise: Optional[NoiseSpec] = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if len(theta) != len(self.template().slots):
            raise ValueError(f"theta has {len(theta)} entries, circuit has {len(self.template().slots)} slots")

    @classmethod
    def init(cls, n_qubits: int, layers: int, seed: int = 0, scale: float = 1.0, **kw) -> "VariationalModel":
        # near-zero starts sit on a flat plateau for cluster-state inputs
        rng = np.random.default_rng(seed)
        n_params = len(ansatz(n_qubits, layers, kw.get("readout", 0)).slots)
        return cls(n_qubits, layers, rng.normal(0.0, scale, n_params), **kw)

    def template(self) -> CircuitIR:
        return ansatz(self.n_qubits, self.layers, self.readout)

    def circuit(self, theta=None) -> CircuitIR:
        theta = self.theta if theta is None else theta
        return self.template().bind({theta_slot(k): v for k, v in enumerate(theta)})

    def povm(self) -> Povm:
        return Povm.computational(self.n_qubits, [self.readout], self.labels)

    def classifier(self, theta=None) -> Classifier:
        return Classifier(compile_kraus(self.circuit(theta), self.noise), self.povm())

    def with_theta(self, theta) -> "VariationalModel":
        return replace(self, theta=np.array(theta, dtype=float))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.2
    batch: int = 0  # 0 means full batch
    seed: int = 0
    adversarial: bool = False
    attack_cfg: Optional[AttackConfig] = None
    witness_eps: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be finite and positive")
        if self.epochs < 0 or self.batch < 0:
            raise ValueError("epochs and batch must be non-negative")


@dataclass
class TrainResult:
    model: VariationalModel
    losses: list[float]
    theta_history: list[np.ndarray] = field(default_factory=list)
    adversarial_items: int = 0


def _batch_probs(model: VariationalModel, theta: np.ndarray, states: np.ndarray) -> np.ndarray:
    a = model.classifier(theta)
    return np.clip(a.raw_probabilities(states), 1e-12, 1.0)


def mean_loss(model: VariationalModel, states, labels, weights, theta=None) -> float:
    theta = model.theta if theta is None else theta
    p = _batch_probs(model, theta, states)
    nll = -np.log(p[np.arange(len(labels)), labels])
    return float(np.sum(weights * nll) / np.sum(weights))


def _gradient(model: VariationalModel, theta: np.ndarray, states, labels, weights) -> np.ndarray:
    rows = np.arange(len(labels))
    w = weights / np.sum(weights)
    p0 = _batch_probs(model, theta, states)[rows, labels]
    grad = np.zeros(len(theta))
    for k in range(len(theta)):
        plus = theta.copy()
        plus[k] += math.pi / 2
        minus = theta.copy()
        minus[k] -= math.pi / 2
        dp = 0.5 * (_batch_probs(model, plus, states)[rows, labels]
                    - _batch_probs(model, minus, states)[rows, labels])
        grad[k] = float(np.sum(w * (-dp / p0)))
    return grad


def _descend(model: VariationalModel, states, labels, weights, cfg: TrainConfig,
             rng: np.random.Generator, losses: list, history: list) -> VariationalModel:
    theta = np.array(model.theta, dtype=float)
    n = len(labels)
    batch = cfg.batch or n
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            g = _gradient(model, theta, states[idx], labels[idx], weights[idx])
            theta = theta - cfg.learning_rate * g
            if not np.all(np.isfinite(theta)):
                raise Diverged("parameters became non-finite")
        loss = mean_loss(model, states, labels, weights, theta)
        if not math.isfinite(loss):
            raise Diverged(f"loss became non-finite at epoch {len(losses)}")
        losses.append(loss)
        history.append(theta.copy())
    return model.with_theta(theta)


def _arrays(items: Sequence[tuple[DensityMatrix, int, float]]):
    states = np.array([s.matrix for s, _, _ in items])
    labels = np.array([l for _, l, _ in items], dtype=int)
    weights = np.array([w for _, _, w in items], dtype=float)
    return states, labels, weights


def _base_items(data: LabeledDataset):
    return [(it.state, it.label, 1.0) for it in data]


def harvest_adversarial(model: VariationalModel, data: LabeledDataset, cfg: TrainConfig,
                        indices: Optional[Sequence[int]] = None) -> list[tuple[DensityMatrix, int, float]]:
    """Adversarial examples for the chosen items, paired with their correct labels.

    Feature items are attacked in feature space (weight 1). Raw-state items
    get the SDP witness at ``cfg.witness_eps``, weighted by its fidelity to
    the original state.
    """
    a = model.classifier()
    attack_cfg = cfg.attack_cfg
    if attack_cfg is None:
        d = max((len(it.features.features) for it in data if it.features is not None), default=1)
        attack_cfg = AttackConfig(mask_fraction=max(0.25, 1.0 / d), seed=cfg.seed)
    out = []
    for i in (range(len(data)) if indices is None else indices):
        it = data[i]
        if a.classify(it.state.matrix) != it.label:
            continue
        if it.features is not None and it.features.circuit is not None:
            res = run_attack(a, it.features, attack_cfg.for_item(i))
            if res.success:
                out.append((res.adversarial_input.state, it.label, 1.0))
        elif cfg.witness_eps is not None:
            v = verify_state(a, cfg.witness_eps, it.state)
            if not v.robust and v.witness is not None:
                out.append((v.witness, it.label, fidelity(it.state, v.witness)))
    return out


def adversarial_retrain(model: VariationalModel, data: LabeledDataset, adversarial, cfg: TrainConfig) -> TrainResult:
    """Continue training from ``model`` on ``data`` augmented with ``adversarial`` items."""
    items = _base_items(data) + [tuple(x) for x in adversarial]
    states, labels, weights = _arrays(items)
    rng = np.random.default_rng(cfg.seed + 1)
    losses = [mean_loss(model, states, labels, weights)]
    history = [np.array(model.theta)]
    model = _descend(model, states, labels, weights, cfg, rng, losses, history)
    return TrainResult(model, losses, history, len(adversarial))


def train(model: VariationalModel, data: LabeledDataset, cfg: TrainConfig) -> TrainResult:
    """Gradient-descent training; with ``cfg.adversarial`` a second phase retrains on harvested examples."""
    if len(data) == 0:
        raise ValueError("training data is empty")
    states, labels, weights = _arrays(_base_items(data))
    rng = np.random.default_rng(cfg.seed)
    losses = [mean_loss(model, states, labels, weights)]
    history = [np.array(model.theta)]
    model = _descend(model, states, labels, weights, cfg, rng, losses, history)
    if not cfg.adversarial:
        return TrainResult(model, losses, history)
    adv = harvest_adversarial(model, data, cfg)
    if not adv:
        return TrainResult(model, losses, history)
    second = adversarial_retrain(model, data, adv, cfg)
    return TrainResult(second.model, losses + second.losses[1:], history + second.theta_history[1:], len(adv))


def accuracy(model: VariationalModel, data: LabeledDataset) -> float:
    a = model.classifier()
    pred = a.classify_many(data.states())
    return float(np.mean(pred == np.array([it.label for it in data])))


# --------------------------------------------------------------------------
# Task generators

def _balanced_labels(n_samples: int) -> list[int]:
    return [i % 2 for i in range(n_samples)]


def generate_lcei(n_qubits: int, n_samples: int, alpha_range=(0.0, math.pi / 2), seed: int = 0,
                  threshold: float = LCEI_THRESHOLD) -> LabeledDataset:
    """Linear cluster states with an ``rx(alpha)`` on the last qubit.

    ``|alpha| > threshold`` is labelled excited. Labels alternate, and each
    ``alpha`` is drawn uniformly from the part of ``alpha_range`` belonging
    to its label. Features are the per-qubit ``rx`` angles, zero except
    the last.
    """
    lo, hi = float(alpha_range[0]), float(alpha_range[1])
    if not lo < hi:
        raise ValueError("alpha_range must be an increasing interval")
    if not (2 <= n_qubits <= 6):
        raise ValueError("LCEI is generated for 2 to 6 qubits")
    rng = np.random.default_rng(seed)
    items = []
    for label in _balanced_labels(n_samples):
        for _ in range(10_000):
            alpha = rng.uniform(lo, hi)
            if (abs(alpha) > threshold) == bool(label):
                break
        else:
            raise ValueError(f"alpha_range {alpha_range} has no room for label {LCEI_LABELS[label]!r}")
        x = np.zeros(n_qubits)
        x[-1] = alpha
        items.append((encode(x, n_qubits, "cluster"), label))
    return LabeledDataset(items, name=f"lcei-{n_qubits}", labels=LCEI_LABELS)


def generate_synthetic(n_qubits: int, n_samples: int, seed: int = 0, n_features: Optional[int] = None,
                       spread: float = 0.3) -> LabeledDataset:
    """Two Gaussian clusters of rotation angles (centres pi/3 and 2pi/3), angle-encoded.

    Defaults to four features per qubit, loaded in layers by the angle encoding.
    """
    d = 4 * n_qubits if n_features is None else n_features
    rng = np.random.default_rng(seed)
    centres = (math.pi / 3, 2 * math.pi / 3)
    items = []
    for label in _balanced_labels(n_samples):
        x = rng.normal(centres[label], spread, d)
        items.append((encode(x, n_qubits, "angle"), label))
    return LabeledDataset(items, name=f"synthetic-{n_qubits}", labels=SYNTHETIC_LABELS)


def critical_samples(rlbs, fraction: float = 0.2) -> list[int]:
    """Indices of the ``floor(fraction * n)`` smallest lower bounds (ties by index).

    ``rlbs`` is a sequence of lower bounds or a verification report.
    """
    if hasattr(rlbs, "per_item"):
        rlbs = [r.rlb for r in rlbs.per_item]
    values = [math.inf if r is None else r for r in rlbs]
    k = math.floor(fraction * len(values) + 1e-9)
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    return sorted(order[:k])


def rlb_for_label(a: Classifier, state, label: int) -> float:
    """Certified radius of the correct prediction; 0 when the item is misclassified."""
    p = a.outcome_distribution(np.asarray(state))
    if int(np.argmax(p)) != label:
        return 0.0
    return robustness_lower_bound(p)
