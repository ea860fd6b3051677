"""State- and dataset-level robustness verification.

``verify_state`` decides robustness from the exact radius (robust iff
``eps`` does not exceed it). ``verify_dataset`` computes the
robust accuracy; in ``mixed`` mode the certified lower bound screens out
items that cannot be attacked within ``eps`` before any SDP is solved.
``under_robust_accuracy`` uses the lower bound only.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attack import EncodedInput
from .bounds import Radius, optimal_radius, robustness_lower_bound
from .classifier import Classifier
from .errors import DatasetError, OutOfRange
from .qcore import DensityMatrix

ROBUST = "robust"
NON_ROBUST = "non_robust"
SKIPPED = "skipped_misclassified"


@dataclass(frozen=True)
class DatasetItem:
    state: DensityMatrix
    label: int
    features: Optional[EncodedInput] = None


class LabeledDataset:
    """Quantum states (optionally with the features that produced them) and class indices."""

    def __init__(self, items: Sequence, name: str = "dataset", labels: Optional[Sequence[str]] = None):
        norm = []
        for item in items:
            if isinstance(item, DatasetItem):
                norm.append(item)
                continue
            x, label = item
            if isinstance(x, EncodedInput):
                norm.append(DatasetItem(x.state, int(label), x))
            else:
                norm.append(DatasetItem(x if isinstance(x, DensityMatrix) else DensityMatrix(x), int(label)))
        self.items: list[DatasetItem] = norm
        self.name = name
        self.labels = tuple(labels) if labels is not None else None

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i) -> DatasetItem:
        return self.items[i]

    def __iter__(self):
        return iter(self.items)

    def states(self) -> np.ndarray:
        return np.array([it.state.matrix for it in self.items])

    def check_against(self, a: Classifier):
        for i, it in enumerate(self.items):
            if it.state.dim != a.dim:
                raise DatasetError(f"item {i} has dimension {it.state.dim}, classifier expects {a.dim}")
            if not (0 <= it.label < len(a.povm)):
                raise DatasetError(f"item {i} has label index {it.label} outside the classifier's labels")

    def partition(self, a: Classifier) -> tuple[list[int], list[int]]:
        """Split indices into correctly and incorrectly classified items."""
        self.check_against(a)
        pred = a.classify_many(self.states()) if self.items else []
        good = [i for i, it in enumerate(self.items) if pred[i] == it.label]
        bad = [i for i, it in enumerate(self.items) if pred[i] != it.label]
        return good, bad


@dataclass(frozen=True)
class StateVerdict:
    robust: bool
    eps_star: Radius
    witness: Optional[DensityMatrix]
    target_label: Optional[int]
    boundary: bool = False


def _check_eps(eps: float):
    if not (eps < 1.0) or eps != eps:
        raise OutOfRange(f"epsilon must be < 1, got {eps!r}")


def verify_state(a: Classifier, eps: float, rho, tol: Optional[float] = None) -> StateVerdict:
    """Exact eps-robustness check of a single state.

    On a negative verdict the optimal SDP state is returned as the
    adversarial example. ``boundary`` marks witnesses whose arg-max still
    resolves to the original class because they sit on the decision
    boundary.
    """
    _check_eps(eps)
    res = optimal_radius(a, rho, tol)
    # robust iff eps <= eps*; the lower bound is exact arithmetic, so it also
    # certifies eps = rlb when the solver lands a hair below a tight radius
    rlb = robustness_lower_bound(a.outcome_distribution(np.asarray(getattr(rho, "matrix", rho))))
    if eps <= res.eps_star or eps <= rlb:
        return StateVerdict(True, res.eps_star, None, res.target_label)
    boundary = False
    if res.witness is not None:
        top = a.classify(rho)
        boundary = a.classify(res.witness) == top
    return StateVerdict(False, res.eps_star, res.witness, res.target_label, boundary)


@dataclass
class ItemResult:
    index: int
    label: int
    rlb: Optional[float]
    verdict: str
    optimal: Optional[Radius] = None
    rub: Optional[float] = None
    boundary: bool = False
    witness_ref: Optional[int] = None


@dataclass
class VerificationReport:
    epsilon: float
    method: str
    per_item: list[ItemResult]
    robust_accuracy: Optional[float]
    under_robust_accuracy: Optional[float]
    adversarial_set: list[tuple[DensityMatrix, int]] = field(default_factory=list)
    sdp_calls: int = 0
    dataset: str = ""
    labels: tuple = ()
    timing: dict = field(default_factory=dict)

    @property
    def n_evaluated(self) -> int:
        return sum(1 for r in self.per_item if r.verdict != SKIPPED)

    @property
    def misclassified(self) -> list[int]:
        return [r.index for r in self.per_item if r.verdict == SKIPPED]

    @property
    def non_robust(self) -> list[int]:
        return [r.index for r in self.per_item if r.verdict == NON_ROBUST]


def _verify_task(args):
    a, eps, rho, tol = args
    return verify_state(a, eps, rho, tol)


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def verify_dataset(a: Classifier, eps: float, t: LabeledDataset, method: str = "mixed",
                   jobs: int = 1, tol: Optional[float] = None) -> VerificationReport:
    """Robust accuracy of ``a`` over ``t``.

    ``method`` is ``"mixed"`` (lower-bound pre-screen, then SDP on the
    remainder), ``"exact"`` (SDP on every item) or ``"lb"`` (lower bound
    only; the robust accuracy is then left unset). Misclassified items are
    reported as skipped and excluded from both accuracies.
    """
    _check_eps(eps)
    if method not in ("mixed", "exact", "lb"):
        raise ValueError(f"method must be 'mixed', 'exact' or 'lb', got {method!r}")
    timing = {}
    t0 = time.perf_counter()
    good, bad = t.partition(a)
    bad_set = set(bad)
    dists = {i: a.outcome_distribution(t[i].state.matrix) for i in good}
    rlb = {i: robustness_lower_bound(dists[i]) for i in good}
    timing["lower_bound"] = time.perf_counter() - t0

    results: dict[int, ItemResult] = {}
    for i in bad:
        results[i] = ItemResult(i, t[i].label, None, SKIPPED)
    flagged = [i for i in good if eps > rlb[i]]
    ura = 1.0 - len(flagged) / len(good) if good else None

    if method == "lb":
        for i in good:
            results[i] = ItemResult(i, t[i].label, rlb[i], NON_ROBUST if i in flagged else ROBUST)
        per_item = [results[i] for i in range(len(t))]
        return VerificationReport(eps, method, per_item, None, ura, [], 0, t.name, a.labels, timing)

    to_check = flagged if method == "mixed" else list(good)
    t1 = time.perf_counter()
    verdicts = _map(_verify_task, [(a, eps, t[i].state, tol) for i in to_check], jobs)
    timing["sdp"] = time.perf_counter() - t1
    checked = dict(zip(to_check, verdicts))

    adversarial: list[tuple[DensityMatrix, int]] = []
    for i in good:
        v = checked.get(i)
        if v is None:
            results[i] = ItemResult(i, t[i].label, rlb[i], ROBUST)
            continue
        item = ItemResult(i, t[i].label, rlb[i], ROBUST if v.robust else NON_ROBUST, v.eps_star)
        if not v.robust:
            item.boundary = v.boundary
            if v.witness is not None:
                item.witness_ref = len(adversarial)
                adversarial.append((v.witness, i))
        results[i] = item
    n_non_robust = sum(1 for i in good if results[i].verdict == NON_ROBUST)
    ra = 1.0 - n_non_robust / len(good) if good else None
    per_item = [results[i] for i in range(len(t))]
    assert not bad_set.intersection(checked)
    return VerificationReport(eps, method, per_item, ra, ura, adversarial, len(to_check),
                              t.name, a.labels, timing)


def under_robust_accuracy(a: Classifier, eps: float, t: LabeledDataset) -> Optional[float]:
    """Lower-bound-only under-approximation of the robust accuracy (no SDP)."""
    _check_eps(eps)
    good, _ = t.partition(a)
    if not good:
        return None
    r = sum(1 for i in good if eps > robustness_lower_bound(a.outcome_distribution(t[i].state.matrix)))
    return 1.0 - r / len(good)
