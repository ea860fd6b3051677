"""Five-step robustness benchmark on a trained variational classifier.

1. outcome distributions of the selected samples
2. certified lower bounds
3. Mask FGSM upper bounds
4. adversarial retraining on the successful attacks
5. lower bounds again, compared over the critical samples
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attack import AttackConfig, run_attack
from .bounds import assemble_bounds, is_infinite, optimal_radius, robustness_lower_bound
from .errors import OutOfRange
from .train import (LCEI_LABELS, TrainConfig, VariationalModel, adversarial_retrain, critical_samples,
                    generate_lcei, generate_synthetic, rlb_for_label, train)

TASKS = ("lcei", "synthetic")


@dataclass(frozen=True)
class BenchmarkConfig:
    task: str = "lcei"
    n_qubits: int = 3
    samples: int = 10
    seed: int = 0
    train_size: int = 40
    layers: int = 2
    epochs: int = 40
    learning_rate: float = 0.3
    critical_fraction: float = 0.2
    attack: Optional[AttackConfig] = None  # default: Mask FGSM perturbing at least one feature
    exact: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.samples < 1:
            raise OutOfRange("samples must be positive")
        if self.train_size < self.samples:
            raise OutOfRange("train_size must be at least the number of samples")


@dataclass
class SampleRow:
    index: int
    label: int
    distribution: list
    rlb: float
    rub: Optional[float]
    optimal: object = None
    rlb_after: Optional[float] = None
    critical: bool = False

    @property
    def gap(self) -> Optional[float]:
        return None if self.rub is None else self.rub - self.rlb


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    rows: list[SampleRow]
    critical: list[int]
    mean_rlb_before: float
    mean_rlb_after: float
    ratio: float
    clean_accuracy: float
    adversarial_examples: int
    loss_clean: list[float]
    loss_adversarial: list[float]


def _dataset(cfg: BenchmarkConfig):
    if cfg.task == "lcei":
        return generate_lcei(cfg.n_qubits, cfg.train_size, seed=cfg.seed)
    return generate_synthetic(cfg.n_qubits, cfg.train_size, seed=cfg.seed)


def _model(cfg: BenchmarkConfig) -> VariationalModel:
    if cfg.task == "lcei":
        # excitation sits on the last qubit, so read it out there
        return VariationalModel.init(cfg.n_qubits, cfg.layers, seed=cfg.seed, labels=LCEI_LABELS,
                                     encoding="cluster", readout=cfg.n_qubits - 1)
    return VariationalModel.init(cfg.n_qubits, cfg.layers, seed=cfg.seed, encoding="angle")


def _select(a, data, n: int, rng: np.random.Generator) -> list[int]:
    """``n`` correctly classified items, split as evenly as possible between the two classes."""
    pred = a.classify_many(data.states())
    pools = [[i for i, it in enumerate(data) if it.label == c and pred[i] == c] for c in (0, 1)]
    want = [n - n // 2, n // 2]
    if len(pools[0]) < want[0] or len(pools[1]) < want[1]:
        # fall back to whatever is available in the other class
        short = [max(0, want[c] - len(pools[c])) for c in (0, 1)]
        want = [min(len(pools[0]), want[0] + short[1]), min(len(pools[1]), want[1] + short[0])]
    chosen = []
    for c in (0, 1):
        if want[c]:
            chosen.extend(int(i) for i in rng.choice(pools[c], size=want[c], replace=False))
    if len(chosen) < n:
        raise OutOfRange(f"only {len(chosen)} correctly classified items available, {n} requested")
    return sorted(chosen)


def run_benchmark(cfg: BenchmarkConfig) -> BenchmarkResult:
    data = _dataset(cfg)
    tcfg = TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate, seed=cfg.seed)
    clean = train(_model(cfg), data, tcfg)
    a = clean.model.classifier()
    pred = a.classify_many(data.states())
    acc = float(np.mean(pred == np.array([it.label for it in data])))

    n_features = len(data[0].features.features)
    attack = cfg.attack or AttackConfig(mask_fraction=max(0.25, 1.0 / n_features), seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    chosen = _select(a, data, cfg.samples, rng)
    rows = []
    adversarial = []
    for i in chosen:
        it = data[i]
        p = a.outcome_distribution(it.state.matrix)
        rlb = robustness_lower_bound(p)
        res = run_attack(a, it.features, attack.for_item(i))
        rub = res.rub if res.success else None
        optimal = optimal_radius(a, it.state).eps_star if cfg.exact else None
        assemble_bounds(rlb, optimal, rub)
        if res.success:
            adversarial.append((res.adversarial_input.state, it.label, 1.0))
        rows.append(SampleRow(i, it.label, [float(x) for x in p], rlb, rub, optimal))

    retrained = adversarial_retrain(clean.model, data, adversarial, tcfg)
    b = retrained.model.classifier()
    for row in rows:
        row.rlb_after = rlb_for_label(b, data[row.index].state.matrix, row.label)

    crit = critical_samples([r.rlb for r in rows], cfg.critical_fraction)
    for k in crit:
        rows[k].critical = True
    if crit:
        before = float(np.mean([rows[k].rlb for k in crit]))
        after = float(np.mean([rows[k].rlb_after for k in crit]))
    else:
        before = after = math.nan
    ratio = after / before if before > 0 else (math.inf if after > 0 else math.nan)
    return BenchmarkResult(cfg, rows, crit, before, after, ratio, acc, len(adversarial),
                           clean.losses, retrained.losses)


def result_table(res: BenchmarkResult) -> dict:
    """Plain-data form of a benchmark result."""
    def radius(x):
        if x is None:
            return None
        return "infinite" if is_infinite(x) else float(x)

    return {
        "task": res.config.task,
        "n_qubits": res.config.n_qubits,
        "samples": res.config.samples,
        "seed": res.config.seed,
        "clean_accuracy": res.clean_accuracy,
        "adversarial_examples": res.adversarial_examples,
        "rows": [
            {
                "index": r.index,
                "label": r.label,
                "distribution": r.distribution,
                "rlb": r.rlb,
                "rub": r.rub,
                "gap": r.gap,
                "optimal": radius(r.optimal),
                "rlb_after": r.rlb_after,
                "critical": r.critical,
            }
            for r in res.rows
        ],
        "critical": [res.rows[k].index for k in res.critical],
        "mean_rlb_before": None if math.isnan(res.mean_rlb_before) else res.mean_rlb_before,
        "mean_rlb_after": None if math.isnan(res.mean_rlb_after) else res.mean_rlb_after,
        "improvement_ratio": res.ratio if math.isfinite(res.ratio) else (
            "infinite" if res.ratio == math.inf else None),
        "loss_clean": res.loss_clean,
        "loss_adversarial": res.loss_adversarial,
    }
