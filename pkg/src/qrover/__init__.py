"""Robustness verification for quantum classifiers."""

__version__ = "0.1.0"

from .attack import AttackConfig, encode, run_attack
from .bounds import INFINITE, optimal_radius, robustness_lower_bound
from .channel import KrausChannel, NoiseSpec, compile_channel
from .classifier import Classifier, Povm
from .qasm import CircuitIR, emit_qasm, parse_qasm
from .qcore import DensityMatrix, fidelity, fidelity_distance
from .verify import LabeledDataset, verify_dataset, verify_state

__all__ = [
    "AttackConfig", "CircuitIR", "Classifier", "DensityMatrix", "INFINITE", "KrausChannel", "LabeledDataset",
    "NoiseSpec", "Povm", "compile_channel", "emit_qasm", "encode", "fidelity", "fidelity_distance",
    "optimal_radius", "parse_qasm", "robustness_lower_bound", "run_attack", "verify_dataset", "verify_state",
]
