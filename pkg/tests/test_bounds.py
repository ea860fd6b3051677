import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import random_classifier
from qrover.bounds import (INFINITE, Infinite, assemble_bounds, is_infinite, optimal_radius,
                           robustness_lower_bound, witness_distance)
from qrover.channel import KrausChannel, NoiseSpec, compile_kraus
from qrover.classifier import Classifier, Povm
from qrover.errors import SandwichViolation, TooFewClasses
from qrover.qasm import CircuitIR
from qrover.qcore import random_density_matrix

seeds = st.integers(0, 2 ** 32 - 1)


def z_classifier():
    return Classifier(KrausChannel.identity(2), Povm.computational(1))


# -- lower bound -------------------------------------------------------------------

def test_rlb_examples():
    assert robustness_lower_bound([1.0, 0.0]) == pytest.approx(0.5, abs=1e-12)
    assert robustness_lower_bound([0.5, 0.5]) == pytest.approx(0.0, abs=1e-12)
    assert robustness_lower_bound([0.9, 0.1]) == pytest.approx(0.2, abs=1e-12)


def test_rlb_uses_runner_up():
    p = [0.5, 0.3, 0.2]
    assert robustness_lower_bound(p) == pytest.approx(0.5 * (math.sqrt(0.5) - math.sqrt(0.3)) ** 2)


def test_rlb_needs_two_classes():
    with pytest.raises(TooFewClasses):
        robustness_lower_bound([1.0])


@given(st.floats(0, 0.5), st.floats(0, 0.5))
def test_rlb_monotone_in_margin(lose, extra):
    # binary case: raising the winning probability never lowers the bound
    top = 1 - lose
    p1 = [top, lose]
    p2 = [min(1.0, top + extra), lose]
    assert robustness_lower_bound(p2) >= robustness_lower_bound(p1) - 1e-15


# -- exact radius ----------------------------------------------------------------------

def test_optimal_pure_state():
    res = optimal_radius(z_classifier(), np.diag([1.0, 0.0]))
    assert res.eps_star == pytest.approx(0.5, abs=1e-6)
    assert res.witness.matrix[0, 0].real == pytest.approx(0.5, abs=1e-6)
    assert res.target_label == 1


def test_optimal_mixed_diagonal():
    res = optimal_radius(z_classifier(), np.diag([0.9, 0.1]))
    assert res.eps_star == pytest.approx(0.2, abs=1e-6)
    assert witness_distance(np.diag([0.9, 0.1]), res.witness) == pytest.approx(0.2, abs=1e-6)


def test_unreachable_class_is_infinite():
    a = Classifier(KrausChannel.identity(2), Povm(["a", "b"], [np.eye(2), np.zeros((2, 2))]))
    res = optimal_radius(a, np.diag([0.6, 0.4]))
    assert res.eps_star is INFINITE
    assert res.witness is None


def test_infinite_semantics():
    assert INFINITE > 1e300 and not INFINITE < 0.0
    assert Infinite() is INFINITE
    assert pickle.loads(pickle.dumps(INFINITE)) is INFINITE
    assert is_infinite(INFINITE) and not is_infinite(math.inf)
    assert min(0.3, INFINITE) == 0.3


@given(seeds)
@settings(max_examples=15)
def test_witness_is_misclassified_or_boundary(seed):
    rng = np.random.default_rng(seed)
    a = random_classifier(rng, n_qubits=1)
    rho = random_density_matrix(2, rng)
    res = optimal_radius(a, rho)
    if res.witness is None:
        return
    top = a.classify(rho)
    a_op = a.effective_operator(top, res.target_label)
    assert np.real(np.trace(a_op @ res.witness.matrix)) <= 1e-6
    assert abs(witness_distance(rho, res.witness) - res.eps_star) <= 1e-5


@given(seeds)
@settings(max_examples=15)
def test_sandwich_random(seed):
    rng = np.random.default_rng(seed)
    a = random_classifier(rng)
    rho = random_density_matrix(a.dim, rng)
    rlb = robustness_lower_bound(a.outcome_distribution(rho.matrix))
    res = optimal_radius(a, rho)
    assert is_infinite(res.eps_star) or rlb <= res.eps_star + 1e-6


def test_commuting_binary_tightness():
    # observed, not claimed in general: the lower bound is tight for diagonal states under a Z readout
    for p in (0.55, 0.7, 0.9, 0.99):
        rho = np.diag([p, 1 - p])
        assert optimal_radius(z_classifier(), rho).eps_star == pytest.approx(
            robustness_lower_bound([p, 1 - p]), abs=1e-6)


def test_noise_increases_fragility():
    clean = z_classifier()
    noisy = Classifier(compile_kraus(CircuitIR(1), NoiseSpec("depolarizing", 0.2)), Povm.computational(1))
    rho = np.diag([1.0, 0.0])
    assert optimal_radius(noisy, rho).eps_star < optimal_radius(clean, rho).eps_star


# -- assembly -----------------------------------------------------------------------------

def test_assemble_examples():
    b = assemble_bounds(0.5, 0.5)
    assert b.gap is None
    b = assemble_bounds(0.2, 0.2, 0.25)
    assert b.gap == pytest.approx(0.05)
    with pytest.raises(SandwichViolation):
        assemble_bounds(0.3, 0.2)
    with pytest.raises(SandwichViolation):
        assemble_bounds(0.1, 0.3, 0.2)
    with pytest.raises(SandwichViolation):
        assemble_bounds(0.1, INFINITE, 0.2)
    assert assemble_bounds(0.1, INFINITE).optimal is INFINITE
