"""Robustness quantities for a single input state.

* :func:`robustness_lower_bound` -- certified radius from the outcome
  distribution alone.
* :func:`optimal_radius` -- exact radius, one SDP per competing class.
* :func:`assemble_bounds` -- checks ``rlb <= optimal <= rub``.

The exact radius minimises the fidelity distance to any state whose winning
class is not the original one (boundary states included). The fidelity
objective is linearised with the block-matrix characterisation

    sqrt(F(rho, sigma)) = max { Re Tr X : [[rho, X], [X^dagger, sigma]] >= 0 },

restricted to the support of ``rho`` so that rank-deficient inputs keep a
strictly feasible block.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import cvxpy as cp
import numpy as np

from .classifier import Classifier
from .config import solver_tolerance
from .errors import SandwichViolation, SolverFailure, TooFewClasses
from .qcore import DensityMatrix, as_density, fidelity_distance

log = logging.getLogger(__name__)

SANDWICH_TOL = 1e-6
_SUPPORT_CUTOFF = 1e-12


class Infinite:
    """Radius of a state no admissible perturbation can misclassify."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE"

    def __reduce__(self):
        return (Infinite, ())

    def __eq__(self, other):
        return isinstance(other, Infinite)

    def __hash__(self):
        return hash("qrover.Infinite")

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return isinstance(other, Infinite)

    def __gt__(self, other):
        return not isinstance(other, Infinite)

    def __ge__(self, other):
        return True


INFINITE = Infinite()
Radius = Union[float, Infinite]


def is_infinite(x) -> bool:
    return isinstance(x, Infinite)


def winner(dist) -> int:
    return int(np.argmax(np.asarray(dist)))


def robustness_lower_bound(dist) -> float:
    """``min_{c != c*} (sqrt(p_c*) - sqrt(p_c))**2 / 2`` for the arg-max class ``c*``."""
    p = np.clip(np.asarray(dist, dtype=float), 0.0, 1.0)
    if p.ndim != 1 or len(p) < 2:
        raise TooFewClasses("the lower bound needs at least two classes")
    top = int(np.argmax(p))
    root = np.sqrt(p)
    gaps = np.delete(root[top] - root, top)
    return float(0.5 * np.min(gaps) ** 2)


@dataclass(frozen=True)
class OptimalRadius:
    eps_star: Radius
    witness: Optional[DensityMatrix]
    target_label: Optional[int]
    per_class: tuple  # ((class index, radius), ...)


def _solve_class(rho: np.ndarray, a: np.ndarray, tol: float):
    """One SDP: closest state (in fidelity) with ``Tr[a sigma] <= 0``.

    Returns ``(radius, sigma)`` or ``(INFINITE, None)`` when infeasible.
    """
    n = rho.shape[0]
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    keep = w > _SUPPORT_CUTOFF
    w, v = w[keep], v[:, keep]
    r = len(w)
    sigma = cp.Variable((n, n), hermitian=True)
    y = cp.Variable((r, n), complex=True)
    block = cp.bmat([[np.diag(w).astype(complex), y], [y.H, sigma]])
    constraints = [
        block >> 0,
        cp.real(cp.trace(sigma)) == 1,
        cp.real(cp.trace(a @ sigma)) <= 0,
    ]
    problem = cp.Problem(cp.Maximize(cp.real(cp.trace(y @ v))), constraints)

    status = None
    for attempt_tol in (tol, tol * 10, tol * 100):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                problem.solve(solver=cp.CLARABEL, tol_gap_abs=attempt_tol, tol_gap_rel=attempt_tol,
                              tol_feas=attempt_tol, max_iter=500)
        except cp.error.SolverError as exc:
            raise SolverFailure("solver_error", str(exc)) from exc
        status = problem.status
        if status in (cp.OPTIMAL, cp.INFEASIBLE):
            break
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return INFINITE, None
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or sigma.value is None:
        raise SolverFailure(str(status))
    if status == cp.OPTIMAL_INACCURATE:
        log.warning("SDP converged only to reduced accuracy")
    root_f = min(1.0, max(0.0, float(problem.value)))
    return 1.0 - root_f ** 2, sigma.value


def optimal_radius(a: Classifier, rho, tol: Optional[float] = None) -> OptimalRadius:
    """Exact robustness radius of ``rho`` under classifier ``a``.

    Solves one SDP per class other than the predicted one and keeps the
    smallest radius. The witness is the optimal state of that SDP, projected
    onto the set of valid density matrices.
    """
    rho = as_density(rho)
    tol = solver_tolerance(tol)
    top = a.classify(rho)
    best: Radius = INFINITE
    best_sigma = None
    best_c = None
    per_class = []
    for c in range(len(a.povm)):
        if c == top:
            continue
        radius, sigma = _solve_class(rho.matrix, a.effective_operator(top, c), tol)
        per_class.append((c, radius))
        if radius < best:
            best, best_sigma, best_c = radius, sigma, c
    witness = DensityMatrix.project(best_sigma) if best_sigma is not None else None
    return OptimalRadius(best, witness, best_c, tuple(per_class))


@dataclass(frozen=True)
class RobustnessBounds:
    rlb: float
    optimal: Optional[Radius] = None
    rub: Optional[float] = None
    witness: Optional[DensityMatrix] = None
    target_label: Optional[int] = None

    @property
    def gap(self) -> Optional[float]:
        if self.rub is None:
            return None
        return self.rub - self.rlb


def assemble_bounds(rlb: float, optimal: Optional[Radius] = None, rub: Optional[float] = None,
                    witness: Optional[DensityMatrix] = None, target: Optional[int] = None,
                    tol: float = SANDWICH_TOL) -> RobustnessBounds:
    if rlb < 0:
        raise SandwichViolation(f"lower bound {rlb} is negative")
    if optimal is not None and not is_infinite(optimal) and rlb > optimal + tol:
        raise SandwichViolation(f"lower bound {rlb!r} exceeds optimal radius {optimal!r}")
    if rub is not None:
        if optimal is not None and (is_infinite(optimal) or optimal > rub + tol):
            raise SandwichViolation(f"optimal radius {optimal!r} exceeds upper bound {rub!r}")
        if rlb > rub + tol:
            raise SandwichViolation(f"lower bound {rlb!r} exceeds upper bound {rub!r}")
    return RobustnessBounds(rlb, optimal, rub, witness, target)


def witness_distance(rho, witness: DensityMatrix) -> float:
    return fidelity_distance(as_density(rho), witness)
