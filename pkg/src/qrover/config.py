"""Numerical tolerances used across the package.

Every check reads from a :class:`Tolerances` record so call sites can
override a single value without touching module globals.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-10
    psd: float = 1e-9
    trace: float = 1e-10
    norm: float = 1e-10
    completeness: float = 1e-8
    distribution: float = 1e-8
    solver: float = 1e-8

    def with_(self, **kw) -> "Tolerances":
        return replace(self, **kw)


DEFAULT_TOL = Tolerances()


def solver_tolerance(default: float | None = None) -> float:
    """SDP convergence tolerance, honouring ``QROVER_SOLVER_TOL`` when set."""
    env = os.environ.get("QROVER_SOLVER_TOL")
    if env:
        value = float(env)
        if not (0.0 < value < 1.0):
            raise ValueError(f"QROVER_SOLVER_TOL must lie in (0, 1), got {env!r}")
        return value
    return DEFAULT_TOL.solver if default is None else default
