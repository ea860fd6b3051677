"""Hermitian linear algebra and quantum-state primitives.

Fidelity follows the squared convention ``F = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``
and the distance used everywhere downstream is ``D_F = 1 - F``.
"""

from __future__ import annotations

from typing import Union

import numpy as np

from .config import DEFAULT_TOL, Tolerances
from .errors import DimMismatch, InvalidState, NotHermitian, NotPSD

ArrayLike = Union[np.ndarray, "DensityMatrix"]


def _as_matrix(m) -> np.ndarray:
    if isinstance(m, DensityMatrix):
        return m.matrix
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def hermiticity_error(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def hermitian_eig(m, tol: Tolerances = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix.

    Returns eigenvalues sorted in descending order and the matching
    orthonormal eigenvectors as columns.
    """
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise NotHermitian(f"matrix is not square: {a.shape}")
    err = hermiticity_error(a)
    if err > tol.hermitian:
        raise NotHermitian(f"max |M - M^dagger| = {err:.3e} exceeds {tol.hermitian:.1e}")
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    return w[::-1].copy(), v[:, ::-1].copy()


def _clamped_eig(a: np.ndarray, tol: Tolerances) -> tuple[np.ndarray, np.ndarray]:
    w, v = hermitian_eig(a, tol)
    if w[-1] < -tol.psd:
        raise NotPSD(f"minimum eigenvalue {w[-1]:.3e} below -{tol.psd:.1e}")
    return np.clip(w, 0.0, None), v


def matrix_sqrt_psd(m, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Principal square root of a PSD matrix; round-off negatives are clamped."""
    w, v = _clamped_eig(_as_matrix(m), tol)
    return (v * np.sqrt(w)) @ v.conj().T


class DensityMatrix:
    """Validated, immutable density matrix.

    >>> DensityMatrix(np.diag([1.0, 0.0])).n_qubits
    1
    """

    __slots__ = ("_m",)

    def __init__(self, matrix, tol: Tolerances = DEFAULT_TOL, *, validate: bool = True):
        if isinstance(matrix, DensityMatrix):
            self._m = matrix._m
            return
        m = np.array(matrix, dtype=complex, copy=True)
        if validate:
            check_density(m, tol)
        m.setflags(write=False)
        self._m = m

    @classmethod
    def from_pure(cls, psi, tol: Tolerances = DEFAULT_TOL) -> "DensityMatrix":
        v = np.asarray(psi, dtype=complex).reshape(-1)
        norm = np.linalg.norm(v)
        if abs(norm - 1.0) > tol.norm:
            raise InvalidState(f"state vector norm {norm!r} is not 1")
        return cls(np.outer(v, v.conj()), tol)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim) / dim)

    @classmethod
    def basis(cls, index: int, dim: int) -> "DensityMatrix":
        m = np.zeros((dim, dim), dtype=complex)
        m[index, index] = 1.0
        return cls(m)

    @classmethod
    def project(cls, matrix) -> "DensityMatrix":
        """Nearest-in-spectrum valid state: hermitize, clip negative eigenvalues, renormalize."""
        a = np.asarray(matrix, dtype=complex)
        a = 0.5 * (a + a.conj().T)
        w, v = np.linalg.eigh(a)
        w = np.clip(w, 0.0, None)
        if w.sum() <= 0:
            raise InvalidState("matrix has no positive spectrum to project onto")
        w /= w.sum()
        out = (v * w) @ v.conj().T
        return cls(0.5 * (out + out.conj().T))

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    @property
    def n_qubits(self) -> int:
        return int(round(np.log2(self.dim)))

    def __array__(self, dtype=None, copy=None):
        return self._m if dtype is None else self._m.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return self._m.shape == other._m.shape and bool(np.array_equal(self._m, other._m))

    def __hash__(self):
        return hash(self._m.tobytes())

    def __repr__(self) -> str:
        return f"DensityMatrix(dim={self.dim})"


def check_density(m: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise InvalidState(f"density matrix must be square, got shape {m.shape}")
    dim = m.shape[0]
    if dim & (dim - 1):
        raise InvalidState(f"dimension {dim} is not a power of two")
    if not np.all(np.isfinite(m)):
        raise InvalidState("density matrix has non-finite entries")
    err = hermiticity_error(m)
    if err > tol.hermitian:
        raise InvalidState(f"not Hermitian (max deviation {err:.3e})")
    tr = np.trace(m)
    if abs(tr - 1.0) > tol.trace:
        raise InvalidState(f"trace {tr.real:.12g} is not 1")
    lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
    if lam < -tol.psd:
        raise InvalidState(f"not PSD (min eigenvalue {lam:.3e})")


def as_density(x) -> DensityMatrix:
    return x if isinstance(x, DensityMatrix) else DensityMatrix(x)


_SPECTRAL_CUTOFF = 64 * np.finfo(float).eps


def fidelity(rho, sigma, tol: Tolerances = DEFAULT_TOL) -> float:
    """Squared Uhlmann fidelity, clamped to [0, 1]."""
    r = _as_matrix(rho)
    s = _as_matrix(sigma)
    if r.shape != s.shape:
        raise DimMismatch(f"cannot compare states of shapes {r.shape} and {s.shape}")
    w, v = _clamped_eig(r, tol)
    # eigenvalues at rounding level are zeros; their square roots (~1e-8)
    # would otherwise leak into the trace
    w = np.where(w > _SPECTRAL_CUTOFF * max(w.max(), 0.0), w, 0.0)
    sr = (v * np.sqrt(w)) @ v.conj().T
    inner = sr @ s @ sr
    lam = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    lam = np.where(lam > _SPECTRAL_CUTOFF * max(lam.max(), 0.0), lam, 0.0)
    root = float(np.sum(np.sqrt(lam)))
    return min(1.0, max(0.0, root * root))


def fidelity_distance(rho, sigma, tol: Tolerances = DEFAULT_TOL) -> float:
    """Infidelity ``1 - F(rho, sigma)``."""
    return 1.0 - fidelity(rho, sigma, tol)


def pure_fidelity(psi, sigma) -> float:
    """``<psi|sigma|psi>``, the fidelity shortcut when one state is pure."""
    v = np.asarray(psi, dtype=complex).reshape(-1)
    return float(np.clip(np.real(v.conj() @ _as_matrix(sigma) @ v), 0.0, 1.0))


# Random ensembles, used by tests, task generators and the acceptance harness.

def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_pure_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Ginibre-induced random mixed state of the given rank (full rank by default)."""
    k = dim if rank is None else rank
    g = rng.standard_normal((dim, k)) + 1j * rng.standard_normal((dim, k))
    m = g @ g.conj().T
    m = m / np.trace(m).real
    return DensityMatrix(0.5 * (m + m.conj().T))
