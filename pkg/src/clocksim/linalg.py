"""Dense linear-algebra helpers shared by the simulation modules."""

from __future__ import annotations

import math

import numpy as np


class NumericError(RuntimeError):
    """A numerical routine failed (eigensolver, root finder, ...)."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def is_diagonal(a: np.ndarray, atol: float = 0.0) -> bool:
    off = a - np.diag(np.diag(a))
    return bool(np.all(np.abs(off) <= atol))


def spectral_norm(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def max_norm(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def hermiticity_defect(a: np.ndarray) -> float:
    return max_norm(a - dagger(a))


def unitarity_defect(u: np.ndarray) -> float:
    return spectral_norm(dagger(u) @ u - np.eye(u.shape[0]))


class HermitianExp:
    """Cached spectral decomposition of a Hermitian matrix.

    ``exp(t)`` returns ``exp(-i A t)``. Diagonal inputs skip the eigensolver.
    """

    def __init__(self, a: np.ndarray):
        a = np.asarray(a)
        if a.ndim == 1:
            self.values = a.astype(float)
            self.vectors = None
        elif is_diagonal(a):
            self.values = np.real(np.diag(a)).astype(float)
            self.vectors = None
        else:
            try:
                self.values, self.vectors = np.linalg.eigh(a)
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"eigensolver failed: {exc}") from exc
        self.dim = self.values.shape[0]

    def phases(self, t: float) -> np.ndarray:
        return np.exp(-1j * self.values * t)

    def exp(self, t: float) -> np.ndarray:
        ph = self.phases(t)
        if self.vectors is None:
            return np.diag(ph)
        return (self.vectors * ph) @ dagger(self.vectors)

    def apply(self, t: float, v: np.ndarray) -> np.ndarray:
        """exp(-iAt) @ v without forming the full exponential."""
        ph = self.phases(t)
        if self.vectors is None:
            return ph.reshape((-1,) + (1,) * (v.ndim - 1)) * v
        coeffs = dagger(self.vectors) @ v
        return self.vectors @ (ph.reshape((-1,) + (1,) * (v.ndim - 1)) * coeffs)


def expm_hermitian(a: np.ndarray, t: float = 1.0) -> np.ndarray:
    """exp(-i a t) for Hermitian ``a`` via unitary eigendecomposition."""
    return HermitianExp(a).exp(t)


def robust_ceil(x: float) -> int:
    """Ceiling that snaps values within rounding noise of an integer onto it.

    The snap window is relative 1e-12, capped at 1e-6 so that large
    non-integers keep their plain ceiling.
    """
    nearest = round(x)
    if abs(x - nearest) <= min(1e-6, 1e-12 * max(1.0, abs(x))):
        return int(nearest)
    return math.ceil(x)
