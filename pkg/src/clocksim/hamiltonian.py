"""Time-dependent Hamiltonians, their norm measures, and a reference propagator.

The reference propagator is the oracle every other module is checked against.
It only needs the sampler: products of midpoint exponentials, refined by step
halving and Richardson extrapolation in powers of h^2.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .linalg import DomainError, hermiticity_defect, max_norm, spectral_norm

Sampler = Callable[[float], np.ndarray]

HERMITIAN_TOL = 1e-12
ZERO_THRESHOLD = 1e-14

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class ConvergenceError(RuntimeError):
    """Raised when the reference propagator cannot reach its tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved


@dataclass(frozen=True)
class TimeDependentHamiltonian:
    """H(t) on ``n_qubits`` qubits for t in [0, T].

    ``sparsity`` is the maximal number of nonzeros per row over the horizon.
    ``derivative`` is optional; when given it is used for the rate bound.
    """

    n_qubits: int
    sampler: Sampler
    sparsity: int
    label: str
    T: float = 1.0
    derivative: Optional[Sampler] = None

    def __post_init__(self):
        if self.n_qubits < 1:
            raise DomainError("n_qubits must be positive")
        if self.T <= 0:
            raise DomainError("time horizon T must be positive")
        if self.sparsity < 0:
            raise DomainError("sparsity must be nonnegative")

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def __call__(self, t: float) -> np.ndarray:
        return sample(self, t)

    def with_horizon(self, T: float) -> "TimeDependentHamiltonian":
        return dataclasses.replace(self, T=float(T))


@dataclass(frozen=True)
class NormBounds:
    h_max: float
    hdot_max: float
    spectral_max: float


@dataclass(frozen=True)
class ReferenceConfig:
    base_steps: int = 8
    richardson_levels: int = 10
    tolerance: float = 1e-11

    def __post_init__(self):
        if self.base_steps < 4:
            raise DomainError("base_steps must be >= 4")
        if self.richardson_levels < 1:
            raise DomainError("richardson_levels must be >= 1")
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")


def _in_horizon(H: TimeDependentHamiltonian, t: float) -> bool:
    slack = 1e-12 * max(1.0, H.T)
    return -slack <= t <= H.T + slack


def sample(H: TimeDependentHamiltonian, t: float) -> np.ndarray:
    """Return H(t), checking the horizon and Hermiticity."""
    if not _in_horizon(H, t):
        raise DomainError(f"t={t} outside [0, {H.T}] for {H.label!r}")
    h = np.asarray(H.sampler(float(t)), dtype=complex)
    if h.shape != (H.dim, H.dim):
        raise DomainError(f"sampler returned shape {h.shape}, expected {(H.dim, H.dim)}")
    if hermiticity_defect(h) > HERMITIAN_TOL:
        raise DomainError(f"sampler for {H.label!r} is not Hermitian at t={t}")
    return h


def sample_many(H: TimeDependentHamiltonian, times) -> np.ndarray:
    return np.stack([sample(H, t) for t in times])


def row_sparsity(h: np.ndarray, threshold: float = ZERO_THRESHOLD) -> int:
    return int(np.max(np.count_nonzero(np.abs(h) > threshold, axis=1)))


def _derivative_at(H: TimeDependentHamiltonian, t: float, step: float) -> np.ndarray:
    if H.derivative is not None:
        return np.asarray(H.derivative(t), dtype=complex)
    # one-sided second-order stencils at the ends of the horizon
    if t - step < 0:
        return (-3 * sample(H, t) + 4 * sample(H, t + step) - sample(H, t + 2 * step)) / (2 * step)
    if t + step > H.T:
        return (3 * sample(H, t) - 4 * sample(H, t - step) + sample(H, t - 2 * step)) / (2 * step)
    return (sample(H, t + step) - sample(H, t - step)) / (2 * step)


def estimate_norms(H: TimeDependentHamiltonian, grid_points: int) -> NormBounds:
    """Grid estimates of H_max (max-norm), the rate bound and the spectral maximum."""
    if grid_points < 2:
        raise DomainError("grid_points must be >= 2")
    step = H.T / (8 * grid_points)
    h_max = hdot = spec = 0.0
    for t in np.linspace(0.0, H.T, grid_points):
        h = sample(H, t)
        h_max = max(h_max, max_norm(h))
        spec = max(spec, spectral_norm(h))
        hdot = max(hdot, spectral_norm(_derivative_at(H, t, step)))
    return NormBounds(h_max=h_max, hdot_max=hdot, spectral_max=spec)


def _midpoint_product(H: TimeDependentHamiltonian, t0: float, t1: float, steps: int) -> np.ndarray:
    h = (t1 - t0) / steps
    mids = t0 + (np.arange(steps) + 0.5) * h
    vals, vecs = np.linalg.eigh(sample_many(H, mids))
    factors = np.einsum("sij,sj,skj->sik", vecs, np.exp(-1j * vals * h), vecs.conj())
    u = np.eye(H.dim, dtype=complex)
    for f in factors:
        u = f @ u
    return u


def midpoint_propagator(H: TimeDependentHamiltonian, t0: float, t1: float, steps: int) -> np.ndarray:
    """Plain second-order midpoint-exponential product, no extrapolation."""
    if t1 < t0:
        raise DomainError("need t0 <= t1")
    return _midpoint_product(H, t0, t1, steps)


def exact_propagator(
    H: TimeDependentHamiltonian,
    t0: float,
    t1: float,
    cfg: ReferenceConfig = ReferenceConfig(),
) -> np.ndarray:
    """Time-ordered propagator U(t1, t0) to within ``cfg.tolerance``.

    The midpoint product is time-symmetric, so its error expands in even
    powers of the step; a Romberg table removes them level by level.
    """
    if t1 < t0:
        raise DomainError("need t0 <= t1")
    if t1 == t0:
        return np.eye(H.dim, dtype=complex)
    table: list[np.ndarray] = []
    estimate = math.inf
    for level in range(cfg.richardson_levels + 1):
        row = [_midpoint_product(H, t0, t1, cfg.base_steps * 2**level)]
        for m in range(1, level + 1):
            prev = row[m - 1]
            row.append(prev + (prev - table[m - 1]) / (4**m - 1))
        if level > 0:
            estimate = spectral_norm(row[-1] - table[-1])
            if estimate <= cfg.tolerance:
                # nearest unitary; moves the result by at most the defect
                u, _ = scipy.linalg.polar(row[-1])
                return u
        table = row
    raise ConvergenceError(
        f"reference propagator did not reach {cfg.tolerance:g} (estimate {estimate:.3e})",
        achieved=estimate,
    )


# ---------------------------------------------------------------------------
# built-in examples


def _constant(h0: np.ndarray) -> Sampler:
    return lambda t: h0


def constant_z(T: float = 1.0) -> TimeDependentHamiltonian:
    return TimeDependentHamiltonian(
        1, _constant(PAULI_Z), 1, "constant-z", T, derivative=_constant(np.zeros((2, 2), complex))
    )


def driven_qubit(T: float = 1.0) -> TimeDependentHamiltonian:
    return TimeDependentHamiltonian(
        1,
        lambda t: np.cos(t) * PAULI_X + np.sin(t) * PAULI_Z,
        2,
        "driven-qubit",
        T,
        derivative=lambda t: -np.sin(t) * PAULI_X + np.cos(t) * PAULI_Z,
    )


def ramp(T: float = 2.0) -> TimeDependentHamiltonian:
    return TimeDependentHamiltonian(
        1, lambda t: t * PAULI_X, 1, "ramp", T, derivative=_constant(PAULI_X)
    )


_ZZ = np.kron(PAULI_Z, PAULI_Z)
_XI_IX = np.kron(PAULI_X, PAULI_I) + np.kron(PAULI_I, PAULI_X)


def two_qubit_drive(T: float = 1.0) -> TimeDependentHamiltonian:
    return TimeDependentHamiltonian(
        2,
        lambda t: _ZZ + np.sin(t) * _XI_IX,
        3,
        "two-qubit-drive",
        T,
        derivative=lambda t: np.cos(t) * _XI_IX,
    )


def zero_hamiltonian(n_qubits: int = 1, T: float = 1.0) -> TimeDependentHamiltonian:
    z = np.zeros((2**n_qubits, 2**n_qubits), dtype=complex)
    return TimeDependentHamiltonian(n_qubits, _constant(z), 0, "zero", T, derivative=_constant(z))


def builtin_examples() -> list[TimeDependentHamiltonian]:
    return [constant_z(), driven_qubit(), ramp(), two_qubit_drive()]


def get_example(label: str, T: Optional[float] = None) -> TimeDependentHamiltonian:
    """Look up a built-in example by label, optionally overriding its horizon."""
    table = {h.label: h for h in builtin_examples() + [zero_hamiltonian()]}
    if label not in table:
        raise DomainError(f"unknown Hamiltonian {label!r}; known: {sorted(table)}")
    h = table[label]
    return h if T is None else h.with_horizon(T)
