"""Discrete clock reduction of a time-dependent Hamiltonian.

A clock register of dimension M is attached to the system. The clock
generator H_a is the matrix logarithm of the cyclic increment (with the
eigenphase branch 2*pi*x/M, x = 0..M-1), and the system part applies
H(n*delta) conditioned on clock value n. In the Fourier basis of the clock
the generator becomes the diagonal D and the system part becomes B, which
is block-circulant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .hamiltonian import (
    ReferenceConfig,
    TimeDependentHamiltonian,
    estimate_norms,
    exact_propagator,
    sample_many,
)
from .linalg import DomainError, HermitianExp, dagger, robust_ceil

MIN_CLOCK_DIM = 16


@dataclass(frozen=True)
class ClockGrid:
    M: int
    T: float

    def __post_init__(self):
        if self.M < 1:
            raise DomainError("clock dimension M must be positive")
        if self.T <= 0:
            raise DomainError("total time T must be positive")

    @property
    def delta(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.M) * self.delta

    @property
    def frequencies(self) -> np.ndarray:
        """Eigenvalues 2*pi*x/T of the clock generator, x = 0..M-1."""
        return 2 * np.pi * np.arange(self.M) / self.T


def build_increment(M: int) -> np.ndarray:
    """Cyclic shift |t> -> |t+1 mod M>."""
    if M < 2:
        raise DomainError("M must be >= 2")
    u = np.zeros((M, M), dtype=complex)
    u[(np.arange(M) + 1) % M, np.arange(M)] = 1.0
    return u


def build_qft(M: int) -> np.ndarray:
    """Fourier matrix Q with Q diag(exp(-2*pi*i*x/M)) Q^dagger = U_+.

    That identity pins the sign: Q[j, k] = exp(+2*pi*i*j*k/M)/sqrt(M).
    """
    if M < 2:
        raise DomainError("M must be >= 2")
    j = np.arange(M)
    return np.exp(2j * np.pi * np.outer(j, j) / M) / np.sqrt(M)


def clock_generator(grid: ClockGrid) -> np.ndarray:
    """H_a = Q diag(2*pi*x/(M*delta)) Q^dagger on the clock register alone."""
    q = build_qft(grid.M)
    return (q * grid.frequencies) @ dagger(q)


def build_clock_hamiltonian(grid: ClockGrid, N: int) -> np.ndarray:
    return np.kron(clock_generator(grid), np.eye(N))


def build_system_hamiltonian(H: TimeDependentHamiltonian, grid: ClockGrid) -> np.ndarray:
    """Block diagonal with n-th block H(n*delta)."""
    N = H.dim
    out = np.zeros((grid.M * N, grid.M * N), dtype=complex)
    for n, block in enumerate(sample_many(H, grid.times)):
        out[n * N:(n + 1) * N, n * N:(n + 1) * N] = block
    return out


def build_D(grid: ClockGrid, N: int) -> np.ndarray:
    return np.diag(np.repeat(grid.frequencies, N)).astype(complex)


def fourier_blocks(H: TimeDependentHamiltonian, grid: ClockGrid) -> np.ndarray:
    """C[m] = (1/M) sum_n exp(2*pi*i*n*m/M) H(n*delta), shape (M, N, N)."""
    return np.fft.ifft(sample_many(H, grid.times), axis=0)


def build_B(H: TimeDependentHamiltonian, grid: ClockGrid) -> np.ndarray:
    """B = (Q^dagger x I) H_sys (Q x I), assembled from its circulant blocks.

    B[x, y] = C[(y - x) mod M], so no dense conjugation is needed.
    """
    M, N = grid.M, H.dim
    c = fourier_blocks(H, grid)
    idx = (np.arange(M)[None, :] - np.arange(M)[:, None]) % M
    return c[idx].transpose(0, 2, 1, 3).reshape(M * N, M * N)


@dataclass(frozen=True)
class CompositeOperators:
    h_clk: np.ndarray
    h_sys: np.ndarray
    d_op: np.ndarray
    b_op: np.ndarray
    grid: ClockGrid
    system: TimeDependentHamiltonian

    @property
    def N(self) -> int:
        return self.system.dim

    @property
    def d_diag(self) -> np.ndarray:
        return np.real(np.diag(self.d_op))

    @cached_property
    def _spectral(self) -> HermitianExp:
        return HermitianExp(self.h_clk + self.h_sys)

    def qft_system(self) -> np.ndarray:
        """Q x I_N on the composite space."""
        return np.kron(build_qft(self.grid.M), np.eye(self.N))


def build_composite(H: TimeDependentHamiltonian, grid: ClockGrid) -> CompositeOperators:
    N = H.dim
    return CompositeOperators(
        h_clk=build_clock_hamiltonian(grid, N),
        h_sys=build_system_hamiltonian(H, grid),
        d_op=build_D(grid, N),
        b_op=build_B(H, grid),
        grid=grid,
        system=H,
    )


def composite_evolution(ops: CompositeOperators, t: float) -> np.ndarray:
    """exp(-i (H_clk + H_sys) t)."""
    if t < 0:
        raise DomainError("t must be >= 0")
    return ops._spectral.exp(t)


def clock_initial_state(M: int, psi: np.ndarray, clock_index: int = 0) -> np.ndarray:
    v = np.zeros((M, psi.shape[0]), dtype=complex)
    v[clock_index] = psi
    return v.reshape(-1)


def lemma_bound(T: float, M: int, hdot_max: float, constant: float) -> float:
    """(T^2/(2M)) hdot + C T^2 M^(-1/2) hdot."""
    return T**2 / (2 * M) * hdot_max + constant * T**2 * hdot_max / math.sqrt(M)


@dataclass(frozen=True)
class ClockErrorResult:
    M: int
    measured: float
    bound: float
    best_index: int
    best_index_error: float
    leakage: float
    infidelity: float


def clock_error(
    H: TimeDependentHamiltonian,
    M: int,
    T: float,
    psi: np.ndarray,
    constant: float = 5.0,
    ref_cfg: ReferenceConfig = ReferenceConfig(),
    hdot_max: Optional[float] = None,
) -> ClockErrorResult:
    """Distance between the clock-reduced evolution and |0> x U(T,0)|psi>.

    After time T the cyclic clock wraps back to |0>, so that is the target
    clock state; the index of the best-matching clock block is reported too.
    """
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise DomainError("psi must be normalized")
    H = H.with_horizon(T)
    ops = build_composite(H, ClockGrid(M, T))
    out = (composite_evolution(ops, T) @ clock_initial_state(M, psi)).reshape(M, H.dim)
    target = exact_propagator(H, 0.0, T, ref_cfg) @ psi

    def error_at(n: int) -> float:
        diff = out.copy()
        diff[n] -= target
        return float(np.linalg.norm(diff))

    overlaps = np.abs(out.conj() @ target)
    best = int(np.argmax(overlaps))
    if hdot_max is None:
        hdot_max = estimate_norms(H, 64).hdot_max
    return ClockErrorResult(
        M=M,
        measured=error_at(0),
        bound=lemma_bound(T, M, hdot_max, constant),
        best_index=best,
        best_index_error=error_at(best),
        leakage=float(np.linalg.norm(out[1:])),
        infidelity=float(1 - overlaps[0] ** 2),
    )


def commutator_action_norm(
    H: TimeDependentHamiltonian, M: int, T: float, t0: int, psi: np.ndarray
) -> float:
    """|| [H_clk, H_sys] (|t0> x |psi>) ||."""
    if not 0 <= t0 < M:
        raise DomainError("clock index t0 out of range")
    psi = np.asarray(psi, dtype=complex)
    grid = ClockGrid(M, T)
    ha = clock_generator(grid)
    blocks = sample_many(H.with_horizon(T), grid.times)
    # [H_a x I, H_sys]|t0,psi> = sum_t (H_a)[t,t0] |t> x (H(t0 d) - H(t d)) psi
    diffs = (blocks[t0] - blocks) @ psi
    return float(np.linalg.norm(ha[:, t0, None] * diffs))


def required_M(T: float, epsilon: float, hdot_max: float, constant: float = 1.0) -> int:
    """Clock dimension c*T^4*hdot/eps^2, floored at the Riemann-sum choice and MIN_CLOCK_DIM."""
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    main = robust_ceil(constant * T**4 * hdot_max / epsilon**2)
    riemann = robust_ceil(constant * T**2 * hdot_max / epsilon)
    return max(MIN_CLOCK_DIM, main, riemann)
