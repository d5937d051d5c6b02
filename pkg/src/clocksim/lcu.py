"""Matrix-level emulation of the LCU layer built on the Duhamel series.

Block-encodings are dense unitaries whose top-left block holds target/alpha.
Products of encodings stack their ancillas; for large instances only the
top-left block is tracked, which is exactly what the stacked dilation would
produce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clock import ClockGrid, build_B, build_qft
from .duhamel import InteractionPicture, SeriesConfig, _check_tuple_budget
from .hamiltonian import TimeDependentHamiltonian, sample_many
from .linalg import (
    DomainError,
    NumericError,
    dagger,
    max_norm,
    robust_ceil,
    spectral_norm,
    unitarity_defect,
)
from .quadrature import QuadratureRule, ScaledRule, gauss_legendre, nested_grid

CONTRACTION_SLACK = 1e-12
EXPLICIT_DILATION_LIMIT = 512
NODE_PRECISION = 1e-12


@dataclass(frozen=True, eq=False)
class BlockEncoding:
    """``dilation`` (when present) is a unitary whose leading block is target/alpha."""

    target: np.ndarray
    alpha: float
    be_error: float = 0.0
    dilation: Optional[np.ndarray] = field(default=None, repr=False)
    emulated_block: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.target.shape[0]

    @property
    def ancilla_dim(self) -> int:
        return 1 if self.dilation is None else self.dilation.shape[0] // self.dim

    def block(self) -> np.ndarray:
        """Normalized top-left block of the dilation, or its block-level emulation."""
        if self.dilation is None:
            if self.emulated_block is not None:
                return self.emulated_block
            return self.target / self.alpha
        return self.dilation[: self.dim, : self.dim]

    def check(self, tol: float = 1e-10) -> None:
        if self.dilation is not None and unitarity_defect(self.dilation) > tol:
            raise NumericError("dilation is not unitary")
        if spectral_norm(self.alpha * self.block() - self.target) > self.be_error + tol:
            raise NumericError("dilation block does not reproduce the target")


def dilation(a: np.ndarray) -> np.ndarray:
    """Unitary [[A, sqrt(I-AA^+)], [sqrt(I-A^+A), -A^+]] for a contraction A."""
    u, s, vh = np.linalg.svd(a)
    if s.size and s[0] > 1 + CONTRACTION_SLACK:
        raise DomainError(f"matrix is not a contraction (norm {s[0]:.6g})")
    c = np.sqrt(np.clip(1 - s * s, 0.0, None))
    v = dagger(vh)
    top = (u * c) @ dagger(u)
    bottom = (v * c) @ vh
    return np.block([[a, top], [bottom, -dagger(a)]])


def _lift(op: np.ndarray, ancilla_dim: int) -> np.ndarray:
    """I_ancilla x op for an operator on the system register."""
    return np.kron(np.eye(ancilla_dim), op)


def build_ham_t_encoding(H: TimeDependentHamiltonian, M: int, t: float, d: Optional[int] = None) -> BlockEncoding:
    """Encoding of Diag[H(0), H(t/M), ..., H((M-1)t/M)] with alpha = d * H_max."""
    grid = ClockGrid(M, t)
    blocks = sample_many(H.with_horizon(max(H.T, t)), grid.times)
    d = H.sparsity if d is None else d
    h_max = max(max_norm(b) for b in blocks)
    alpha = d * h_max
    worst = max(spectral_norm(b) for b in blocks)
    if worst > alpha * (1 + CONTRACTION_SLACK):
        raise DomainError(f"alpha={alpha:.6g} is below a block norm {worst:.6g}")
    N = H.dim
    target = np.zeros((M * N, M * N), dtype=complex)
    for m, b in enumerate(blocks):
        target[m * N:(m + 1) * N, m * N:(m + 1) * N] = b
    dil = dilation(target / alpha) if alpha > 0 else None
    return BlockEncoding(target, alpha, 0.0, dil)


def conjugate_encoding(enc: BlockEncoding, Q: np.ndarray) -> BlockEncoding:
    """Encoding of (Q^+ x I) A (Q x I); the ancilla is untouched.

    ``Q`` acts on the clock register (dimension dividing the target's) or on
    the full system register.
    """
    Q = np.asarray(Q, dtype=complex)
    n = enc.dim
    if n % Q.shape[0]:
        raise DomainError("Q dimension does not divide the encoding dimension")
    G = np.kron(Q, np.eye(n // Q.shape[0]))
    target = dagger(G) @ enc.target @ G
    dil = None
    if enc.dilation is not None:
        lifted = _lift(G, enc.ancilla_dim)
        dil = dagger(lifted) @ enc.dilation @ lifted
    return BlockEncoding(target, enc.alpha, enc.be_error, dil)


def _diag_conjugate(enc: BlockEncoding, phases: np.ndarray) -> BlockEncoding:
    """P^+ A P for P = diag(phases)."""
    target = phases.conj()[:, None] * enc.target * phases[None, :]
    dil = None
    if enc.dilation is not None:
        lifted = np.tile(phases, enc.ancilla_dim)
        dil = lifted.conj()[:, None] * enc.dilation * lifted[None, :]
    return BlockEncoding(target, enc.alpha, enc.be_error, dil)


def v_of_t(encB: BlockEncoding, D: np.ndarray, t: float) -> BlockEncoding:
    """Encoding of e^{iDt} B e^{-iDt}; D must be diagonal (it is fast-forwarded)."""
    D = np.asarray(D)
    d = np.real(np.diag(D)) if D.ndim == 2 else np.asarray(D, dtype=float)
    if D.ndim == 2 and spectral_norm(D - np.diag(np.diag(D))) > 0:
        raise DomainError("v_of_t needs a diagonal D")
    if t == 0:
        return encB
    return _diag_conjugate(encB, np.exp(-1j * d * t))


def multiply_encodings(encs: Sequence[BlockEncoding], explicit: Optional[bool] = None) -> BlockEncoding:
    """Encoding of A_1 A_2 ... A_k with alpha = prod alpha_i.

    Each factor gets its own ancilla register. With ``explicit`` the stacked
    dilation is formed; otherwise only the top-left block is propagated.
    """
    if not encs:
        raise DomainError("need at least one encoding")
    n = encs[0].dim
    alpha = math.prod(e.alpha for e in encs)
    # ||prod A_i - prod (alpha_i U_i)|| telescopes into this sum
    err = 0.0
    for i, e in enumerate(encs):
        others = math.prod(f.alpha + f.be_error for j, f in enumerate(encs) if j != i)
        err += e.be_error * others
    total_anc = math.prod(e.ancilla_dim for e in encs)
    if explicit is None:
        explicit = all(e.dilation is not None for e in encs) and total_anc * n <= EXPLICIT_DILATION_LIMIT
    target = encs[0].target
    for e in encs[1:]:
        target = target @ e.target
    if not explicit:
        block = encs[0].block()
        for e in encs[1:]:
            block = block @ e.block()
        return BlockEncoding(target, alpha, err, None, block)
    if any(e.dilation is None for e in encs):
        raise DomainError("explicit product needs every factor's dilation")
    dil = encs[0].dilation
    anc = encs[0].ancilla_dim
    for e in encs[1:]:
        a2 = e.ancilla_dim
        # registers ordered (new ancilla, old ancillas, system)
        left = _lift(dil, a2)
        u = e.dilation.reshape(a2, n, a2, n)
        right = np.einsum("bscr,ao->bascor", u, np.eye(anc)).reshape(a2 * anc * n, a2 * anc * n)
        dil = left @ right
        anc *= a2
    return BlockEncoding(target, alpha, err, dil)


def select_product(
    encB: BlockEncoding, D: np.ndarray, nodes: Sequence[float], explicit: Optional[bool] = None
) -> BlockEncoding:
    """Encoding of F_k(s_k, ..., s_1) = V(s_k) ... V(s_1) for ascending nodes."""
    nodes = np.asarray(nodes, dtype=float)
    if np.any(np.diff(nodes) < 0):
        raise DomainError("nodes must be sorted ascending")
    if nodes.size == 0:
        n = encB.dim
        return BlockEncoding(np.eye(n, dtype=complex), 1.0, 0.0, np.eye(n, dtype=complex))
    return multiply_encodings([v_of_t(encB, D, s) for s in nodes[::-1]], explicit=explicit)


def scale_phase(enc: BlockEncoding, phase: complex) -> BlockEncoding:
    """Encoding of phase * A for |phase| = 1."""
    dil = None if enc.dilation is None else phase * enc.dilation
    emu = None if enc.emulated_block is None else phase * enc.emulated_block
    return BlockEncoding(phase * enc.target, enc.alpha, enc.be_error, dil, emu)


def _prep_unitary(amplitudes: np.ndarray) -> np.ndarray:
    """Householder reflection sending |0> to the given real unit vector."""
    v = np.asarray(amplitudes, dtype=complex)
    e0 = np.zeros_like(v)
    e0[0] = 1
    u = e0 - v
    nrm = np.vdot(u, u).real
    if nrm < 1e-30:
        return np.eye(len(v), dtype=complex)
    return np.eye(len(v)) - 2 * np.outer(u, u.conj()) / nrm


def lcu_combine(
    encodings: Sequence[BlockEncoding], coefficients: Sequence[float], explicit: bool = False
) -> BlockEncoding:
    """Encoding of sum_j y_j A_j with alpha = sum_j y_j alpha_j.

    ``be_error`` is sum_j y_j eps_j, the triangle inequality applied to the
    absolute per-term errors. With ``explicit`` the PREP^+ SELECT PREP
    unitary is formed (all terms need dilations of equal size).
    """
    if len(encodings) == 0:
        raise DomainError("lcu_combine needs at least one encoding")
    y = np.asarray(coefficients, dtype=float)
    if y.shape != (len(encodings),):
        raise DomainError("one coefficient per encoding is required")
    if np.any(y < 0):
        raise DomainError("coefficients must be nonnegative")
    alphas = np.array([e.alpha for e in encodings])
    alpha = float(np.sum(y * alphas))
    err = float(np.sum(y * np.array([e.be_error for e in encodings])))
    target = sum(yj * e.target for yj, e in zip(y, encodings))
    if not explicit:
        block = sum(yj * aj * e.block() for yj, aj, e in zip(y, alphas, encodings)) / alpha
        return BlockEncoding(target, alpha, err, None, block)
    sizes = {None if e.dilation is None else e.dilation.shape[0] for e in encodings}
    if None in sizes or len(sizes) != 1:
        raise DomainError("explicit combination needs dilations of equal size")
    size = sizes.pop()
    L = len(encodings)
    prep = np.kron(_prep_unitary(np.sqrt(y * alphas / alpha)), np.eye(size))
    select = np.zeros((L * size, L * size), dtype=complex)
    for j, e in enumerate(encodings):
        select[j * size:(j + 1) * size, j * size:(j + 1) * size] = e.dilation
    unitary = dagger(prep) @ select @ prep
    # registers ordered (index, inner ancillas, system)
    return BlockEncoding(target, alpha, err, unitary)


def postselect_probability(enc: BlockEncoding, psi: np.ndarray) -> float:
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise DomainError("psi must be normalized")
    return float(np.linalg.norm(enc.block() @ psi) ** 2)


# ---------------------------------------------------------------------------
# coefficient bookkeeping


def alpha_w(K: int, q: int, t: float, alpha: float, rule: Optional[QuadratureRule] = None) -> tuple[float, float]:
    """(brute force, closed form) of sum_{k=1}^K alpha^k sum_tuples w-products."""
    rule = rule or gauss_legendre(q)
    _check_tuple_budget(SeriesConfig(K=K, q=rule.q, t=t))
    brute = 0.0
    for k in range(1, K + 1):
        _, w = nested_grid(rule, t, k)
        brute += alpha**k * float(np.sum(w))
    closed = sum((alpha * t) ** k / math.factorial(k) for k in range(1, K + 1))
    return brute, closed


@dataclass(frozen=True)
class LState:
    joint: np.ndarray
    factorized: np.ndarray
    s: float
    orders: np.ndarray


def l_state(K: int, q: int, t: float, alpha: float, rule: Optional[QuadratureRule] = None) -> LState:
    """Amplitudes sqrt(alpha^k * weight-product / s) over all tuples, k = 1..K.

    Tuples are listed by k, then lexicographically in (j_k, ..., j_1). The
    factorized form builds each order as a scalar times a tensor product of
    per-level vectors sqrt(xh^{p} wh), p = k-1 (outermost) down to 0.
    """
    rule = rule or gauss_legendre(q)
    _check_tuple_budget(SeriesConfig(K=K, q=rule.q, t=t))
    sr = ScaledRule(rule, t)
    if np.any(sr.w < 0) or np.any(sr.x < 0):
        raise NumericError("negative node or weight in the scaled rule")
    joint, fact, orders = [], [], []
    for k in range(1, K + 1):
        _, w = nested_grid(rule, t, k)
        if np.any(w < 0):
            raise NumericError("negative weight product")
        joint.append(alpha**k * w.ravel())
        vec = np.array([math.sqrt(alpha**k / t ** (k * (k - 1) / 2))])
        for p in range(k - 1, -1, -1):
            vec = np.kron(vec, np.sqrt(sr.x**p * sr.w))
        fact.append(vec)
        orders.append(np.full(w.size, k))
    joint = np.concatenate(joint)
    s = float(np.sum(joint))
    return LState(
        joint=np.sqrt(joint / s),
        factorized=np.concatenate(fact) / math.sqrt(s),
        s=s,
        orders=np.concatenate(orders),
    )


@dataclass(frozen=True)
class LcuPlan:
    """Coefficients and nodes of the full LCU, tuple-ordered as in ``l_state``.

    With ``include_identity`` the k = 0 term (coefficient 1) is part of the
    plan, so alpha_w = 1 + sum_{k=1}^K (alpha t)^k / k!.
    """

    K: int
    q: int
    t: float
    alpha: float
    orders: np.ndarray
    nodes: list
    coefficients: np.ndarray
    include_identity: bool

    @property
    def s(self) -> float:
        return float(np.sum(self.coefficients))

    @property
    def alpha_w(self) -> float:
        base = 1.0 if self.include_identity else 0.0
        return base + sum((self.alpha * self.t) ** k / math.factorial(k) for k in range(1, self.K + 1))


def build_lcu_plan(K: int, q: int, t: float, alpha: float, include_identity: bool = True) -> LcuPlan:
    _check_tuple_budget(SeriesConfig(K=K, q=q, t=t))
    rule = gauss_legendre(q)
    orders, nodes, coeffs = [], [], []
    if include_identity:
        orders.append(0)
        nodes.append(np.zeros(0))
        coeffs.append(1.0)
    for k in range(1, K + 1):
        grid, w = nested_grid(rule, t, k)
        grid = grid.reshape(-1, k)[:, ::-1]  # ascending s_1 <= ... <= s_k
        for row, wt in zip(grid, w.ravel()):
            orders.append(k)
            nodes.append(row)
            coeffs.append(alpha**k * wt)
    coeffs = np.array(coeffs)
    if np.any(coeffs < 0):
        raise NumericError("negative LCU coefficient")
    return LcuPlan(K, q, t, alpha, np.array(orders), nodes, coeffs, include_identity)


def assemble_lcu(plan: LcuPlan, D: np.ndarray, encB: BlockEncoding) -> BlockEncoding:
    """Encoding of e^{-iDt} sum_tuples (-i)^k F_k(nodes) * weights.

    Each term is a select_product with phase (-i)^k and LCU coefficient
    y = weight product (so y * alpha^k is the plan coefficient). Its
    alpha_w-scaled block reproduces the truncated series.
    """
    if abs(encB.alpha - plan.alpha) > 1e-12 * max(1.0, plan.alpha):
        raise DomainError("encoding alpha does not match the plan")
    encs, ys = [], []
    for k, nodes, c in zip(plan.orders, plan.nodes, plan.coefficients):
        enc = select_product(encB, D, nodes, explicit=False)
        encs.append(scale_phase(enc, (-1j) ** int(k)))
        ys.append(c / plan.alpha ** int(k))
    combined = lcu_combine(encs, ys)
    D = np.asarray(D)
    d = np.real(np.diag(D)) if D.ndim == 2 else np.asarray(D, dtype=float)
    phase = np.exp(-1j * d * plan.t)[:, None]
    return BlockEncoding(
        phase * combined.target, combined.alpha, combined.be_error, None, phase * combined.block()
    )


# ---------------------------------------------------------------------------
# amplitude preparation


@dataclass(frozen=True)
class AmplitudeSchedule:
    ell: int
    q: int
    fractions: list
    angles: list
    prepared: np.ndarray
    exact: np.ndarray
    error: float


def _cell_edges(x: np.ndarray, t: float) -> np.ndarray:
    """Cell j spans [m_{j-1}, m_j] with m the node midpoints and ends 0, t."""
    mids = (x[1:] + x[:-1]) / 2
    return np.concatenate([[0.0], mids, [t]])


def amplitude_schedule(
    ell: int,
    q: int,
    rule: Optional[QuadratureRule] = None,
    use_approx_sums: bool = False,
    t: float = 1.0,
) -> AmplitudeSchedule:
    """Binary-split preparation of the vector proportional to sqrt(xh^ell * wh).

    Split fractions are ratios of partial sums over index halves. With
    ``use_approx_sums`` every level but the last replaces partial sums by
    integrals of x^ell over the union of node cells; the last level uses
    the exact pair values so each rotation stays unitary. Non-power-of-two
    orders are padded with zero-amplitude slots.
    """
    if ell < 0:
        raise DomainError("ell must be >= 0")
    rule = rule or gauss_legendre(q)
    if rule.q != q:
        raise DomainError("rule order does not match q")
    sr = ScaledRule(rule, t)
    mass = sr.x**ell * sr.w
    if not np.sum(mass) > 0:
        raise DomainError("zero total mass")
    exact = np.sqrt(mass / np.sum(mass))
    size = 1 << max(0, (q - 1).bit_length())
    padded = np.zeros(size)
    padded[:q] = mass
    edges = _cell_edges(sr.x, t)

    def exact_sum(lo: int, hi: int) -> float:
        return float(np.sum(padded[lo:hi]))

    def approx_sum(lo: int, hi: int) -> float:
        lo, hi = min(lo, q), min(hi, q)
        if lo >= hi:
            return 0.0
        a, b = edges[lo], edges[hi]
        return (b ** (ell + 1) - a ** (ell + 1)) / (ell + 1)

    fractions, angles = [], []
    probs = np.ones(1)
    width = size
    while width > 1:
        half = width // 2
        last = half == 1
        summer = approx_sum if use_approx_sums and not last else exact_sum
        level = np.empty(size // width)
        for i in range(size // width):
            lo = i * width
            left, right = summer(lo, lo + half), summer(lo + half, lo + width)
            level[i] = left / (left + right) if left + right > 0 else 1.0
        level = np.clip(level, 0.0, 1.0)
        fractions.append(level)
        angles.append(2 * np.arccos(np.sqrt(level)))
        probs = np.stack([probs * level, probs * (1 - level)], axis=1).ravel()
        width = half
    prepared = np.sqrt(probs)
    if abs(np.linalg.norm(prepared) - 1) > 1e-12:
        raise NumericError("prepared vector lost normalization")
    error = float(np.linalg.norm(prepared[:q] - exact))
    return AmplitudeSchedule(ell, q, fractions, angles, prepared[:q], exact, error)


# ---------------------------------------------------------------------------
# segments


@dataclass(frozen=True)
class SegmentPlan:
    segment_count: int
    per_segment_epsilon: float
    t_seg: float
    durations: tuple


def segment_plan(T: float, alpha: float, epsilon: float, t_alpha: float = 0.5) -> SegmentPlan:
    """t_seg = t_alpha/alpha, count = ceil(T/t_seg), uniform error split.

    ``durations`` spreads T evenly over the segments, each at most t_seg.
    """
    if not (T > 0 and alpha > 0 and epsilon > 0 and t_alpha > 0):
        raise DomainError("segment_plan needs positive inputs")
    t_seg = t_alpha / alpha
    ratio = T / t_seg
    count = max(1, robust_ceil(ratio))
    return SegmentPlan(count, epsilon / count, t_seg, tuple([T / count] * count))


def node_register_width(epsilon_node: float = NODE_PRECISION) -> int:
    """Fixed-point width for one node register (bookkeeping only)."""
    return math.ceil(math.log2(1 / epsilon_node))


def ham_t_fourier_encoding(H: TimeDependentHamiltonian, M: int, T: float, d: Optional[int] = None) -> BlockEncoding:
    """U_B: the HAM_T encoding conjugated into the clock Fourier basis."""
    return conjugate_encoding(build_ham_t_encoding(H, M, T, d), build_qft(M))


def check_b_consistency(H: TimeDependentHamiltonian, M: int, T: float) -> float:
    """Distance between the conjugated HAM_T target and the circulant B."""
    enc = ham_t_fourier_encoding(H, M, T)
    return spectral_norm(enc.target - build_B(H.with_horizon(T), ClockGrid(M, T)))
