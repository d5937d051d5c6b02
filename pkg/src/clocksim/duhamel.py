"""Duhamel expansion of exp(-i(D+B)t) and its nested-quadrature approximation.

Everything is evaluated in the eigenbasis of D, where the interaction-picture
operator J(s) = exp(iDs) B exp(-iDs) is an entrywise phase of B. The nested
sums over q^k index tuples are walked depth-first so that operator prefixes
are shared between tuples with a common outer part.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .hamiltonian import TimeDependentHamiltonian, sample_many
from .linalg import DomainError, HermitianExp, dagger, expm_hermitian, robust_ceil, spectral_norm
from .quadrature import QuadratureRule, ScaledRule, gauss_legendre

MAX_ORDER_K = 8
MAX_TUPLES = 2**24
ORACLE_POINTS = 64


@dataclass(frozen=True)
class SeriesConfig:
    K: int
    q: int
    t: float
    alpha: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.K <= MAX_ORDER_K:
            raise DomainError(f"truncation order K must be in [0, {MAX_ORDER_K}]")
        if self.q < 1:
            raise DomainError("quadrature order q must be >= 1")
        if not self.t > 0:
            raise DomainError("segment time t must be positive")
        if self.alpha is not None and self.t * self.alpha > 2 + 1e-12:
            raise DomainError("segment regime requires t*alpha <= 2")

    @property
    def tuple_count(self) -> int:
        return sum(self.q**k for k in range(1, self.K + 1))


class InteractionPicture:
    """J(s) = exp(iDs) B exp(-iDs), represented in the eigenbasis of D."""

    def __init__(self, D: np.ndarray, B: np.ndarray):
        D = np.asarray(D)
        B = np.asarray(B, dtype=complex)
        if D.ndim == 2 and D.shape != B.shape:
            raise DomainError("D and B must have the same dimension")
        self._exp = HermitianExp(D)
        self.vectors = self._exp.vectors
        self.d = self._exp.values
        self.b = B if self.vectors is None else dagger(self.vectors) @ B @ self.vectors
        self.freq = self.d[:, None] - self.d[None, :]
        self.dim = B.shape[0]

    def J(self, s):
        """J at a scalar time, or stacked along axis 0 for an array of times."""
        s = np.asarray(s, dtype=float)
        return self.b * np.exp(1j * self.freq * s[..., None, None])

    def apply_J(self, s: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Rows of ``vs`` mapped by J at the matching entry of ``s``."""
        ph = np.exp(-1j * np.outer(s, self.d))
        return np.conj(ph) * ((ph * vs) @ self.b.T)

    def to_original(self, a: np.ndarray) -> np.ndarray:
        if self.vectors is None:
            return a
        return self.vectors @ a @ dagger(self.vectors)

    def to_eigen(self, a: np.ndarray) -> np.ndarray:
        if self.vectors is None:
            return a
        return dagger(self.vectors) @ a @ self.vectors

    def exp_D(self, t: float) -> np.ndarray:
        """exp(-iDt) in the eigenbasis (a diagonal vector)."""
        return np.exp(-1j * self.d * t)


def _check_hermitian_pair(D, B):
    B = np.asarray(B)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise DomainError("B must be square")


def duhamel_residual(D: np.ndarray, B: np.ndarray, t: float, q_oracle: int = ORACLE_POINTS) -> float:
    """|| e^{-i(D+B)t} - e^{-iDt} + i int_0^t e^{-iD(t-s)} B e^{-i(D+B)s} ds ||."""
    _check_hermitian_pair(D, B)
    D = np.asarray(D, dtype=complex)
    if D.ndim == 1:
        D = np.diag(D)
    ed, edb = HermitianExp(D), HermitianExp(D + B)
    x, w = np.polynomial.legendre.leggauss(q_oracle)
    s, ws = t * (x + 1) / 2, t * w / 2
    integral = sum(wj * ed.exp(t - sj) @ B @ edb.exp(sj) for sj, wj in zip(s, ws))
    return spectral_norm(edb.exp(t) - ed.exp(t) + 1j * integral)


def f_k(D: np.ndarray, B: np.ndarray, nodes) -> np.ndarray:
    """F_k(s_k, ..., s_1) = J(s_k) ... J(s_1) for ascending nodes s_1 <= ... <= s_k."""
    nodes = np.asarray(nodes, dtype=float)
    if np.any(np.diff(nodes) < 0):
        raise DomainError("nodes must be sorted ascending (s_1 <= ... <= s_k)")
    ip = InteractionPicture(D, B)
    out = np.eye(ip.dim, dtype=complex)
    for s in nodes[::-1]:
        out = out @ ip.J(s)
    return ip.to_original(out)


# ---------------------------------------------------------------------------
# nested sums


def _subtree_sums(
    op_at: Callable[[np.ndarray], np.ndarray],
    xr: np.ndarray,
    wr: np.ndarray,
    K: int,
    node: float,
    weight: float,
    prefix: np.ndarray,
) -> list[np.ndarray]:
    """Per-level sums for the subtree below one outermost node (level 1)."""
    sums = [np.zeros_like(prefix) for _ in range(K)]
    sums[0] += weight * prefix

    def walk(level: int, upper: float, w_up: float, pre: np.ndarray) -> None:
        s = upper * xr
        ws = w_up * upper * wr
        prods = pre @ op_at(s)
        sums[level] += np.tensordot(ws, prods, axes=1)
        if level + 1 < K:
            for j in range(len(s)):
                walk(level + 1, s[j], ws[j], prods[j])

    if K > 1:
        walk(1, node, weight, prefix)
    return sums


def nested_sums(
    op_at: Callable[[np.ndarray], np.ndarray],
    dim: int,
    t: float,
    K: int,
    rule: QuadratureRule,
    workers: int = 1,
) -> list[np.ndarray]:
    """[S_1, ..., S_K] with S_k = sum over q^k tuples of weights * op(s_k) ... op(s_1).

    ``op_at`` maps an array of times to a stack of matrices. The index space
    is always partitioned by the outermost index and reduced in index order,
    so the result is bit-identical for any number of workers.
    """
    if K == 0:
        return []
    sr = ScaledRule(rule, t)
    xr, wr = sr.x / t, sr.w / t
    top_nodes, top_weights = sr.x, sr.w
    top_ops = op_at(top_nodes)

    def task(j: int) -> list[np.ndarray]:
        return _subtree_sums(op_at, xr, wr, K, top_nodes[j], top_weights[j], top_ops[j])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(task, range(rule.q)))
    else:
        parts = [task(j) for j in range(rule.q)]
    sums = [np.zeros((dim, dim), dtype=complex) for _ in range(K)]
    for part in parts:
        for k in range(K):
            sums[k] += part[k]
    return sums


@dataclass
class SeriesResult:
    W: np.ndarray
    term_norms: list[float]
    terms: list[np.ndarray] = field(repr=False)
    mode: str = "exact"


def _check_tuple_budget(cfg: SeriesConfig) -> None:
    if cfg.q**cfg.K > MAX_TUPLES:
        raise DomainError(
            f"q^K = {cfg.q}^{cfg.K} exceeds the enumeration budget 2^24; lower q or K"
        )


def truncated_series(
    D: np.ndarray,
    B: np.ndarray,
    cfg: SeriesConfig,
    mode: str = "exact",
    samples: int = 2000,
    rng: Optional[np.random.Generator] = None,
    workers: int = 1,
) -> SeriesResult:
    """W = e^{-iDt} (I + sum_k (-i)^k sum_tuples F_k(nodes) * weights).

    ``terms[k]`` holds the k-th contribution including its (-i)^k phase.
    ``mode='sampled'`` replaces the tuple sums by an importance-sampled
    estimate and is meant for exploration only.
    """
    ip = InteractionPicture(D, B)
    rule = gauss_legendre(cfg.q)
    if mode == "exact":
        _check_tuple_budget(cfg)
        sums = nested_sums(ip.J, ip.dim, cfg.t, cfg.K, rule, workers=workers)
    elif mode == "sampled":
        sums = _sampled_sums(ip, cfg, rule, samples, rng or np.random.default_rng(0))
    else:
        raise DomainError(f"unknown mode {mode!r}")
    terms = [np.eye(ip.dim, dtype=complex)]
    terms += [(-1j) ** k * s for k, s in enumerate(sums, start=1)]
    series = np.sum(terms, axis=0)
    W = ip.to_original(ip.exp_D(cfg.t)[:, None] * series)
    norms = [spectral_norm(term) for term in terms]
    return SeriesResult(W=W, term_norms=norms, terms=[ip.to_original(x) for x in terms], mode=mode)


def _sampled_sums(ip: InteractionPicture, cfg: SeriesConfig, rule, samples, rng) -> list[np.ndarray]:
    # At every level the normalized weights are wh_j / t regardless of the
    # upper limit, so indices are iid and the importance weight is the
    # product of the upper limits.
    sr = ScaledRule(rule, cfg.t)
    p = sr.w / cfg.t
    sums = []
    for k in range(1, cfg.K + 1):
        acc = np.zeros((ip.dim, ip.dim), dtype=complex)
        for _ in range(samples):
            idx = rng.choice(rule.q, size=k, p=p)
            upper, factor = cfg.t, 1.0
            prod = np.eye(ip.dim, dtype=complex)
            for j in idx:
                s = upper * sr.x[j] / cfg.t
                factor *= upper
                prod = prod @ ip.J(s)
                upper = s
            acc += factor * prod
        sums.append(acc / samples)
    return sums


def apply_truncated_series(
    D: np.ndarray, B: np.ndarray, cfg: SeriesConfig, v: np.ndarray
) -> np.ndarray:
    """W @ v for the same nested-quadrature series, without forming W.

    Uses the nested (Horner) form G_m(u) v = v - i sum_j w_j(u) J(s_j) G_{m-1}(s_j) v,
    which costs one matrix-vector batch per tree node instead of a matrix product.
    """
    ip = InteractionPicture(D, B)
    v = np.asarray(v, dtype=complex)
    ve = v if ip.vectors is None else dagger(ip.vectors) @ v
    sr = ScaledRule(gauss_legendre(cfg.q), cfg.t)
    xr, wr = sr.x / cfg.t, sr.w / cfg.t

    def G(m: int, upper: float) -> np.ndarray:
        s = upper * xr
        ws = upper * wr
        if m == 1:
            inner = np.broadcast_to(ve, (len(s),) + ve.shape)
        else:
            inner = np.stack([G(m - 1, sj) for sj in s])
        return ve - 1j * (ws @ ip.apply_J(s, inner))

    out = G(cfg.K, cfg.t) if cfg.K > 0 else ve
    out = ip.exp_D(cfg.t) * out
    return out if ip.vectors is None else ip.vectors @ out


# ---------------------------------------------------------------------------
# error bounds


def truncation_bound(t: float, b_norm: float, K: int) -> float:
    """(t ||B||)^{K+1} / (K+1)!."""
    return (t * b_norm) ** (K + 1) / math.factorial(K + 1)


def fk_quadrature_bound(t: float, d_norm: float, b_norm: float, k: int, q: int) -> float:
    """(2t)^{k-1}/(k-1)! * ||D||^{2q} ||B||^k t^{2q} q / (2q)!, in log space."""
    if d_norm == 0 or b_norm == 0:
        return 0.0
    log_val = (
        (k - 1) * math.log(2 * t)
        - math.lgamma(k)
        + 2 * q * math.log(d_norm * t)
        + k * math.log(b_norm)
        + math.log(q)
        - math.lgamma(2 * q + 1)
    )
    return math.exp(log_val) if log_val < 700 else math.inf


def quadrature_bound(t: float, d_norm: float, b_norm: float, K: int, q: int, constant: float = 10.0) -> float:
    return constant * sum(fk_quadrature_bound(t, d_norm, b_norm, k, q) for k in range(1, K + 1))


@dataclass(frozen=True)
class SeriesError:
    measured: float
    truncation_bound: float
    quadrature_bound: float
    term_norms: tuple

    @property
    def passed(self) -> bool:
        return self.measured <= self.truncation_bound + self.quadrature_bound


def series_error(
    D: np.ndarray, B: np.ndarray, cfg: SeriesConfig, constant: float = 10.0, workers: int = 1
) -> SeriesError:
    result = truncated_series(D, B, cfg, workers=workers)
    D = np.asarray(D)
    Dm = np.diag(D) if D.ndim == 1 else D
    exact = expm_hermitian(Dm + B, cfg.t)
    d_norm = spectral_norm(Dm)
    b_norm = spectral_norm(B)
    return SeriesError(
        measured=spectral_norm(result.W - exact),
        truncation_bound=truncation_bound(cfg.t, b_norm, cfg.K),
        quadrature_bound=quadrature_bound(cfg.t, d_norm, b_norm, cfg.K, cfg.q, constant),
        term_norms=tuple(result.term_norms),
    )


# ---------------------------------------------------------------------------
# brute-force simplex oracle


def _composite_unit_rule(points: int) -> tuple[np.ndarray, np.ndarray]:
    panels = max(1, points // 8)
    x, w = np.polynomial.legendre.leggauss(8)
    left = np.arange(panels)[:, None] / panels
    nodes = (left + (x[None, :] + 1) / (2 * panels)).ravel()
    weights = np.tile(w / (2 * panels), panels)
    return nodes, weights


def nested_integral_oracle(
    D: np.ndarray, B: np.ndarray, t: float, k: int, points: int = ORACLE_POINTS, chunk: int = 256
) -> np.ndarray:
    """Simplex integral of F_k by recursive composite Gauss quadrature.

    Each level uses panels of 8-point rules (``points`` nodes in total) on
    the current sub-interval; independent of the nested Gauss machinery.
    """
    if not 0 <= k <= 3:
        raise DomainError("oracle supports k <= 3")
    B = np.asarray(B)
    if B.shape[0] > 8:
        raise DomainError("oracle supports dimension <= 8")
    ip = InteractionPicture(D, B)
    u, wu = _composite_unit_rule(points)
    n = ip.dim

    def G(m: int, uppers: np.ndarray) -> np.ndarray:
        if m == 0:
            return np.broadcast_to(np.eye(n, dtype=complex), (len(uppers), n, n))
        out = np.empty((len(uppers), n, n), dtype=complex)
        for start in range(0, len(uppers), chunk):
            ups = uppers[start:start + chunk]
            s = ups[:, None] * u[None, :]
            ws = ups[:, None] * wu[None, :]
            js = ip.J(s)
            if m == 1:
                out[start:start + chunk] = np.einsum("tp,tpij->tij", ws, js)
            else:
                inner = G(m - 1, s.ravel()).reshape(s.shape + (n, n))
                out[start:start + chunk] = np.einsum("tp,tpij,tpjk->tik", ws, js, inner)
        return out

    return ip.to_original(G(k, np.array([float(t)]))[0])


@dataclass(frozen=True)
class FkBoundCheck:
    lhs_error: float
    bound: float
    degenerate: bool

    @property
    def passed(self) -> bool:
        if self.degenerate:
            return self.lhs_error <= 1e-10
        return self.lhs_error <= self.bound


def fkbound_check(
    D: np.ndarray, B: np.ndarray, t: float, k: int, q: int, constant: float = 10.0
) -> FkBoundCheck:
    if not 1 <= k <= 3:
        raise DomainError("fkbound_check supports 1 <= k <= 3")
    ip = InteractionPicture(D, B)
    quad = ip.to_original(nested_sums(ip.J, ip.dim, t, k, gauss_legendre(q))[k - 1])
    oracle = nested_integral_oracle(D, B, t, k)
    D = np.asarray(D)
    d_norm = spectral_norm(np.diag(D) if D.ndim == 1 else D)
    bound = constant * fk_quadrature_bound(t, d_norm, spectral_norm(np.asarray(B)), k, q)
    return FkBoundCheck(spectral_norm(oracle - quad), bound, degenerate=bound <= 1e-16)


# ---------------------------------------------------------------------------
# Dyson baseline


def dyson_baseline(H: TimeDependentHamiltonian, t0: float, t1: float, K: int, q: int) -> np.ndarray:
    """Truncated Dyson series of the time-ordered exponential on [t0, t1]."""
    if t1 < t0:
        raise DomainError("need t0 <= t1")
    cfg = SeriesConfig(K=K, q=q, t=max(t1 - t0, 1e-300))
    _check_tuple_budget(cfg)
    if t1 == t0:
        return np.eye(H.dim, dtype=complex)

    def op_at(s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return sample_many(H, np.clip(t0 + s, t0, t1))

    sums = nested_sums(op_at, H.dim, t1 - t0, K, gauss_legendre(q))
    out = np.eye(H.dim, dtype=complex)
    for k, s in enumerate(sums, start=1):
        out = out + (-1j) ** k * s
    return out


# ---------------------------------------------------------------------------
# parameter choices


def _loglog_floor(x: float) -> float:
    return max(1.0, math.log(x)) if x > 1 else 1.0


@dataclass(frozen=True)
class OrderChoice:
    K: int
    q: int
    segment_count: int
    q_total: int
    q_per_segment: int
    q_formula: str


def choose_K_q(
    T: float,
    alpha: float,
    hdot_max: float,
    epsilon: float,
    c_K: float = 1.0,
    c_q: float = 1.0,
    c_s: float = 1.0,
    q_formula: str = "total",
) -> OrderChoice:
    """Truncation order, quadrature order and segment count from the asymptotic choices.

    ``q_formula='total'`` uses c T^4 hdot log^3(1/eps)/eps^2; ``'per-segment'``
    uses c T^6 alpha^2 hdot / eps^2. Both values are always reported.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if q_formula not in ("total", "per-segment"):
        raise DomainError(f"unknown q formula {q_formula!r}")
    L = math.log(T * alpha / epsilon) if T * alpha > epsilon else 0.0
    K = max(1, robust_ceil(c_K * L / _loglog_floor(L)))
    log_inv = max(0.0, math.log(1 / epsilon))
    q_total = max(2, robust_ceil(c_q * T**4 * hdot_max * log_inv**3 / epsilon**2))
    q_seg = max(2, robust_ceil(c_q * T**6 * alpha**2 * hdot_max / epsilon**2))
    segments = max(1, robust_ceil(c_s * T * alpha))
    q = q_total if q_formula == "total" else q_seg
    return OrderChoice(K, q, segments, q_total, q_seg, q_formula)
