"""Gauss-Legendre rules, their rescaled and nested forms, and lemma checks.

Nodes come from Newton's method on the three-term recurrence. Nested rules
approximate integrals over the simplex 0 <= s_1 <= ... <= s_k <= t by
shrinking a base rule on [0, t] onto [0, s] at each level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.integrate

from .linalg import DomainError, NumericError

NEWTON_TOL = 1e-15
NEWTON_MAX_ITER = 100
MAX_ORDER = 4096


def legendre_eval(q: int, x):
    """(P_q(x), P_q'(x)) by the three-term recurrence; vectorized over x."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1):
        raise DomainError("legendre_eval needs |x| <= 1")
    p_prev, p = np.ones_like(x), x.copy()
    if q == 0:
        return np.ones_like(x), np.zeros_like(x)
    for n in range(2, q + 1):
        p_prev, p = p, ((2 * n - 1) * x * p - (n - 1) * p_prev) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = q * (x * p - p_prev) / (x * x - 1)
    edge = np.abs(x) == 1
    if np.any(edge):
        dp = np.where(edge, np.sign(x) ** (q - 1) * q * (q + 1) / 2, dp)
    return p, dp


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    q: int
    x: np.ndarray
    w: np.ndarray

    def integrate(self, f: Callable) -> complex:
        return np.sum(f(self.x) * self.w)


@dataclass(frozen=True, eq=False)
class ScaledRule:
    """A base rule mapped affinely onto [0, t]: x -> t(x+1)/2, w -> t*w/2."""

    base: QuadratureRule
    t: float

    @property
    def q(self) -> int:
        return self.base.q

    @property
    def x(self) -> np.ndarray:
        return self.t * (self.base.x + 1) / 2

    @property
    def w(self) -> np.ndarray:
        return self.t * self.base.w / 2

    def integrate(self, f: Callable) -> complex:
        return np.sum(f(self.x) * self.w)


@lru_cache(maxsize=64)
def gauss_legendre(q: int) -> QuadratureRule:
    """Order-q Gauss-Legendre rule on [-1, 1], nodes ascending."""
    if not 1 <= q <= MAX_ORDER:
        raise DomainError(f"order q must be in [1, {MAX_ORDER}]")
    j = np.arange(1, q + 1)
    x = np.cos(np.pi * (j - 0.25) / (q + 0.5))
    for _ in range(NEWTON_MAX_ITER):
        p, dp = legendre_eval(q, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= NEWTON_TOL:
            break
    else:
        raise NumericError(f"Newton iteration for q={q} did not converge")
    x = x[::-1]
    x = (x - x[::-1]) / 2  # exact mirror symmetry
    _, dp = legendre_eval(q, x)
    w = 2 / ((1 - x * x) * dp * dp)
    w = (w + w[::-1]) / 2
    x.flags.writeable = False
    w.flags.writeable = False
    return QuadratureRule(q, x, w)


def scaled_rule(q: int, t: float) -> ScaledRule:
    if not t > 0:
        raise DomainError("interval length t must be positive")
    return ScaledRule(gauss_legendre(q), float(t))


def _middle_half(q: int) -> range:
    return range(q // 4, (3 * q) // 4)


def spacing_residual(rule: QuadratureRule) -> float:
    """q^2 * max | |x_{j+1}-x_j| - (pi/q) sqrt(1-x_j^2) | over the middle half."""
    q, x = rule.q, rule.x
    if q < 4:
        raise DomainError("spacing residual needs q >= 4")
    js = [j for j in _middle_half(q) if j + 1 < q]
    gaps = np.abs(x[np.array(js) + 1] - x[js])
    approx = np.pi / q * np.sqrt(1 - x[js] ** 2)
    return float(np.max(np.abs(gaps - approx)) * q**2)


def weight_residual(rule: QuadratureRule) -> float:
    """q^2 * max | w_j - (pi/q) sqrt(1-x_j^2) | over the middle half."""
    q, x, w = rule.q, rule.x, rule.w
    if q < 4:
        raise DomainError("weight residual needs q >= 4")
    js = np.array(list(_middle_half(q)))
    return float(np.max(np.abs(w[js] - np.pi / q * np.sqrt(1 - x[js] ** 2))) * q**2)


def oracle_integral(f: Callable, a: float, b: float, tol: float = 1e-13) -> complex:
    """Adaptive reference integral of a scalar (possibly complex) function."""
    re = scipy.integrate.quad(lambda s: np.real(f(s)), a, b, epsabs=tol, epsrel=tol, limit=500)[0]
    im = scipy.integrate.quad(lambda s: np.imag(f(s)), a, b, epsabs=tol, epsrel=tol, limit=500)[0]
    return re + 1j * im if im else re


@dataclass(frozen=True)
class PartialSum:
    sum: float
    integral: float
    residual: float
    integral_next: Optional[float]
    residual_next: Optional[float]
    bound: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.bound


def partial_sum(
    rule,
    a: int,
    b: int,
    f: Callable,
    lipschitz: float,
    sup_f: Optional[float] = None,
    constant: float = 10.0,
) -> PartialSum:
    """Compare sum_{j=a}^{b} f(x_j) w_j with the integral of f from x_a to x_b.

    Indices are 1-based and inclusive. The bound carries a sup|f|/q slack
    for the half cells at either end; the residual against the integral up
    to x_{b+1} is reported alongside.
    """
    q = rule.q
    if not 1 <= a <= b <= q:
        raise DomainError(f"need 1 <= a <= b <= q, got a={a}, b={b}, q={q}")
    x, w = np.asarray(rule.x), np.asarray(rule.w)
    total = float(np.sum(f(x[a - 1:b]) * w[a - 1:b]))
    integral = float(oracle_integral(f, x[a - 1], x[b - 1]))
    integral_next = residual_next = None
    if b < q:
        integral_next = float(oracle_integral(f, x[a - 1], x[b]))
        residual_next = abs(total - integral_next)
    if sup_f is None:
        grid = np.linspace(x[0], x[-1], 1025)
        sup_f = float(np.max(np.abs(f(grid))))
    bound = constant * (lipschitz * (b - a) / q**2 + sup_f / q)
    return PartialSum(total, integral, abs(total - integral), integral_next, residual_next, bound)


def nested_nodes_weights(
    rule: QuadratureRule, t: float, idx: Sequence[int], max_depth: int = 64
) -> tuple[np.ndarray, float]:
    """Nodes and weight product for one nested index tuple.

    ``idx`` is (j_k, ..., j_1) with 0-based entries. The outermost node is
    the scaled node of j_k on [0, t]; each further level rescales the base
    rule onto [0, previous node]. Nodes are returned outermost first, i.e.
    in descending order s_k >= ... >= s_1.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    if not 1 <= len(idx) <= max_depth:
        raise DomainError(f"nesting depth must be in [1, {max_depth}]")
    sr = ScaledRule(rule, t)
    xh, wh = sr.x, sr.w
    nodes = np.empty(len(idx))
    upper, weight = t, 1.0
    for level, j in enumerate(idx):
        nodes[level] = upper * xh[j] / t
        weight *= upper * wh[j] / t
        upper = nodes[level]
    return nodes, weight


def nested_weight_closed_form(rule: QuadratureRule, t: float, idx: Sequence[int]) -> float:
    """t^{-k(k-1)/2} * xh_{j_k}^{k-1} xh_{j_{k-1}}^{k-2} ... xh_{j_2} * prod wh_j."""
    sr = ScaledRule(rule, t)
    k = len(idx)
    value = t ** (-k * (k - 1) / 2)
    for level, j in enumerate(idx):
        value *= sr.x[j] ** (k - 1 - level) * sr.w[j]
    return float(value)


def nested_grid(rule: QuadratureRule, t: float, k: int) -> tuple[np.ndarray, np.ndarray]:
    """All q^k nested tuples at once.

    Returns ``nodes`` of shape (q,)*k + (k,) indexed [j_k, ..., j_1, level]
    (level 0 outermost) and ``weights`` of shape (q,)*k.
    """
    if k < 1:
        raise DomainError("k must be >= 1")
    sr = ScaledRule(rule, t)
    ratio_x, ratio_w = sr.x / t, sr.w / t
    nodes = [sr.x.copy()]
    weights = sr.w.copy()
    upper = sr.x.copy()
    for _ in range(1, k):
        upper = upper[..., None] * ratio_x
        weights = weights[..., None] * (nodes[-1][..., None] * ratio_w)
        nodes = [n[..., None] * np.ones(rule.q) for n in nodes] + [upper]
    return np.stack(nodes, axis=-1), weights


def error_bound_1d(q: int, t: float, d2q_bound: float) -> float:
    """sup|f^(2q)| t^(2q+1) q / ((2q)! 2^(4q-1)), evaluated in log space."""
    if d2q_bound == 0:
        return 0.0
    log_val = (
        math.log(d2q_bound)
        + (2 * q + 1) * math.log(t)
        + math.log(q)
        - math.lgamma(2 * q + 1)
        - (4 * q - 1) * math.log(2)
    )
    return math.exp(log_val) if log_val < 700 else math.inf


def quadrature_error_1d(rule: QuadratureRule, t: float, f: Callable, d2q_bound: float):
    """(approx, exact, bound) for the integral of f over [0, t]."""
    sr = ScaledRule(rule, t)
    approx = sr.integrate(f)
    exact = oracle_integral(f, 0.0, t)
    return approx, exact, error_bound_1d(rule.q, t, d2q_bound)
