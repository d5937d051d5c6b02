import math

import numpy as np
import pytest
from conftest import random_hermitian, random_state

from clocksim.clock import ClockGrid, build_composite, build_qft, lemma_bound
from clocksim.duhamel import (
    InteractionPicture,
    SeriesConfig,
    apply_truncated_series,
    choose_K_q,
    duhamel_residual,
    dyson_baseline,
    f_k,
    fkbound_check,
    nested_integral_oracle,
    nested_sums,
    series_error,
    truncated_series,
    truncation_bound,
)
from clocksim.hamiltonian import PAULI_X, PAULI_Z, constant_z, driven_qubit, exact_propagator
from clocksim.linalg import DomainError, expm_hermitian, spectral_norm
from clocksim.quadrature import gauss_legendre


def taylor(A, t, K):
    out = np.zeros_like(A, dtype=complex)
    term = np.eye(A.shape[0], dtype=complex)
    for k in range(K + 1):
        out = out + term
        term = term @ (-1j * A * t) / (k + 1)
    return out


def direct_f2(D, B, s1, s2):
    e = lambda s: expm_hermitian(D, s)
    return e(-s2) @ B @ e(s2 - s1) @ B @ e(s1)


# duhamel residual


def test_residual_trivial_cases(rng):
    D = random_hermitian(4, 3.0, rng)
    assert duhamel_residual(D, np.zeros((4, 4)), 1.0) <= 1e-12
    B = random_hermitian(4, 1.0, rng)
    assert duhamel_residual(np.zeros((4, 4)), B, 1.0) <= 1e-10


def test_residual_large_d(rng):
    D = random_hermitian(4, 20.0, rng)
    B = random_hermitian(4, 1.0, rng)
    r64 = duhamel_residual(D, B, 1.0)
    r128 = duhamel_residual(D, B, 1.0, q_oracle=128)
    assert r64 <= 1e-8
    assert r128 <= 1e-8


# F_k


def test_fk_small_cases(rng):
    D = random_hermitian(3, 2.0, rng)
    B = random_hermitian(3, 1.0, rng)
    assert np.allclose(f_k(D, B, []), np.eye(3))
    assert spectral_norm(f_k(D, B, [0.0]) - B) <= 1e-13
    with pytest.raises(DomainError):
        f_k(D, B, [0.5, 0.2])


def test_fk_telescoped_matches_direct(rng):
    for _ in range(5):
        D = random_hermitian(2, 5.0, rng)
        B = random_hermitian(2, 1.3, rng)
        s1, s2 = np.sort(rng.uniform(0, 1, size=2))
        direct = direct_f2(D, B, s1, s2)
        assert spectral_norm(f_k(D, B, [s1, s2]) - direct) <= 1e-12 * spectral_norm(direct)


def test_fk_norm_bounded(rng):
    D = np.diag(rng.normal(size=5) * 4)
    B = random_hermitian(5, 0.7, rng)
    for k in range(1, 6):
        nodes = np.sort(rng.uniform(0, 2, size=k))
        assert spectral_norm(f_k(D, B, nodes)) <= 0.7**k * (1 + 1e-10)


# truncated series


def test_series_b_zero_is_free_evolution(rng):
    D = random_hermitian(4, 3.0, rng)
    res = truncated_series(D, np.zeros((4, 4)), SeriesConfig(K=3, q=3, t=0.7))
    assert spectral_norm(res.W - expm_hermitian(D, 0.7)) <= 1e-13


def test_series_d_zero_is_taylor_polynomial(rng):
    B = random_hermitian(4, 1.0, rng)
    for K, q in [(2, 1), (4, 2), (6, 4)]:
        W = truncated_series(np.zeros((4, 4)), B, SeriesConfig(K=K, q=q, t=0.5)).W
        T = taylor(B, 0.5, K)
        assert spectral_norm(W - T) <= 1e-10 * spectral_norm(T)


def test_series_with_dense_d(rng):
    D = random_hermitian(4, 2.0, rng)
    B = random_hermitian(4, 1.0, rng)
    res = series_error(D, B, SeriesConfig(K=8, q=6, t=0.5))
    assert res.measured <= 1e-8
    assert res.passed


def test_term_norms_recorded(rng):
    D = np.diag([0.0, 1.0, 2.0])
    B = random_hermitian(3, 1.0, rng)
    res = truncated_series(D, B, SeriesConfig(K=4, q=4, t=0.5))
    assert len(res.term_norms) == 5 and res.term_norms[0] == pytest.approx(1.0)
    for k, n in enumerate(res.term_norms):
        assert n <= 0.5**k / math.factorial(k) * 1.01


def test_tuple_budget_guard():
    with pytest.raises(DomainError, match="lower q or K"):
        truncated_series(np.zeros(2), np.eye(2), SeriesConfig(K=8, q=16, t=0.1))


def test_config_validation():
    with pytest.raises(DomainError):
        SeriesConfig(K=9, q=4, t=1.0)
    with pytest.raises(DomainError):
        SeriesConfig(K=2, q=4, t=1.0, alpha=3.0)
    with pytest.raises(DomainError):
        SeriesConfig(K=2, q=0, t=1.0)
    assert SeriesConfig(K=3, q=4, t=0.5).tuple_count == 4 + 16 + 64


def test_vector_form_matches_matrix(rng):
    D = random_hermitian(6, 8.0, rng)
    B = random_hermitian(6, 1.0, rng)
    v = random_state(6, rng)
    for K in (0, 1, 3):
        cfg = SeriesConfig(K=K, q=5, t=0.4)
        W = truncated_series(D, B, cfg).W
        assert np.linalg.norm(W @ v - apply_truncated_series(D, B, cfg, v)) <= 1e-13


def test_threads_are_bit_identical(rng):
    D = np.diag(rng.normal(size=6) * 10)
    B = random_hermitian(6, 1.0, rng)
    cfg = SeriesConfig(K=4, q=5, t=0.5)
    one = truncated_series(D, B, cfg, workers=1).W
    four = truncated_series(D, B, cfg, workers=4).W
    assert np.array_equal(one, four)


def test_sampled_mode_is_close(rng):
    D = np.diag([0.0, 0.5])
    B = PAULI_X * 0.8
    cfg = SeriesConfig(K=3, q=4, t=0.5)
    exact = truncated_series(D, B, cfg).W
    est = truncated_series(D, B, cfg, mode="sampled", samples=4000, rng=np.random.default_rng(5))
    assert est.mode == "sampled"
    assert spectral_norm(est.W - exact) <= 0.02
    with pytest.raises(DomainError):
        truncated_series(D, B, cfg, mode="bogus")


def test_truncation_bound_arithmetic():
    assert truncation_bound(0.5, 1.0, 5) == pytest.approx(0.5**6 / 720)
    assert truncation_bound(0.5, 1.0, 5) == pytest.approx(2.17e-5, rel=2e-3)


def test_k_sweep_reaches_quadrature_floor():
    D = np.diag([0.0, 2.0, 4.0, 6.0])
    rng = np.random.default_rng(3)
    B = random_hermitian(4, 2.0, rng)
    floors = []
    for q in (2, 4):
        errs = [series_error(D, B, SeriesConfig(K=K, q=q, t=0.5)).measured for K in range(0, 7)]
        assert errs[1] < errs[0]
        floors.append(errs[-1])
    assert floors[1] < floors[0]


def test_small_instance_quadrature_bound_respected():
    D = np.diag([-2.0, 2.0])
    B = 0.5 * PAULI_X + 0.3 * PAULI_Z
    res = series_error(D, B, SeriesConfig(K=6, q=4, t=1.0))
    assert res.quadrature_bound > res.truncation_bound
    assert res.passed


def test_composition_over_segments(rng):
    D = np.diag(rng.normal(size=4) * 3)
    B = random_hermitian(4, 1.0, rng)
    t, count = 0.5, 4
    cfg = SeriesConfig(K=6, q=8, t=t)
    seg = series_error(D, B, cfg)
    W = truncated_series(D, B, cfg).W
    total = np.linalg.matrix_power(W, count)
    err = spectral_norm(total - expm_hermitian(D + B, t * count))
    assert err <= count * (seg.truncation_bound + seg.quadrature_bound)


# oracle and lemma check


def test_oracle_trivial_cases(rng):
    D = np.diag([0.3, -1.1])
    assert spectral_norm(nested_integral_oracle(D, np.eye(2), 0.8, 1) - 0.8 * np.eye(2)) <= 1e-13
    B = random_hermitian(2, 1.0, rng)
    assert spectral_norm(nested_integral_oracle(np.zeros((2, 2)), B, 0.8, 2) - 0.32 * B @ B) <= 1e-13
    with pytest.raises(DomainError):
        nested_integral_oracle(D, B, 1.0, 4)
    with pytest.raises(DomainError):
        nested_integral_oracle(np.zeros(9), np.eye(9), 1.0, 1)


def test_oracle_self_convergence():
    D = np.diag([-5.0, 5.0])
    B = np.array([[0.2, 0.6], [0.6, -0.4]], complex)
    B = B / spectral_norm(B)
    a = nested_integral_oracle(D, B, 1.0, 2)
    b = nested_integral_oracle(D, B, 1.0, 2, points=128)
    assert spectral_norm(a - b) <= 1e-9


def test_oracle_matches_nested_quadrature_at_high_order(rng):
    D = random_hermitian(3, 1.0, rng)
    B = random_hermitian(3, 1.0, rng)
    ip = InteractionPicture(D, B)
    for k in (1, 2, 3):
        quad = ip.to_original(nested_sums(ip.J, 3, 0.6, k, gauss_legendre(12))[k - 1])
        assert spectral_norm(quad - nested_integral_oracle(D, B, 0.6, k)) <= 1e-12


@pytest.mark.parametrize("k,q", [(1, 2), (1, 4), (2, 2), (2, 4)])
def test_fkbound(k, q):
    D = np.diag([-2.0, 2.0])
    B = np.array([[0.3, 0.8], [0.8, -0.2]], complex)
    res = fkbound_check(D, B, 1.0, k, q)
    assert not res.degenerate
    assert res.passed


def test_fkbound_degenerate_when_d_zero(rng):
    B = random_hermitian(2, 1.0, rng)
    res = fkbound_check(np.zeros((2, 2)), B, 1.0, 2, 2)
    assert res.degenerate and res.lhs_error <= 1e-12


# Dyson baseline


def test_dyson_constant_is_taylor():
    W = dyson_baseline(constant_z(), 0.0, 0.6, 4, 3)
    assert spectral_norm(W - taylor(PAULI_Z, 0.6, 4)) <= 1e-12


def test_dyson_driven_qubit():
    H = driven_qubit()
    W = dyson_baseline(H, 0.0, 0.5, 5, 8)
    assert spectral_norm(W - exact_propagator(H, 0.0, 0.5)) <= 1e-4
    W = dyson_baseline(H, 0.25, 0.75, 5, 8)
    assert spectral_norm(W - exact_propagator(H, 0.25, 0.75)) <= 1e-4


def test_dyson_vs_clock_series():
    T, M, K, q = 0.25, 32, 5, 6
    H = driven_qubit(T)
    ops = build_composite(H, ClockGrid(M, T))
    psi = np.array([1, 0], complex)
    cfg = SeriesConfig(K=K, q=q, t=T)
    start = np.kron(build_qft(M).conj().T[:, 0], psi)
    out = np.kron(build_qft(M), np.eye(2)) @ apply_truncated_series(ops.d_diag, ops.b_op, cfg, start)
    via_clock = out.reshape(M, 2)[0]
    via_dyson = dyson_baseline(H, 0.0, T, K, q) @ psi
    err = series_error(ops.d_op, ops.b_op, cfg)
    budget = lemma_bound(T, M, 1.0, 5.0) + err.truncation_bound + err.quadrature_bound + 1e-4
    gap = np.linalg.norm(via_clock - via_dyson)
    assert gap <= budget
    assert gap <= 1e-2


# parameter choices


def test_choose_k_q_scaling():
    base = choose_K_q(1.0, 1.0, 1.0, 1e-3)
    assert 1 <= base.K <= 9
    half = choose_K_q(1.0, 1.0, 1.0, 5e-4)
    log_factor = (math.log(2e3) / math.log(1e3)) ** 3
    assert half.q / base.q == pytest.approx(4 * log_factor, rel=1e-6)
    assert choose_K_q(2.0, 3.0, 1.0, 1e-3).segment_count == 2 * choose_K_q(1.0, 3.0, 1.0, 1e-3).segment_count
    per = choose_K_q(1.0, 2.0, 1.0, 1e-3, q_formula="per-segment")
    assert per.q == per.q_per_segment == 4_000_000
    assert per.q_total == base.q
    with pytest.raises(DomainError):
        choose_K_q(1.0, 1.0, 1.0, 0.0)
