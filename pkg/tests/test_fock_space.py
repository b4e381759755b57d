import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaincc

from qsd_duffing.errors import DimensionMismatch, TruncationTooSmall
from qsd_duffing.fock_space import (
    BasisTruncation,
    DampingConvention,
    DuffingConfig,
    basis_state,
    classical_to_alpha,
    coherent_state,
    creation_operator,
    damping_hamiltonian,
    displacement_operator,
    drive_coefficient,
    duffing_hamiltonian,
    expectation,
    lindblad_operator,
    lowering_operator,
    momentum_operator,
    number_operator,
    position_operator,
    static_hamiltonian,
)


def test_lowering_operator_entries():
    a = lowering_operator(3)
    expected = np.zeros((3, 3))
    expected[0, 1] = 1.0
    expected[1, 2] = math.sqrt(2)
    np.testing.assert_allclose(a, expected, atol=0)


def test_lowering_annihilates_vacuum_and_lowers():
    a = lowering_operator(5)
    np.testing.assert_array_equal(a @ basis_state(0, 5), np.zeros(5))
    np.testing.assert_allclose(a @ basis_state(1, 5), basis_state(0, 5))


def test_number_operator_is_adag_a():
    a = lowering_operator(6)
    np.testing.assert_allclose(creation_operator(6) @ a, number_operator(6), atol=1e-14)


def test_truncation_rejects_tiny_basis():
    with pytest.raises(ValueError):
        BasisTruncation(1)


def test_two_level_position_and_commutator():
    X = position_operator(2)
    P = momentum_operator(2)
    s = 1 / math.sqrt(2)
    np.testing.assert_allclose(X, [[0, s], [s, 0]], atol=1e-15)
    np.testing.assert_allclose(X @ P - P @ X, 1j * np.diag([1.0, -1.0]), atol=1e-15)


@pytest.mark.parametrize("n", [2, 3, 8, 17, 64])
def test_truncated_commutator(n):
    X = position_operator(n)
    P = momentum_operator(n)
    comm = X @ P - P @ X
    expected = 1j * np.eye(n)
    expected[-1, -1] = 1j * (1 - n)
    assert np.max(np.abs(comm - expected)) < 1e-12


@pytest.mark.parametrize("t", [0.0, 0.4, 1.7, 5.0])
def test_hamiltonian_hermitian(t):
    cfg = DuffingConfig(beta_sq=0.25, gamma=0.125, n_levels=30)
    for M in (position_operator(30), momentum_operator(30), duffing_hamiltonian(cfg, t)):
        assert np.max(np.abs(M - M.conj().T)) < 1e-12


def test_undriven_hamiltonian_is_static():
    cfg = DuffingConfig(beta_sq=0.5, gamma=0.125, g=0.0, n_levels=20)
    assert np.linalg.norm(duffing_hamiltonian(cfg, 0.0) - duffing_hamiltonian(cfg, 1.7)) == 0


def test_drive_vanishes_at_quarter_period():
    cfg = DuffingConfig(beta_sq=0.5, gamma=0.125, n_levels=20)
    H = duffing_hamiltonian(cfg, math.pi / 2)
    H0 = duffing_hamiltonian(cfg.with_(g=0.0), 0.0)
    assert np.max(np.abs(H - H0)) < 1e-15


def test_drive_coefficient_classical_limit():
    cfg = DuffingConfig(beta_sq=0.01, gamma=0.125, n_levels=4)
    assert drive_coefficient(cfg, 0.0) == pytest.approx(-3.0, rel=1e-12)


def test_hamiltonian_matches_definition():
    cfg = DuffingConfig(beta_sq=0.3, gamma=0.2, n_levels=12)
    X = position_operator(12)
    P = momentum_operator(12)
    X2 = X @ X
    r = cfg.damping_rate
    t = 0.9
    H = (
        P @ P / 2
        - X2 / 2
        + 0.3 * X2 @ X2 / 4
        - (0.3 / math.sqrt(0.3)) * math.cos(t) * X
        + (r / 4) * (X @ P + P @ X)
    )
    np.testing.assert_allclose(duffing_hamiltonian(cfg, t), H, atol=1e-12)


@pytest.mark.parametrize("conv,factor", [("MeanGamma", 1.0), ("MeanTwoGamma", 2.0)])
def test_damping_convention_operators(conv, factor):
    cfg = DuffingConfig(beta_sq=1.0, gamma=0.3, n_levels=10, damping_convention=conv)
    assert cfg.damping_rate == pytest.approx(factor * 0.3)
    np.testing.assert_allclose(
        lindblad_operator(cfg), math.sqrt(factor * 0.3) * lowering_operator(10)
    )
    X, P = position_operator(10), momentum_operator(10)
    np.testing.assert_allclose(damping_hamiltonian(cfg), factor * 0.3 / 4 * (X @ P + P @ X))


def test_convention_parsing():
    assert DampingConvention.parse("meangamma") is DampingConvention.MEAN_GAMMA
    assert DampingConvention.parse("Mean-Two-Gamma") is DampingConvention.MEAN_TWO_GAMMA
    with pytest.raises(ValueError):
        DampingConvention.parse("half")


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(beta_sq=0.0, gamma=0.1),
        dict(beta_sq=-1.0, gamma=0.1),
        dict(beta_sq=1.0, gamma=-0.1),
        dict(beta_sq=1.0, gamma=0.1, dt=0.1),
        dict(beta_sq=1.0, gamma=0.1, omega_drive=0.0),
        dict(beta_sq=1.0, gamma=0.1, potential="cubic"),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        DuffingConfig(**kwargs)


def test_coherent_vacuum():
    np.testing.assert_array_equal(coherent_state(0, 6), basis_state(0, 6))


def test_coherent_eigenvalue():
    psi = coherent_state(1.0, 32)
    assert abs(expectation(lowering_operator(32), psi) - 1.0) < 1e-8


def test_coherent_too_small_truncation():
    tail = gammaincc(8, 4.0)  # Poisson weight beyond level 7 is 1 - P(n < 8)
    assert 1 - tail > 1e-10
    with pytest.raises(TruncationTooSmall):
        coherent_state(2.0, 8)


def test_coherent_quadratures_64():
    psi = coherent_state(1.0, 64)
    assert abs(expectation(position_operator(64), psi) - math.sqrt(2)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(
    re=st.floats(min_value=-2.5, max_value=2.5),
    im=st.floats(min_value=-2.5, max_value=2.5),
)
def test_coherent_moments_property(re, im):
    alpha = complex(re, im)
    psi = coherent_state(alpha, 48)
    assert abs(np.linalg.norm(psi) - 1) < 1e-12
    assert abs(expectation(position_operator(48), psi) - math.sqrt(2) * re) < 1e-8
    assert abs(expectation(momentum_operator(48), psi) - math.sqrt(2) * im) < 1e-8


def test_classical_to_alpha():
    assert classical_to_alpha(1.0, 0.0, 0.5) == pytest.approx(complex(2 / math.sqrt(2), 0))


def test_displacement_of_vacuum_is_coherent():
    alpha = 0.7 - 0.4j
    D = displacement_operator(alpha, 40)
    np.testing.assert_allclose(D @ basis_state(0, 40), coherent_state(alpha, 40), atol=1e-10)


def test_expectation_examples(rng):
    psi = rng.standard_normal(7) + 1j * rng.standard_normal(7)
    psi /= np.linalg.norm(psi)
    assert expectation(np.eye(7), psi) == pytest.approx(1.0)
    assert expectation(position_operator(7), basis_state(0, 7)) == 0
    assert expectation(lowering_operator(16), coherent_state(0.5, 16)) == pytest.approx(0.5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 20))
def test_hermitian_expectations_are_real(seed, n):
    r = np.random.default_rng(seed)
    psi = r.standard_normal(n) + 1j * r.standard_normal(n)
    psi /= np.linalg.norm(psi)
    cfg = DuffingConfig(beta_sq=0.4, gamma=0.1, n_levels=n)
    for op in (position_operator(n), momentum_operator(n), static_hamiltonian(cfg)):
        assert abs(expectation(op, psi).imag) < 1e-12


def test_expectation_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        expectation(np.eye(3), np.ones(4) / 2)
