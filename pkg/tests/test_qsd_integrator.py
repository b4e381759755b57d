import math

import numpy as np
import pytest

from conftest import random_state
from qsd_duffing.errors import DimensionMismatch, NonFiniteState, TruncationTooSmall
from qsd_duffing.fock_space import (
    DuffingConfig,
    basis_state,
    coherent_state,
    displacement_operator,
    expectation,
    lowering_operator,
    static_hamiltonian,
)
from qsd_duffing.noise import NoiseStream
from qsd_duffing.qsd_integrator import (
    LindbladSet,
    evolve,
    evolve_independent,
    lindblad_set,
    master_equation_evolve,
    moving_frame_shift,
    qsd_drift,
    qsd_step,
    qsd_system,
    trace_distance,
)


def harmonic(gamma=0.1, n=16, **kw):
    return DuffingConfig(beta_sq=1.0, gamma=gamma, g=0.0, n_levels=n, potential="harmonic", **kw)


def test_drift_without_lindblad_is_schrodinger():
    cfg = harmonic(gamma=0.0, n=8)
    H = static_hamiltonian(cfg)
    psi = basis_state(0, 8)
    np.testing.assert_allclose(qsd_drift(psi, H, LindbladSet()), -0.5j * psi, atol=1e-14)


def test_noise_coefficient_vanishes_on_coherent_state():
    psi = coherent_state(0.8 + 0.3j, 30)
    L = math.sqrt(0.2) * lowering_operator(30)
    lexp = expectation(L, psi)
    assert np.linalg.norm(L @ psi - lexp * psi) < 1e-8


def test_drift_norm_derivative(rng):
    n = 8
    cfg = DuffingConfig(beta_sq=0.5, gamma=0.3, n_levels=n)
    psi = random_state(rng, n)
    H = static_hamiltonian(cfg)
    Ls = lindblad_set(cfg)
    drift = qsd_drift(psi, H, Ls)
    d_norm2 = 2 * np.vdot(psi, drift).real
    expected = -sum(
        expectation(L.conj().T @ L, psi).real - abs(expectation(L, psi)) ** 2 for L in Ls
    )
    assert d_norm2 == pytest.approx(expected, abs=1e-12)
    assert d_norm2 <= 1e-15


def test_drift_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        qsd_drift(np.ones(3) / math.sqrt(3), np.eye(4), LindbladSet())


@pytest.mark.parametrize("scheme", ["split", "rk4"])
def test_step_is_normalized_and_records_deviation(small_cfg, scheme):
    psi = coherent_state(0.5, small_cfg.trunc)
    diag = {}
    out = qsd_step(psi, 0.0, small_cfg, NoiseStream(1), scheme, diagnostics=diag)
    assert abs(np.linalg.norm(out) - 1) < 1e-13
    assert 0 <= diag["norm_deviation"] < 1e-2


def test_norm_deviation_is_first_order_in_dt():
    devs = []
    for dt in (2e-3, 1e-3, 5e-4):
        cfg = DuffingConfig(beta_sq=1.0, gamma=0.3, n_levels=20, dt=dt)
        psi = basis_state(3, cfg.trunc)
        stream = NoiseStream(0)
        worst = 0.0
        for k in range(50):
            d = {}
            psi = qsd_step(psi, k * dt, cfg, stream, "rk4", diagnostics=d)
            worst = max(worst, d["norm_deviation"])
        devs.append(worst)
    assert devs[0] > devs[1] > devs[2]
    assert devs[1] / devs[2] == pytest.approx(2.0, rel=0.5)


@pytest.mark.parametrize("scheme", ["split", "rk4", "euler"])
def test_same_stream_bitwise_identical(small_cfg, scheme):
    psi = coherent_state(0.5, small_cfg.trunc)
    a = evolve(psi, 0.0, 0.5, small_cfg, NoiseStream(3), scheme)
    b = evolve(psi, 0.0, 0.5, small_cfg, NoiseStream(3), scheme)
    np.testing.assert_array_equal(a, b)


def test_empty_interval_returns_input(small_cfg):
    psi = coherent_state(0.5, small_cfg.trunc)
    s = NoiseStream(3)
    np.testing.assert_array_equal(evolve(psi, 1.0, 1.0, small_cfg, s), psi)
    assert s.counter == 0


@pytest.mark.parametrize("scheme", ["split", "rk4"])
def test_split_interval_matches_single_run(small_cfg, scheme):
    psi = coherent_state(0.5, small_cfg.trunc)
    whole_stream = NoiseStream(11)
    whole = evolve(psi, 0.0, 2.0, small_cfg, whole_stream, scheme)
    s = NoiseStream(11)
    mid = evolve(psi, 0.0, 1.0, small_cfg, s, scheme)
    parts = evolve(mid, 1.0, 2.0, small_cfg, s, scheme)
    assert s.counter == whole_stream.counter == 2000
    if scheme == "rk4":
        np.testing.assert_array_equal(whole, parts)
    else:
        # the split scheme closes and reopens its half step at the boundary
        assert np.linalg.norm(whole - parts) < 1e-12


def test_step_consumes_ceil_steps(small_cfg):
    s = NoiseStream(0)
    evolve(coherent_state(0.5, small_cfg.trunc), 0.0, 0.0105, small_cfg, s)
    assert s.counter == 11


def test_closed_system_energy_drift():
    cfg = DuffingConfig(beta_sq=0.5, gamma=0.0, g=0.0, n_levels=30)
    psi = coherent_state(1.0, cfg.trunc)
    H = static_hamiltonian(cfg)
    e0 = expectation(H, psi).real
    out = evolve(psi, 0.0, 10 * cfg.drive_period, cfg, NoiseStream(0))
    assert abs(np.linalg.norm(out) - 1) < 1e-12
    assert abs(expectation(H, out).real - e0) < 1e-4


def test_rk4_and_split_agree_over_a_period():
    cfg = DuffingConfig(beta_sq=0.5, gamma=0.125, n_levels=36)
    psi = coherent_state(1.0, cfg.trunc)
    a = evolve(psi, 0.0, cfg.drive_period, cfg, NoiseStream(4), "split")
    b = evolve(psi, 0.0, cfg.drive_period, cfg, NoiseStream(4), "rk4")
    assert np.linalg.norm(a - b) < 0.05


def test_euler_is_unstable_on_the_quartic_spectrum():
    cfg = DuffingConfig(beta_sq=0.25, gamma=0.125, n_levels=40)
    psi = coherent_state(math.sqrt(2), cfg.trunc)
    top = {}
    for scheme in ("euler", "split"):
        out = evolve(psi, 0.0, 1.0, cfg, NoiseStream(0), scheme)
        top[scheme] = float(np.sum(np.abs(out[36:]) ** 2))
    assert top["euler"] > 0.1
    assert top["split"] < 1e-6


def test_rejects_unnormalized_and_wrong_size(small_cfg):
    with pytest.raises(ValueError):
        evolve(np.ones(24), 0.0, 0.1, small_cfg, NoiseStream(0))
    with pytest.raises(DimensionMismatch):
        evolve(basis_state(0, 5), 0.0, 0.1, small_cfg, NoiseStream(0))


def test_unknown_scheme(small_cfg):
    with pytest.raises(ValueError):
        evolve(basis_state(0, 24), 0.0, 0.1, small_cfg, NoiseStream(0), "leapfrog")


def test_independent_trajectories_use_derived_seeds(small_cfg):
    psi = coherent_state(0.5, small_cfg.trunc)
    states = evolve_independent(psi, 0.3, small_cfg, root_seed=5, n_traj=3)
    from qsd_duffing.noise import derive_seed

    one = evolve(psi, 0.0, 0.3, small_cfg, NoiseStream(derive_seed(5, 1)))
    assert np.linalg.norm(states[1] - one) < 1e-12
    assert np.linalg.norm(states[0] - states[1]) > 1e-6


def test_master_equation_stationary_state():
    cfg = harmonic(gamma=0.0, n=8)
    rho = np.diag([0.5, 0.3, 0.2, 0, 0, 0, 0, 0]).astype(complex)
    out = master_equation_evolve(rho, 1.0, cfg)
    np.testing.assert_allclose(out, rho, atol=1e-12)


def test_master_equation_decay_to_vacuum():
    cfg = harmonic(gamma=0.5, n=8)
    rho = np.outer(basis_state(1, 8), basis_state(1, 8)).astype(complex)
    pops = []
    for k in range(1, 6):
        rho = master_equation_evolve(rho, float(k), cfg, t0=float(k - 1))
        pops.append(rho[0, 0].real)
        assert abs(np.trace(rho) - 1) < 1e-8
    assert all(b > a for a, b in zip(pops, pops[1:]))


def test_unraveling_small_ensemble():
    cfg = harmonic()
    psi0 = basis_state(2, cfg.trunc)
    states = evolve_independent(psi0, 2.0, cfg, root_seed=1, n_traj=400)
    rho = states.T @ states.conj() / 400
    ref = master_equation_evolve(np.outer(psi0, psi0.conj()), 2.0, cfg)
    assert trace_distance(rho, ref) < 0.05


def test_trace_distance_basics():
    a = np.diag([1.0, 0.0]).astype(complex)
    b = np.diag([0.0, 1.0]).astype(complex)
    assert trace_distance(a, a) == 0
    assert trace_distance(a, b) == pytest.approx(1.0)


def test_moving_frame_coherent_to_vacuum():
    alpha = 1.2 - 0.5j
    shifted, offset = moving_frame_shift(coherent_state(alpha, 40), 40)
    assert abs(offset - alpha) < 1e-8
    assert np.linalg.norm(shifted - basis_state(0, 40)) < 1e-8


def test_moving_frame_identity_for_centered_state():
    psi = basis_state(2, 10)
    shifted, offset = moving_frame_shift(psi, 10)
    assert offset == 0
    np.testing.assert_array_equal(shifted, psi)


def test_displacement_round_trip(rng):
    n = 40
    psi = np.zeros(n, dtype=complex)
    psi[:8] = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    psi /= np.linalg.norm(psi)
    alpha = 0.6 + 0.2j
    back = displacement_operator(-alpha, n) @ (displacement_operator(alpha, n) @ psi)
    assert np.linalg.norm(back - psi) < 1e-8


def test_moving_frame_leak_raises():
    psi = 0.8 * basis_state(22, 24) + 0.6 * basis_state(23, 24)
    with pytest.raises(TruncationTooSmall):
        moving_frame_shift(psi, 24, pad=4)


def test_framed_system_reproduces_lab_dynamics():
    # agreement is limited by the truncation edge, which differs between frames
    n = 80
    cfg = DuffingConfig(beta_sq=0.5, gamma=0.125, n_levels=n)
    alpha = 0.9 + 0.2j
    lab0 = coherent_state(alpha, n)
    framed0 = basis_state(0, n)
    lab = lab0[None, :].copy()
    framed = framed0[None, :].copy()
    noise = NoiseStream(2).take(500, cfg.dt)[None, :]
    qsd_system(cfg).run(lab, 0, noise, "split")
    qsd_system(cfg, alpha).run(framed, 0, noise, "split")
    back = displacement_operator(alpha, n) @ framed[0]
    assert np.linalg.norm(back - lab[0]) < 1e-3
