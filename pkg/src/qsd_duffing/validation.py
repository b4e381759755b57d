"""Built-in oracle checks run by ``qsd-duffing validate``.

Each check returns a :class:`CheckResult`; none of them raises on a failed
comparison.  ``quick=True`` trades sample counts (and correspondingly looser
statistical tolerances) for speed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import curve_fit

from .classical_oracle import benettin_lyapunov
from .ensemble import _pilot_tail, estimate_levels
from .fock_space import (
    DampingConvention,
    DuffingConfig,
    basis_state,
    coherent_state,
    momentum_operator,
    position_operator,
)
from .lyapunov import ClassifierSettings, OutcomeKind, classify
from .noise import increments
from .qsd_integrator import evolve_independent, master_equation_evolve, trace_distance

__all__ = ["CheckResult", "CHECKS", "run_checks"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def check_commutator(quick: bool = False, dt: float | None = None) -> CheckResult:
    worst = 0.0
    for n in (2, 8, 64):
        X = position_operator(n)
        P = momentum_operator(n)
        expected = 1j * np.eye(n)
        expected[-1, -1] = 1j * (1 - n)
        worst = max(worst, float(np.max(np.abs(X @ P - P @ X - expected))))
    return CheckResult("commutator", worst < 1e-12, f"max deviation {worst:.2e}")


def check_noise(quick: bool = False, dt: float | None = None) -> CheckResult:
    n = 100_000 if quick else 1_000_000
    dt = dt or 1e-3
    dxi = increments(20240601, 0, n, dt)
    ok = True
    parts = []
    for label, samples, target in (
        ("E[dxi]", dxi, 0.0),
        ("E[dxi^2]", dxi**2, 0.0),
        ("E[|dxi|^2]", np.abs(dxi) ** 2, dt),
    ):
        mean = samples.mean()
        sigma = math.sqrt(float(np.var(samples.real) + np.var(samples.imag)) / n)
        z = abs(mean - target) / sigma
        ok &= z < 3
        parts.append(f"{label} z={z:.2f}")
    return CheckResult("noise", ok, ", ".join(parts))


def check_unraveling(quick: bool = False, dt: float | None = None) -> CheckResult:
    n_traj = 500 if quick else 2000
    tol = 0.04 if quick else 0.02
    try:
        cfg = DuffingConfig(
            beta_sq=1.0, gamma=0.1, g=0.0, n_levels=16, potential="harmonic", dt=dt or 1e-3
        )
    except ValueError as exc:
        return CheckResult("unraveling", False, f"invalid config: {exc}")
    worst = 0.0
    parts = []
    # A coherent start stays nearly pure; the Fock start makes trajectories
    # genuinely diverge, so the ensemble mean has real work to do.
    for label, psi0 in (
        ("coherent(1)", coherent_state(1.0, cfg.trunc)),
        ("|3>", basis_state(3, cfg.trunc)),
    ):
        states = evolve_independent(psi0, 5.0, cfg, root_seed=7, n_traj=n_traj)
        rho_qsd = states.T @ states.conj() / n_traj
        rho_me = master_equation_evolve(np.outer(psi0, psi0.conj()), 5.0, cfg)
        d = trace_distance(rho_qsd, rho_me)
        worst = max(worst, d)
        parts.append(f"{label} {d:.4f}")
    detail = f"trace distance {', '.join(parts)} < {tol} ({n_traj} traj)"
    return CheckResult("unraveling", worst < tol, detail)


def _damped_momentum(t, r, p0):
    """<P>(t) for dx/dt = p, dp/dt = -x - r p with x(0) = 0, p(0) = p0."""
    w = np.sqrt(1.0 - r * r / 4.0)
    return p0 * np.exp(-r * t / 2.0) * (np.cos(w * t) - r / (2.0 * w) * np.sin(w * t))


def calibration_rate(
    convention: DampingConvention, gamma: float = 0.125, dt: float = 1e-3, n_traj: int = 64
) -> float:
    """Momentum damping rate fitted to the ensemble-mean <P> of a harmonic well.

    A double well would mix the damping with the nonlinear force, and a free
    particle drifts out of any fixed truncation, so the calibration runs in
    the unit harmonic potential where the mean obeys a linear law with one
    unknown rate.
    """
    cfg = DuffingConfig(
        beta_sq=1.0,
        gamma=gamma,
        g=0.0,
        n_levels=40,
        potential="harmonic",
        damping_convention=convention,
        dt=dt,
    )
    psi0 = coherent_state(3.0j, cfg.trunc)
    t_end = dt * round(2.0 / cfg.damping_rate / dt)
    times = dt * np.round(np.linspace(0.0, t_end, 201) / dt)
    _, snaps = evolve_independent(psi0, t_end, cfg, root_seed=3, n_traj=n_traj, times=times)
    P = momentum_operator(cfg.trunc)
    means = np.array([np.mean(np.einsum("mi,ij,mj->m", s.conj(), P, s).real) for s in snaps])
    (rate, _), _ = curve_fit(_damped_momentum, times, means, p0=(0.1, means[0]))
    return float(rate)


def check_damping(quick: bool = False, dt: float | None = None) -> CheckResult:
    parts = []
    ok = True
    for conv in DampingConvention:
        try:
            rate = calibration_rate(conv, dt=dt or 1e-3, n_traj=32 if quick else 64)
        except (ValueError, FloatingPointError) as exc:
            return CheckResult("damping", False, f"{conv.value}: {exc}")
        target = 0.125 * conv.rate_factor
        rel = abs(rate - target) / target
        ok &= rel < 0.02
        parts.append(f"{conv.value} rate {rate:.5f} vs {target:.5f} ({100 * rel:.2f}%)")
    return CheckResult("damping", ok, "; ".join(parts))


def check_classical(quick: bool = False, dt: float | None = None) -> CheckResult:
    periods = 1000 if quick else 5000
    T = 2 * math.pi
    dt = dt or 1e-3
    try:
        chaotic = benettin_lyapunov(DuffingConfig(1.0, 0.125, dt=dt), (100 + periods) * T, 100 * T)
        regular = benettin_lyapunov(DuffingConfig(1.0, 0.3, dt=dt), (100 + periods) * T, 100 * T)
        fixed = benettin_lyapunov(
            DuffingConfig(1.0, 0.3, g=0.0, damping_convention="MeanGamma", dt=dt),
            (100 + periods) * T,
            100 * T,
        )
    except (ValueError, FloatingPointError) as exc:
        return CheckResult("classical", False, str(exc))
    ok = chaotic > 0 and regular <= 0 and abs(fixed + 0.15) < 0.05 * 0.15
    return CheckResult(
        "classical",
        ok,
        f"lambda(0.125)={chaotic:.4f} > 0, lambda(0.3)={regular:.4f} <= 0, undriven {fixed:.4f} ~ -0.15",
    )


def check_truncation(quick: bool = False, dt: float | None = None) -> CheckResult:
    try:
        cfg = DuffingConfig(beta_sq=0.5, gamma=0.125, dt=dt or 1e-3)
        cfg = cfg.with_(n_levels=estimate_levels(cfg.beta_sq))
        tail = _pilot_tail(cfg, 5 if quick else 20, 0, None)
    except (ValueError, FloatingPointError) as exc:
        return CheckResult("truncation", False, str(exc))
    # The guess may legitimately be too small; auto_levels grows it.  Here the
    # top decile must be far emptier than the bulk of the state.
    return CheckResult(
        "truncation", tail < 1e-6, f"top-decile population {tail:.2e} at N={cfg.n_levels}"
    )


def classifier_synthetics(n_series: int = 100, seed: int = 11) -> tuple[int, int]:
    """(false Converged on pure c/t, misses on 0.1 + 0.5/t) over ``n_series`` each.

    Every series has 30 checkpoints 10 drive periods apart and 1% relative
    noise.  A miss is a series not classified Converged with a value within
    three fit errors of 0.1.
    """
    rng = np.random.default_rng(seed)
    settings = ClassifierSettings()
    times = np.arange(1, 31) * 10 * 2 * math.pi
    false_conv = 0
    for _ in range(n_series):
        c = rng.uniform(0.01, 10.0)
        values = (c / times) * (1 + 0.01 * rng.standard_normal(times.size))
        false_conv += classify((times, values), settings).kind is OutcomeKind.CONVERGED
    misses = 0
    for _ in range(n_series):
        values = (0.1 + 0.5 / times) * (1 + 0.01 * rng.standard_normal(times.size))
        out = classify((times, values), settings)
        if out.kind is not OutcomeKind.CONVERGED or abs(out.value - 0.1) > 3 * out.fit_error:
            misses += 1
    return false_conv, misses


def check_classifier(quick: bool = False, dt: float | None = None) -> CheckResult:
    n = 100
    false_conv, misses = classifier_synthetics(n)
    return CheckResult(
        "classifier",
        false_conv == 0 and misses <= 0.05 * n,
        f"{false_conv}/{n} false Converged on c/t, {misses}/{n} misses on 0.1 + 0.5/t",
    )


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "commutator": check_commutator,
    "noise": check_noise,
    "unraveling": check_unraveling,
    "damping": check_damping,
    "classical": check_classical,
    "truncation": check_truncation,
    "classifier": check_classifier,
}


def run_checks(
    names=None, quick: bool = False, dt: float | None = None, report=None
) -> list[CheckResult]:
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks {unknown}; available: {sorted(CHECKS)}")
    results = []
    for name in names:
        start = time.perf_counter()
        res = CHECKS[name](quick=quick, dt=dt)
        res.seconds = time.perf_counter() - start
        results.append(res)
        if report:
            report(res)
    return results
