"""Classical damped, driven Duffing oscillator and its Benettin exponent.

In scaled coordinates ``x = beta X`` the beta-dependence of the quantum
Hamiltonian drops out and the mean-field limit reads

    dx/dt = p,   dp/dt = x - x^3 + g cos(Omega t) - r p,

with r the damping rate of the chosen convention.  The largest Lyapunov
exponent is estimated by integrating the tangent (linearized) flow alongside
the orbit with RK4 and renormalizing the tangent vector once per drive
period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NonFiniteState
from .fock_space import DuffingConfig

__all__ = ["ClassicalState", "classical_rhs", "jacobian", "benettin_lyapunov", "integrate_orbit"]


@dataclass
class ClassicalState:
    x: float
    p: float
    tangent: tuple = (1.0, 0.0)


def jacobian(x: float, r: float) -> np.ndarray:
    return np.array([[0.0, 1.0], [1.0 - 3.0 * x * x, -r]])


def classical_rhs(s: ClassicalState, t: float, cfg: DuffingConfig):
    """Returns ``((dx/dt, dp/dt), d tangent/dt)``."""
    r = cfg.damping_rate
    xdot = s.p
    pdot = s.x - s.x**3 + cfg.g * math.cos(cfg.omega_drive * t) - r * s.p
    dtan = jacobian(s.x, r) @ np.asarray(s.tangent, dtype=float)
    return (xdot, pdot), (float(dtan[0]), float(dtan[1]))


@njit(cache=True)
def _f(y, t, g, omega, r, out):
    x = y[0]
    p = y[1]
    out[0] = p
    out[1] = x - x * x * x + g * np.cos(omega * t) - r * p
    out[2] = y[3]
    out[3] = (1.0 - 3.0 * x * x) * y[2] - r * y[3]


@njit(cache=True)
def _rk4_segment(y, step0, n_steps, dt, g, omega, r):
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    for k in range(n_steps):
        t = (step0 + k) * dt
        _f(y, t, g, omega, r, k1)
        for i in range(4):
            tmp[i] = y[i] + 0.5 * dt * k1[i]
        _f(tmp, t + 0.5 * dt, g, omega, r, k2)
        for i in range(4):
            tmp[i] = y[i] + 0.5 * dt * k2[i]
        _f(tmp, t + 0.5 * dt, g, omega, r, k3)
        for i in range(4):
            tmp[i] = y[i] + dt * k3[i]
        _f(tmp, t + dt, g, omega, r, k4)
        for i in range(4):
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def _benettin(y, n_transient, n_periods, period_steps, dt, g, omega, r):
    """Returns (sum of log growth over accumulation periods, final step index)."""
    step = 0
    log_sum = 0.0
    total = n_transient + n_periods
    for j in range(total):
        s_next = int(np.round((j + 1) * period_steps))
        _rk4_segment(y, step, s_next - step, dt, g, omega, r)
        step = s_next
        nrm = np.sqrt(y[2] * y[2] + y[3] * y[3])
        if not np.isfinite(nrm) or not np.isfinite(y[0]) or nrm == 0.0:
            return np.nan, step
        y[2] /= nrm
        y[3] /= nrm
        if j >= n_transient:
            log_sum += np.log(nrm)
    return log_sum, step


def integrate_orbit(cfg: DuffingConfig, x0: float, p0: float, t1: float, dt: float | None = None):
    """State (x, p) at time t1 starting from (x0, p0) at t = 0."""
    dt = dt or cfg.dt
    y = np.array([x0, p0, 1.0, 0.0])
    _rk4_segment(y, 0, int(round(t1 / dt)), dt, cfg.g, cfg.omega_drive, cfg.damping_rate)
    return float(y[0]), float(y[1])


def benettin_lyapunov(
    cfg: DuffingConfig,
    t_total: float,
    t_transient: float,
    x0: float = 1.0,
    p0: float = 0.0,
    tangent0: tuple = (1.0, 0.0),
    dt: float | None = None,
    min_periods: float = 1000,
) -> float:
    """Largest classical exponent from the tangent flow (units of omega).

    The transient and the accumulation window are rounded to whole drive
    periods; the accumulation window must span at least ``min_periods``.
    """
    dt = dt or cfg.dt
    period = cfg.drive_period
    n_transient = int(round(t_transient / period))
    n_periods = int(round((t_total - t_transient) / period))
    if n_periods < min_periods:
        raise ValueError(
            f"accumulation window of {n_periods} periods is below the minimum {min_periods}"
        )
    v = np.asarray(tangent0, dtype=float)
    v = v / np.linalg.norm(v)
    y = np.array([x0, p0, v[0], v[1]], dtype=float)
    log_sum, _ = _benettin(
        y, n_transient, n_periods, period / dt, dt, cfg.g, cfg.omega_drive, cfg.damping_rate
    )
    if not np.isfinite(log_sum):
        raise NonFiniteState("classical orbit diverged")
    return log_sum / (n_periods * period)
