"""Largest Lyapunov exponent of QSD trajectories by the two-trajectory method.

A reference and a shadow trajectory start a small Hilbert-space distance
``delta0`` apart and are driven by the *same* noise increments, so any
growth of their separation comes from the deterministic part of the
dynamics.  The shadow is pulled back along the line joining the two states
whenever the separation exceeds ``dmax_factor * delta0`` and at least once
per drive period; the logarithms of the growth factors accumulate into the
finite-time exponent ``lambda(t)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .errors import DimensionMismatch, InsufficientData, TruncationTooSmall, ZeroSeparation
from .fock_space import DuffingConfig, classical_to_alpha, coherent_state, lowering_operator
from .noise import NoiseStream
from .qsd_integrator import CHUNK_STEPS, DEFAULT_SCHEME, qsd_system

__all__ = [
    "LyapunovSettings",
    "ClassifierSettings",
    "TrajectoryPair",
    "RescaleEvent",
    "LyapunovSeries",
    "OutcomeKind",
    "LyapunovOutcome",
    "hilbert_distance",
    "default_initial_state",
    "initial_pair",
    "advance_pair",
    "wolf_rescale",
    "classify",
    "fit_plateau",
    "run_single_pair",
]


@dataclass(frozen=True)
class LyapunovSettings:
    """Numerical knobs of the pair estimator (none of them is physical)."""

    delta0: float = 1e-7
    dmax_factor: float = 100.0
    rescale_periods: float = 1.0
    checkpoint_periods: float = 10.0
    projective: bool = False
    direction: str = "position"
    scheme: str = DEFAULT_SCHEME
    initial_x: float = 1.0
    initial_p: float = 0.0

    def __post_init__(self):
        if not 0 < self.delta0 <= 1e-4:
            raise ValueError(f"delta0 must lie in (0, 1e-4], got {self.delta0}")
        if not self.dmax_factor > 1:
            raise ValueError("dmax_factor must exceed 1")
        if not self.rescale_periods > 0 or not self.checkpoint_periods > 0:
            raise ValueError("rescale and checkpoint intervals must be positive")
        if self.direction not in ("position", "momentum"):
            raise ValueError(f"direction must be 'position' or 'momentum', got {self.direction!r}")


@dataclass(frozen=True)
class ClassifierSettings:
    min_checkpoints: int = 20
    fit_fraction: float = 0.5
    stable_fraction: float = 0.25
    detect_sigma: float = 2.0
    stable_sigma: float = 3.0
    plateau_fraction: float = 0.5


@dataclass
class TrajectoryPair:
    psi_ref: np.ndarray
    psi_shadow: np.ndarray
    stream: NoiseStream
    step: int = 0
    origin_step: int = 0
    dt: float = 1e-3
    bisection_iterations: int = 0

    @property
    def t(self) -> float:
        return self.step * self.dt

    @property
    def distance(self) -> float:
        return hilbert_distance(self.psi_ref, self.psi_shadow)

    def copy(self) -> "TrajectoryPair":
        return TrajectoryPair(
            self.psi_ref.copy(),
            self.psi_shadow.copy(),
            self.stream.copy(),
            self.step,
            self.origin_step,
            self.dt,
            self.bisection_iterations,
        )


@dataclass(frozen=True)
class RescaleEvent:
    step: int
    t: float
    distance: float
    log_factor: float
    reason: str  # "scheduled" or "threshold"


@dataclass
class LyapunovSeries:
    delta0: float
    log_growth_sum: float = 0.0
    elapsed: float = 0.0
    checkpoints: list = field(default_factory=list)
    rescale_count: int = 0
    threshold_rescales: int = 0
    final_distance: float = float("nan")

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.checkpoints], dtype=float)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([lam for _, lam in self.checkpoints], dtype=float)

    @property
    def final_lambda(self) -> float:
        if not self.checkpoints:
            raise InsufficientData("series has no checkpoints")
        return self.checkpoints[-1][1]


class OutcomeKind(str, enum.Enum):
    CONVERGED = "Converged"
    UPPER_BOUND = "UpperBound"


@dataclass
class LyapunovOutcome:
    kind: OutcomeKind
    value: float
    stderr: float = 0.0
    fit_value: float = float("nan")
    fit_error: float = float("nan")
    fit_slope: float = float("nan")


def hilbert_distance(psi1: np.ndarray, psi2: np.ndarray, projective: bool = False) -> float:
    """``||psi1 - psi2||``; with ``projective`` the global phase of psi2 is optimized away."""
    a = np.ascontiguousarray(psi1, dtype=complex)
    b = np.ascontiguousarray(psi2, dtype=complex)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return float(_kernels.pair_distance(a, b, bool(projective)))


def default_initial_state(cfg: DuffingConfig, settings: LyapunovSettings | None = None):
    settings = settings or LyapunovSettings()
    alpha = classical_to_alpha(settings.initial_x, settings.initial_p, cfg.beta)
    return coherent_state(alpha, cfg.trunc)


def _displace(psi: np.ndarray, alpha: complex, pad: int = 16, tol: float = 1e-10) -> np.ndarray:
    n = psi.size
    big = np.zeros(n + pad, dtype=complex)
    big[:n] = psi
    a = lowering_operator(n + pad)
    out = expm(alpha * a.conj().T - np.conj(alpha) * a) @ big
    lost = float(np.sum(np.abs(out[n:]) ** 2))
    if lost > tol:
        raise TruncationTooSmall(f"displacement by {alpha:.3g} leaks {lost:.3g} of the norm")
    out = out[:n]
    return out / np.linalg.norm(out)


def initial_pair(
    psi0: np.ndarray,
    delta0: float,
    cfg: DuffingConfig,
    seed: int,
    direction: str = "position",
    t0: float = 0.0,
) -> TrajectoryPair:
    """Reference psi0 plus a shadow displaced in phase space by distance delta0.

    The displacement amplitude (real for a position shift, imaginary for a
    momentum shift) is found by bisection in log space.
    """
    if not 0 < delta0 <= 1e-4:
        raise ValueError(f"delta0 must lie in (0, 1e-4], got {delta0}")
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (cfg.n_levels,):
        raise DimensionMismatch(f"state {psi0.shape} for n_levels={cfg.n_levels}")
    unit = 1.0 if direction == "position" else 1j

    def dist(eps):
        return hilbert_distance(psi0, _displace(psi0, unit * eps))

    lo, hi = math.log(1e-14), math.log(1e-1)
    if dist(math.exp(hi)) < delta0:
        raise ValueError("delta0 unreachable by a small displacement")
    iterations = 0
    shadow = None
    for iterations in range(1, 200):
        mid = 0.5 * (lo + hi)
        shadow = _displace(psi0, unit * math.exp(mid))
        d = hilbert_distance(psi0, shadow)
        if abs(d / delta0 - 1.0) < 1e-3:
            break
        if d < delta0:
            lo = mid
        else:
            hi = mid
    step = round(t0 / cfg.dt)
    return TrajectoryPair(
        psi0.copy(),
        shadow,
        NoiseStream(seed),
        step=step,
        origin_step=step,
        dt=cfg.dt,
        bisection_iterations=iterations,
    )


def wolf_rescale(
    pair: TrajectoryPair, delta0: float, projective: bool = False
) -> tuple[TrajectoryPair, float]:
    """Pull the shadow back to distance ~delta0 along the line to the reference.

    Returns the pair (modified in place) and ``ln(Delta / delta0)``.
    """
    if projective:
        ov = np.vdot(pair.psi_shadow, pair.psi_ref)
        if abs(ov) > 0:
            pair.psi_shadow = pair.psi_shadow * (ov / abs(ov))
    delta = hilbert_distance(pair.psi_ref, pair.psi_shadow)
    if delta == 0:
        raise ZeroSeparation(f"pair separation vanished at t={pair.t:.6g}")
    shadow = pair.psi_ref + (delta0 / delta) * (pair.psi_shadow - pair.psi_ref)
    pair.psi_shadow = shadow / np.linalg.norm(shadow)
    return pair, math.log(delta / delta0)


def _scheduled_steps(cfg: DuffingConfig, settings: LyapunovSettings):
    interval = settings.rescale_periods * cfg.drive_period / cfg.dt

    def step_of(j: int) -> int:
        return int(round(j * interval))

    return interval, step_of


def advance_pair(
    pair: TrajectoryPair,
    t_next: float,
    cfg: DuffingConfig,
    settings: LyapunovSettings | None = None,
) -> tuple[TrajectoryPair, list[RescaleEvent]]:
    """Step both trajectories with shared increments up to ``t_next``.

    After any step where the separation exceeds ``dmax_factor * delta0``, and
    at every scheduled rescale time (a fixed grid counted from the pair's
    origin), the shadow is rescaled and an event is recorded.  A pair with
    zero separation is left alone.
    """
    settings = settings or LyapunovSettings()
    target = int(math.ceil(t_next / cfg.dt - 1e-9))
    if target <= pair.step:
        raise ValueError(f"t_next={t_next} does not lie after t={pair.t}")
    system = qsd_system(cfg)
    interval, step_of = _scheduled_steps(cfg, settings)
    dmax = settings.dmax_factor * settings.delta0
    events: list[RescaleEvent] = []
    states = np.stack([pair.psi_ref, pair.psi_shadow]).astype(complex)
    while pair.step < target:
        rel = pair.step - pair.origin_step
        j = int(rel // interval) + 1
        while pair.origin_step + step_of(j) <= pair.step:
            j += 1
        next_sched = pair.origin_step + step_of(j)
        n = min(next_sched, target) - pair.step
        n = min(n, CHUNK_STEPS)
        noise = pair.stream.peek(n, cfg.dt)
        taken, status, _ = system.run(
            states, pair.step, noise[None, :], settings.scheme, dmax, settings.projective
        )
        pair.stream.advance(taken)
        pair.step += taken
        reason = None
        if status == _kernels.STATUS_DISTANCE:
            reason = "threshold"
        elif pair.step == next_sched:
            reason = "scheduled"
        if reason is not None:
            pair.psi_ref, pair.psi_shadow = states[0].copy(), states[1].copy()
            delta = hilbert_distance(pair.psi_ref, pair.psi_shadow, settings.projective)
            if delta > 0:
                _, logf = wolf_rescale(pair, settings.delta0, settings.projective)
                events.append(RescaleEvent(pair.step, pair.t, delta, logf, reason))
                states[1] = pair.psi_shadow
    pair.psi_ref, pair.psi_shadow = states[0].copy(), states[1].copy()
    return pair, events


def run_single_pair(
    cfg: DuffingConfig,
    seed: int,
    t_transient: float,
    t_total: float,
    settings: LyapunovSettings | None = None,
    psi0: np.ndarray | None = None,
) -> LyapunovSeries:
    """Finite-time exponent series of one pair.

    The pair runs (with rescaling) through ``[0, t_transient]`` without
    accumulating; its separation is then reset to delta0 and logarithmic
    growth is accumulated over ``[t_transient, t_total]`` with a checkpoint
    every ``checkpoint_periods`` drive periods.
    """
    settings = settings or LyapunovSettings()
    if t_transient < 0:
        raise ValueError("t_transient must be non-negative")
    series = LyapunovSeries(delta0=settings.delta0)
    if t_total <= t_transient:
        return series
    if psi0 is None:
        psi0 = default_initial_state(cfg, settings)
    pair = initial_pair(psi0, settings.delta0, cfg, seed, settings.direction)
    if t_transient > 0:
        advance_pair(pair, t_transient, cfg, settings)
        wolf_rescale(pair, settings.delta0, settings.projective)
    start = pair.t
    every = settings.checkpoint_periods * cfg.drive_period
    marks = []
    k = 1
    while t_transient + k * every < t_total - 1e-9:
        marks.append(t_transient + k * every)
        k += 1
    marks.append(t_total)
    for mark in marks:
        if int(math.ceil(mark / cfg.dt - 1e-9)) <= pair.step:
            continue
        _, events = advance_pair(pair, mark, cfg, settings)
        for ev in events:
            series.log_growth_sum += ev.log_factor
            series.rescale_count += 1
            series.threshold_rescales += ev.reason == "threshold"
        series.elapsed = pair.t - start
        delta = hilbert_distance(pair.psi_ref, pair.psi_shadow, settings.projective)
        if delta == 0:
            raise ZeroSeparation(f"pair separation vanished at t={pair.t:.6g}")
        series.final_distance = delta
        lam = (series.log_growth_sum + math.log(delta / settings.delta0)) / series.elapsed
        series.checkpoints.append((series.elapsed, lam))
    return series


def fit_plateau(times: np.ndarray, values: np.ndarray) -> tuple[float, float, float]:
    """Least-squares fit ``values = slope / t + plateau``.

    Returns (plateau, plateau standard error, slope).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    A = np.column_stack([1.0 / times, np.ones_like(times)])
    coef, _, rank, _ = np.linalg.lstsq(A, values, rcond=None)
    dof = times.size - 2
    resid = values - A @ coef
    s2 = float(resid @ resid) / dof if dof > 0 else float("inf")
    cov = s2 * np.linalg.pinv(A.T @ A)
    return float(coef[1]), float(math.sqrt(max(cov[1, 1], 0.0))), float(coef[0])


def classify(
    series: LyapunovSeries | tuple[np.ndarray, np.ndarray],
    settings: ClassifierSettings | None = None,
) -> LyapunovOutcome:
    """Decide whether lambda(t) has settled on a positive plateau.

    Fits ``c/t + lambda_inf`` to the final ``fit_fraction`` of checkpoints.
    The series counts as converged when the plateau is significant
    (``> detect_sigma`` fit errors), the mean of the final ``stable_fraction``
    lies within ``stable_sigma`` fit errors of it, and the plateau carries at
    least ``plateau_fraction`` of the fitted value at the last checkpoint (the
    1/t transient has died out).  Otherwise the last value is reported as an
    upper bound.
    """
    settings = settings or ClassifierSettings()
    if isinstance(series, LyapunovSeries):
        times, values = series.times, series.lambdas
    else:
        times, values = (np.asarray(v, dtype=float) for v in series)
    if times.size < settings.min_checkpoints:
        raise InsufficientData(
            f"{times.size} checkpoints, need at least {settings.min_checkpoints}"
        )
    n_fit = max(3, int(round(settings.fit_fraction * times.size)))
    n_stable = max(1, int(round(settings.stable_fraction * times.size)))
    plateau, err, slope = fit_plateau(times[-n_fit:], values[-n_fit:])
    final = float(values[-1])
    tail_mean = float(np.mean(values[-n_stable:]))
    fitted_final = slope / times[-1] + plateau
    converged = (
        plateau > settings.detect_sigma * err
        and abs(tail_mean - plateau) <= settings.stable_sigma * err
        and plateau >= settings.plateau_fraction * fitted_final
    )
    kind = OutcomeKind.CONVERGED if converged else OutcomeKind.UPPER_BOUND
    value = plateau if converged else final
    return LyapunovOutcome(kind, value, 0.0, plateau, err, slope)
