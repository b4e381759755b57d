"""Ensembles of trajectory pairs and sweeps over the inverse system size.

Every pair gets its own noise realization, seeded by ``derive_seed(root_seed,
index)``, so results depend only on the configuration and never on how the
pairs are scheduled over worker processes.  The ensemble-mean lambda(t)
series is classified once; the spread of the per-pair final values supplies
the error bar.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import InsufficientData, QSDError
from .fock_space import DuffingConfig
from .lyapunov import (
    ClassifierSettings,
    LyapunovOutcome,
    LyapunovSeries,
    LyapunovSettings,
    OutcomeKind,
    classify,
    default_initial_state,
    run_single_pair,
)
from .noise import NoiseStream, derive_seed
from .qsd_integrator import qsd_system

__all__ = [
    "EnsembleConfig",
    "EnsembleResult",
    "EnsembleFailure",
    "SweepPoint",
    "run_ensemble",
    "sweep_beta",
    "auto_levels",
    "estimate_levels",
    "estimated_cost",
]

MAX_FAILURE_FRACTION = 0.10


class EnsembleFailure(QSDError):
    """More than the tolerated fraction of pairs failed."""


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble protocol; times are in units of 1/omega."""

    base: DuffingConfig
    n_pairs: int = 16
    t_total: float = 400 * 2 * math.pi
    t_transient: float = 100 * 2 * math.pi
    root_seed: int = 0
    delta0: float = 1e-7
    settings: LyapunovSettings = field(default_factory=LyapunovSettings)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)
    seeds: tuple | None = None

    def __post_init__(self):
        if self.n_pairs < 2:
            raise ValueError("n_pairs must be at least 2")
        if not self.t_total > self.t_transient >= 0:
            raise ValueError("need t_total > t_transient >= 0")
        if self.seeds is not None and len(self.seeds) != self.n_pairs:
            raise ValueError("explicit seeds must list one seed per pair")
        if self.settings.delta0 != self.delta0:
            object.__setattr__(self, "settings", replace(self.settings, delta0=self.delta0))

    @classmethod
    def from_periods(
        cls, base: DuffingConfig, periods: float, transient: float = 100, **kw
    ) -> "EnsembleConfig":
        """``periods`` of accumulation after ``transient`` drive periods."""
        T = base.drive_period
        return cls(base, t_total=(transient + periods) * T, t_transient=transient * T, **kw)

    def pair_seed(self, index: int) -> int:
        if self.seeds is not None:
            return int(self.seeds[index])
        return derive_seed(self.root_seed, index)

    @property
    def periods(self) -> float:
        return (self.t_total - self.t_transient) / self.base.drive_period


@dataclass
class EnsembleResult:
    outcome: LyapunovOutcome
    per_pair: list
    n_converged: int
    n_bound: int
    wall_time: float
    times: np.ndarray
    mean_series: np.ndarray
    std: float
    rescales_mean: float
    failures: list = field(default_factory=list)
    config: EnsembleConfig | None = None

    @property
    def value(self) -> float:
        return self.outcome.value

    @property
    def stderr(self) -> float:
        return self.outcome.stderr

    @property
    def kind(self) -> OutcomeKind:
        return self.outcome.kind


def _pair_task(args):
    cfg, index = args
    seed = cfg.pair_seed(index)
    try:
        series = run_single_pair(cfg.base, seed, cfg.t_transient, cfg.t_total, cfg.settings)
    except QSDError as exc:
        return index, exc
    return index, series


def run_ensemble(
    cfg: EnsembleConfig,
    workers: int = 1,
    progress: Callable[[int, LyapunovSeries | Exception], None] | None = None,
) -> EnsembleResult:
    """Run ``cfg.n_pairs`` independent pairs and aggregate them in index order."""
    start = time.perf_counter()
    tasks = [(cfg, i) for i in range(cfg.n_pairs)]
    results: dict[int, LyapunovSeries | Exception] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, res in pool.map(_pair_task, tasks):
                results[index] = res
                if progress:
                    progress(index, res)
    else:
        for task in tasks:
            index, res = _pair_task(task)
            results[index] = res
            if progress:
                progress(index, res)

    series = []
    failures = []
    for i in range(cfg.n_pairs):
        res = results[i]
        if isinstance(res, Exception):
            failures.append((i, f"{type(res).__name__}: {res}"))
        else:
            series.append(res)
    if len(failures) > MAX_FAILURE_FRACTION * cfg.n_pairs:
        raise EnsembleFailure(f"{len(failures)} of {cfg.n_pairs} pairs failed: {failures[:3]}")
    if len(series) < 2:
        raise EnsembleFailure("fewer than two pairs completed")

    times = series[0].times
    if times.size == 0:
        raise InsufficientData("pairs produced no checkpoints")
    mean_series = np.mean([s.lambdas for s in series], axis=0)
    outcome = classify((times, mean_series), cfg.classifier)

    per_pair = [s.final_lambda for s in series]
    n_converged = n_bound = 0
    for s in series:
        try:
            kind = classify(s, cfg.classifier).kind
        except InsufficientData:
            continue
        if kind is OutcomeKind.CONVERGED:
            n_converged += 1
        else:
            n_bound += 1
    std = float(np.std(per_pair, ddof=1))
    outcome.stderr = std / math.sqrt(len(per_pair))
    return EnsembleResult(
        outcome=outcome,
        per_pair=per_pair,
        n_converged=n_converged,
        n_bound=n_bound,
        wall_time=time.perf_counter() - start,
        times=times,
        mean_series=mean_series,
        std=std,
        rescales_mean=float(np.mean([s.rescale_count for s in series])),
        failures=failures,
        config=cfg,
    )


# Largest |x + i p|^2 reached on the classical attractors (scaled units).
ATTRACTOR_RADIUS_SQ = 4.0


def estimate_levels(beta_sq: float, radius_sq: float = ATTRACTOR_RADIUS_SQ) -> int:
    """Truncation guess: classical mean photon number plus six standard deviations."""
    nbar = radius_sq / (2.0 * beta_sq)
    return int(math.ceil(nbar + 6.0 * math.sqrt(nbar) + 16))


def auto_levels(
    base: DuffingConfig,
    beta_sq: float | None = None,
    pilot_periods: float = 20,
    tol: float = 1e-8,
    seed: int = 0,
    settings: LyapunovSettings | None = None,
    max_levels: int = 2000,
) -> int:
    """Smallest tested truncation whose pilot run keeps the top decile empty.

    Starts from :func:`estimate_levels` and grows by 25% until the population
    summed over levels >= 0.9 N stays below ``tol`` at every drive period of
    a ``pilot_periods`` single-trajectory run.
    """
    beta_sq = base.beta_sq if beta_sq is None else beta_sq
    n = estimate_levels(beta_sq)
    while n <= max_levels:
        cfg = replace(base, beta_sq=beta_sq, n_levels=n)
        if _pilot_tail(cfg, pilot_periods, seed, settings) < tol:
            return n
        n = int(math.ceil(1.25 * n))
    raise QSDError(f"no truncation up to {max_levels} levels passes the pilot test")


def _pilot_tail(cfg, periods, seed, settings) -> float:
    system = qsd_system(cfg)
    psi = default_initial_state(cfg, settings)
    states = psi[None, :].copy()
    stream = NoiseStream(seed)
    cut = int(math.floor(0.9 * cfg.n_levels))
    per = cfg.drive_period / cfg.dt
    worst = 0.0
    step = 0
    for j in range(1, int(round(periods)) + 1):
        nxt = int(round(j * per))
        system.run(states, step, stream.take(nxt - step, cfg.dt)[None, :])
        step = nxt
        worst = max(worst, float(np.sum(np.abs(states[0, cut:]) ** 2)))
    return worst


def estimated_cost(beta_sq: float, n_pairs: int, total_periods: float, dt: float, n_levels=None):
    """Work estimate (levels x steps x trajectories) for the long-run guard."""
    n = n_levels or estimate_levels(beta_sq)
    steps = total_periods * 2 * math.pi / dt
    return float(n) * steps * 2 * n_pairs


@dataclass
class SweepPoint:
    index: int
    beta_sq: float
    n_levels: int | None
    result: EnsembleResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def sweep_beta(
    cfg: EnsembleConfig,
    beta_sq_values: Sequence[float],
    levels: int | dict | None = None,
    workers: int = 1,
) -> Iterator[SweepPoint]:
    """Yield one ensemble result per beta^2, in input order, as each completes.

    ``levels`` fixes n_levels (int), maps beta^2 to it (dict), or is None for
    :func:`auto_levels`.  Failing points are yielded with ``error`` set and the
    sweep continues.
    """
    for i, b2 in enumerate(beta_sq_values):
        if not b2 > 0:
            yield SweepPoint(i, b2, None, error="beta_sq must be positive")
            continue
        n = None
        try:
            if isinstance(levels, dict):
                n = int(levels[b2])
            elif levels is not None:
                n = int(levels)
            else:
                n = auto_levels(cfg.base, b2, settings=cfg.settings)
            point_cfg = replace(cfg, base=replace(cfg.base, beta_sq=b2, n_levels=n))
            yield SweepPoint(i, b2, n, result=run_ensemble(point_cfg, workers=workers))
        except (QSDError, ValueError, KeyError) as exc:
            yield SweepPoint(i, b2, n, error=f"{type(exc).__name__}: {exc}")
