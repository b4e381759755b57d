"""Lyapunov exponents of the continuously observed, damped, driven Duffing oscillator."""

from .classical_oracle import benettin_lyapunov
from .ensemble import EnsembleConfig, EnsembleResult, run_ensemble, sweep_beta
from .errors import (
    DimensionMismatch,
    InsufficientData,
    NonFiniteState,
    QSDError,
    TruncationTooSmall,
    ZeroSeparation,
)
from .fock_space import DampingConvention, DuffingConfig
from .lyapunov import (
    ClassifierSettings,
    LyapunovOutcome,
    LyapunovSettings,
    OutcomeKind,
    classify,
    run_single_pair,
)
from .noise import NoiseStream, derive_seed

__all__ = [
    "DuffingConfig",
    "DampingConvention",
    "LyapunovSettings",
    "ClassifierSettings",
    "LyapunovOutcome",
    "OutcomeKind",
    "EnsembleConfig",
    "EnsembleResult",
    "NoiseStream",
    "benettin_lyapunov",
    "classify",
    "derive_seed",
    "run_ensemble",
    "run_single_pair",
    "sweep_beta",
    "QSDError",
    "DimensionMismatch",
    "TruncationTooSmall",
    "NonFiniteState",
    "ZeroSeparation",
    "InsufficientData",
]
