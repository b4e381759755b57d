"""Truncated Fock-basis states and operators for the scaled Duffing oscillator.

Units: hbar = omega = 1 after scaling time by 1/omega, so every rate is in
units of the oscillator frequency.  Position and momentum are the scaled
quadratures with ``[X, P] = i`` (exact except on the last truncated level).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.special import gammainc

from .errors import DimensionMismatch, TruncationTooSmall

__all__ = [
    "BasisTruncation",
    "DampingConvention",
    "DuffingConfig",
    "lowering_operator",
    "creation_operator",
    "number_operator",
    "position_operator",
    "momentum_operator",
    "static_hamiltonian",
    "drive_coefficient",
    "duffing_hamiltonian",
    "damping_hamiltonian",
    "lindblad_operator",
    "coherent_state",
    "basis_state",
    "classical_to_alpha",
    "displacement_operator",
    "expectation",
    "normalize",
]

COHERENT_TAIL_TOL = 1e-10


@dataclass(frozen=True)
class BasisTruncation:
    n_levels: int

    def __post_init__(self):
        if int(self.n_levels) != self.n_levels or self.n_levels < 2:
            raise ValueError(f"n_levels must be an integer >= 2, got {self.n_levels!r}")


class DampingConvention(str, enum.Enum):
    """Which mean damping law the Lindblad operator realizes.

    ``MEAN_GAMMA`` gives ``dp/dt = F - gamma p`` (L = sqrt(gamma) a);
    ``MEAN_TWO_GAMMA`` gives ``dp/dt = F - 2 gamma p`` (L = sqrt(2 gamma) a).
    """

    MEAN_GAMMA = "MeanGamma"
    MEAN_TWO_GAMMA = "MeanTwoGamma"

    @classmethod
    def parse(cls, value: "str | DampingConvention") -> "DampingConvention":
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown damping convention {value!r}")

    @property
    def rate_factor(self) -> float:
        return 1.0 if self is DampingConvention.MEAN_GAMMA else 2.0


POTENTIALS = ("duffing", "harmonic", "free")


@dataclass(frozen=True)
class DuffingConfig:
    """Physical and numerical parameters of one quantum Duffing run.

    ``potential`` selects the static potential: the double-well Duffing form
    (default), or a harmonic / force-free variant used only by the
    calibration and oracle checks.
    """

    beta_sq: float
    gamma: float
    g: float = 0.3
    omega_drive: float = 1.0
    damping_convention: DampingConvention = DampingConvention.MEAN_TWO_GAMMA
    n_levels: int = 32
    dt: float = 1e-3
    potential: str = "duffing"
    trunc: BasisTruncation = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "damping_convention", DampingConvention.parse(self.damping_convention)
        )
        object.__setattr__(self, "trunc", BasisTruncation(int(self.n_levels)))
        if not self.beta_sq > 0:
            raise ValueError(f"beta_sq must be > 0, got {self.beta_sq}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.g >= 0:
            raise ValueError(f"g must be >= 0, got {self.g}")
        if not self.omega_drive > 0:
            raise ValueError(f"omega_drive must be > 0, got {self.omega_drive}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.dt < self.drive_period / 100:
            raise ValueError(
                f"dt={self.dt} gives fewer than 100 steps per drive period "
                f"({self.drive_period:.6g})"
            )
        if self.potential not in POTENTIALS:
            raise ValueError(f"potential must be one of {POTENTIALS}, got {self.potential!r}")

    @property
    def beta(self) -> float:
        return math.sqrt(self.beta_sq)

    @property
    def drive_period(self) -> float:
        return 2 * math.pi / self.omega_drive

    @property
    def damping_rate(self) -> float:
        """Mean-momentum decay rate r (gamma or 2 gamma)."""
        return self.damping_convention.rate_factor * self.gamma

    def with_(self, **changes) -> "DuffingConfig":
        return replace(self, **changes)


def lowering_operator(trunc: BasisTruncation | int) -> np.ndarray:
    n = _levels(trunc)
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def creation_operator(trunc: BasisTruncation | int) -> np.ndarray:
    return lowering_operator(trunc).conj().T.copy()


def number_operator(trunc: BasisTruncation | int) -> np.ndarray:
    return np.diag(np.arange(_levels(trunc), dtype=float)).astype(complex)


def position_operator(trunc: BasisTruncation | int) -> np.ndarray:
    a = lowering_operator(trunc)
    return (a + a.conj().T) / math.sqrt(2)


def momentum_operator(trunc: BasisTruncation | int) -> np.ndarray:
    a = lowering_operator(trunc)
    return 1j * (a.conj().T - a) / math.sqrt(2)


def damping_hamiltonian(cfg: DuffingConfig) -> np.ndarray:
    """Cross term ``kappa (XP + PX)`` that turns the Lindblad decay into pure momentum damping.

    With ``L = sqrt(c gamma) a`` the dissipator alone damps both quadratures at
    ``c gamma / 2``; the squeezing term moves all of it onto the momentum.
    """
    X = position_operator(cfg.trunc)
    P = momentum_operator(cfg.trunc)
    kappa = cfg.damping_rate / 4
    return kappa * (X @ P + P @ X)


def lindblad_operator(cfg: DuffingConfig) -> np.ndarray:
    return math.sqrt(cfg.damping_rate) * lowering_operator(cfg.trunc)


def static_hamiltonian(cfg: DuffingConfig) -> np.ndarray:
    """Time-independent part of H, damping cross term included.

    The quartic term squares the truncated ``X @ X`` rather than truncating
    the exact X^4, so the result is Hermitian by construction.
    """
    X = position_operator(cfg.trunc)
    P = momentum_operator(cfg.trunc)
    X2 = X @ X
    H = 0.5 * (P @ P)
    if cfg.potential == "duffing":
        H = H - 0.5 * X2 + 0.25 * cfg.beta_sq * (X2 @ X2)
    elif cfg.potential == "harmonic":
        H = H + 0.5 * X2
    H = H + damping_hamiltonian(cfg)
    return 0.5 * (H + H.conj().T)


def drive_coefficient(cfg: DuffingConfig, t: float) -> float:
    """Coefficient multiplying X in H(t): ``-(g / beta) cos(Omega t)``."""
    return -(cfg.g / cfg.beta) * math.cos(cfg.omega_drive * t)


def duffing_hamiltonian(cfg: DuffingConfig, t: float) -> np.ndarray:
    if not cfg.beta_sq > 0:
        raise ValueError("beta_sq must be positive (the drive term divides by beta)")
    H = static_hamiltonian(cfg)
    if cfg.g != 0:
        H = H + drive_coefficient(cfg, t) * position_operator(cfg.trunc)
    return H


def basis_state(n: int, trunc: BasisTruncation | int) -> np.ndarray:
    psi = np.zeros(_levels(trunc), dtype=complex)
    psi[n] = 1.0
    return psi


def coherent_state(alpha: complex, trunc: BasisTruncation | int) -> np.ndarray:
    """Coherent state |alpha> renormalized on the truncated basis.

    Raises TruncationTooSmall when the Poisson weight beyond the last level
    exceeds 1e-10.
    """
    n = _levels(trunc)
    mean_n = abs(alpha) ** 2
    deficiency = float(gammainc(n, mean_n)) if mean_n > 0 else 0.0
    if deficiency > COHERENT_TAIL_TOL:
        raise TruncationTooSmall(
            f"coherent state alpha={alpha} loses {deficiency:.3g} of its norm at n_levels={n}"
        )
    amps = np.empty(n, dtype=complex)
    amps[0] = 1.0
    for k in range(1, n):
        amps[k] = amps[k - 1] * alpha / math.sqrt(k)
    return amps / np.linalg.norm(amps)


def classical_to_alpha(x: float, p: float, beta: float) -> complex:
    """Coherent amplitude centered on classical scaled coordinates (x, p)."""
    return complex(x / beta, p / beta) / math.sqrt(2)


def displacement_operator(alpha: complex, trunc: BasisTruncation | int) -> np.ndarray:
    """``exp(alpha a^dag - alpha* a)`` on the truncated basis (unitary there)."""
    a = lowering_operator(trunc)
    return expm(alpha * a.conj().T - np.conj(alpha) * a)


def expectation(op: np.ndarray, psi: np.ndarray) -> complex:
    op = np.asarray(op)
    psi = np.asarray(psi)
    if op.ndim != 2 or op.shape[0] != op.shape[1] or op.shape[0] != psi.shape[-1]:
        raise DimensionMismatch(f"operator {op.shape} vs state {psi.shape}")
    return complex(np.vdot(psi, op @ psi))


def normalize(psi: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(psi)
    if not nrm > 0:
        raise ValueError("cannot normalize a zero vector")
    return psi / nrm


def _levels(trunc: BasisTruncation | int) -> int:
    if isinstance(trunc, BasisTruncation):
        return trunc.n_levels
    return BasisTruncation(int(trunc)).n_levels
