"""Quantum-state-diffusion trajectories of the driven, damped Duffing oscillator.

Each trajectory obeys the normalized Ito equation

    d psi = [-i H(t) + <L^dag> L - L^dag L / 2 - |<L>|^2 / 2] psi dt
            + (L - <L>) psi d xi

with a single Lindblad operator ``L = sqrt(r) a`` (r set by the damping
convention) and complex Wiener increments ``d xi`` drawn from a
:class:`~qsd_duffing.noise.NoiseStream`.  The state is renormalized after
every step.

Step schemes:

* ``"euler"``: plain Euler-Maruyama.  Only usable for small, soft
  truncations: the truncated quartic term has eigenvalues of order
  ``beta^2 N^2 / 4`` and explicit Euler amplifies them every step.
* ``"rk4"``: Euler-Maruyama noise term, drift advanced by one classical
  Runge-Kutta step (stable while ``|E_max| dt < 2.8``).
* ``"split"`` (default): the static Hamiltonian is propagated exactly with a
  precomputed ``exp(-i H0 dt)`` in symmetric half steps; the drive, the
  Lindblad drift and the noise take an Euler-Maruyama step in between.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .errors import DimensionMismatch, NonFiniteState, TruncationTooSmall
from .fock_space import (
    DuffingConfig,
    BasisTruncation,
    creation_operator,
    displacement_operator,
    expectation,
    lindblad_operator,
    lowering_operator,
    momentum_operator,
    position_operator,
    static_hamiltonian,
)
from .noise import NoiseStream, derive_seed, increments

__all__ = [
    "LindbladSet",
    "lindblad_set",
    "QSDSystem",
    "qsd_system",
    "qsd_drift",
    "qsd_step",
    "evolve",
    "evolve_independent",
    "master_equation_evolve",
    "trace_distance",
    "moving_frame_shift",
    "SCHEMES",
]

SCHEMES = ("split", "rk4", "euler")
DEFAULT_SCHEME = "split"
CHUNK_STEPS = 8192


@dataclass
class LindbladSet:
    operators: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.operators)

    def __len__(self):
        return len(self.operators)


def lindblad_set(cfg: DuffingConfig) -> LindbladSet:
    if cfg.damping_rate == 0:
        return LindbladSet([])
    return LindbladSet([lindblad_operator(cfg)])


def qsd_drift(psi: np.ndarray, H: np.ndarray, L: LindbladSet) -> np.ndarray:
    """Deterministic part of the QSD increment per unit time (dense reference)."""
    psi = np.asarray(psi, dtype=complex)
    if H.shape != (psi.size, psi.size):
        raise DimensionMismatch(f"H {H.shape} vs state {psi.shape}")
    out = -1j * (H @ psi)
    for Lj in L:
        if Lj.shape != H.shape:
            raise DimensionMismatch(f"L {Lj.shape} vs H {H.shape}")
        lexp = expectation(Lj, psi)
        Lpsi = Lj @ psi
        out += np.conj(lexp) * Lpsi - 0.5 * (Lj.conj().T @ Lpsi) - 0.5 * abs(lexp) ** 2 * psi
    return out


class QSDSystem:
    """Banded operators of one configuration, ready for the compiled stepper.

    ``frame`` is the coherent amplitude of a displaced frame: operators are
    expressed through ``a + frame`` so that a state centered on ``frame`` in
    the lab sits near the vacuum of the truncated basis.
    """

    def __init__(self, cfg: DuffingConfig, frame: complex = 0j):
        self.cfg = cfg
        self.frame = complex(frame)
        n = cfg.n_levels
        if self.frame == 0:
            H0 = static_hamiltonian(cfg)
            X = position_operator(cfg.trunc)
            L = lindblad_operator(cfg)
        else:
            H0, X, L = _framed_operators(cfg, self.frame)
        LdL = L.conj().T @ L
        self.H0 = H0
        self.X = X
        self.L = L
        offsets = sorted(
            set(_kernels.to_dia(H0)[0].tolist()) | set(_kernels.to_dia(X)[0].tolist())
        )
        self.h_off, self.h_dat = _kernels.to_dia(H0, offsets)
        _, self.x_dat = _kernels.to_dia(X, offsets)
        self.l_off, self.l_dat = _kernels.to_dia(L)
        self.q_off, self.q_dat = _kernels.to_dia(LdL)
        if self.l_off.size == 0:
            self.l_off, self.l_dat = _kernels.to_dia(L, [0])
            self.q_off, self.q_dat = _kernels.to_dia(LdL, [0])
        self.x_off, self.x_band = _kernels.to_dia(X, [-1, 0, 1])
        self.drive_amp = -(cfg.g / cfg.beta)
        self._split = None

    def _split_ops(self):
        if self._split is None:
            dt = self.cfg.dt
            full = expm(-1j * dt * self.H0)
            half = expm(-0.5j * dt * self.H0)
            back = half.conj().T
            self._split = tuple(
                (np.ascontiguousarray(U.real), np.ascontiguousarray(U.imag))
                for U in (full, half, back)
            )
        return self._split

    def hamiltonian(self, t: float) -> np.ndarray:
        return self.H0 + self.drive_amp * math.cos(self.cfg.omega_drive * t) * self.X

    def run(
        self,
        states: np.ndarray,
        step0: int,
        noise: np.ndarray,
        scheme: str = DEFAULT_SCHEME,
        stop_distance: float = 0.0,
        projective: bool = False,
    ) -> tuple[int, int, float]:
        """Advance ``states`` (rows) in place over ``noise.shape[1]`` steps.

        Returns (steps_taken, status, max norm deviation); raises
        NonFiniteState on overflow.
        """
        noise = np.ascontiguousarray(np.atleast_2d(noise), dtype=complex)
        cfg = self.cfg
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        if scheme == "split":
            (ur, ui), half, back = self._split_ops()
            _kernels.apply_dense(*half, states)
            steps, status, dev = _kernels.evolve_states_split(
                states,
                int(step0),
                noise.shape[1],
                cfg.dt,
                cfg.omega_drive,
                self.drive_amp,
                ur,
                ui,
                self.x_off,
                self.x_band,
                self.l_off,
                self.l_dat,
                self.q_off,
                self.q_dat,
                noise,
                float(stop_distance),
                bool(projective),
            )
            if status != _kernels.STATUS_NONFINITE:
                _kernels.apply_dense(*back, states)
        else:
            steps, status, dev = _kernels.evolve_states(
                states,
                int(step0),
                noise.shape[1],
                cfg.dt,
                cfg.omega_drive,
                self.drive_amp,
                self.h_off,
                self.h_dat,
                self.x_dat,
                self.l_off,
                self.l_dat,
                self.q_off,
                self.q_dat,
                noise,
                _kernels.SCHEME_RK4 if scheme == "rk4" else _kernels.SCHEME_EULER,
                float(stop_distance),
                bool(projective),
            )
        if status == _kernels.STATUS_NONFINITE:
            raise NonFiniteState(
                f"non-finite amplitude at step {step0 + steps} "
                f"(dt={cfg.dt}, n_levels={cfg.n_levels})"
            )
        return steps, status, dev


@functools.lru_cache(maxsize=64)
def qsd_system(cfg: DuffingConfig, frame: complex = 0j) -> QSDSystem:
    return QSDSystem(cfg, frame)


def _framed_operators(cfg: DuffingConfig, frame: complex):
    """H0, X and L written in terms of the displaced quadratures X + x_f, P + p_f."""
    n = cfg.n_levels
    ident = np.eye(n, dtype=complex)
    xf = math.sqrt(2) * frame.real
    pf = math.sqrt(2) * frame.imag
    X = position_operator(cfg.trunc) + xf * ident
    P = momentum_operator(cfg.trunc) + pf * ident
    X2 = X @ X
    H = 0.5 * (P @ P)
    if cfg.potential == "duffing":
        H = H - 0.5 * X2 + 0.25 * cfg.beta_sq * (X2 @ X2)
    elif cfg.potential == "harmonic":
        H = H + 0.5 * X2
    H = H + (cfg.damping_rate / 4) * (X @ P + P @ X)
    H = 0.5 * (H + H.conj().T)
    L = math.sqrt(cfg.damping_rate) * (lowering_operator(cfg.trunc) + frame * ident)
    return H, X, L


def _step_index(t: float, dt: float) -> int:
    k = round(t / dt)
    if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not on the step grid dt={dt}")
    return int(k)


def _n_steps(t0: float, t1: float, dt: float) -> int:
    return int(math.ceil((t1 - t0) / dt - 1e-9))


def qsd_step(
    psi: np.ndarray,
    t: float,
    cfg: DuffingConfig,
    stream: NoiseStream,
    scheme: str = DEFAULT_SCHEME,
    diagnostics: dict | None = None,
) -> np.ndarray:
    """One step from time ``t``; consumes one increment of ``stream``.

    When ``diagnostics`` is given, ``diagnostics["norm_deviation"]`` receives
    ``| ||psi'|| - 1 |`` before renormalization.
    """
    system = qsd_system(cfg)
    states = np.array(psi, dtype=complex, copy=True)[None, :]
    _check_state(states[0], cfg)
    noise = stream.peek(1, cfg.dt)[None, :]
    _, _, dev = system.run(states, _step_index(t, cfg.dt), noise, scheme)
    stream.advance(1)
    if diagnostics is not None:
        diagnostics["norm_deviation"] = dev
    return states[0]


def evolve(
    psi: np.ndarray,
    t0: float,
    t1: float,
    cfg: DuffingConfig,
    stream: NoiseStream,
    scheme: str = DEFAULT_SCHEME,
) -> np.ndarray:
    """Evolve one trajectory from t0 to t1 with ``ceil((t1 - t0)/dt)`` steps."""
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    states = np.array(psi, dtype=complex, copy=True)[None, :]
    _check_state(states[0], cfg)
    total = _n_steps(t0, t1, cfg.dt)
    system = qsd_system(cfg)
    step = _step_index(t0, cfg.dt)
    done = 0
    while done < total:
        n = min(CHUNK_STEPS, total - done)
        system.run(states, step + done, stream.take(n, cfg.dt)[None, :], scheme)
        done += n
    return states[0]


def evolve_independent(
    psi0: np.ndarray,
    t1: float,
    cfg: DuffingConfig,
    root_seed: int,
    n_traj: int,
    scheme: str = DEFAULT_SCHEME,
    times: np.ndarray | None = None,
):
    """Trajectories ``0..n_traj-1`` from psi0 at t=0, each with its own stream.

    Trajectory i uses ``derive_seed(root_seed, i)``.  Returns the final states
    (n_traj x N).  If ``times`` is given, also returns the list of state
    arrays at those times (each must be on the step grid).
    """
    _check_state(np.asarray(psi0), cfg)
    system = qsd_system(cfg)
    states = np.tile(np.asarray(psi0, dtype=complex), (n_traj, 1))
    seeds = [derive_seed(root_seed, i) for i in range(n_traj)]
    total = _n_steps(0.0, t1, cfg.dt)
    marks = sorted({_step_index(t, cfg.dt) for t in times}) if times is not None else []
    snapshots = []
    done = 0
    while done < total:
        n = min(CHUNK_STEPS, total - done)
        upcoming = [m for m in marks if done < m < done + n]
        if upcoming:
            n = upcoming[0] - done
        noise = np.stack([increments(s, done, n, cfg.dt) for s in seeds])
        system.run(states, done, noise, scheme)
        done += n
        if done in marks:
            snapshots.append(states.copy())
    if times is not None:
        if 0 in marks:
            snapshots.insert(0, np.tile(np.asarray(psi0, dtype=complex), (n_traj, 1)))
        return states, snapshots
    return states


def _check_state(psi: np.ndarray, cfg: DuffingConfig) -> None:
    if psi.shape != (cfg.n_levels,):
        raise DimensionMismatch(f"state of shape {psi.shape} for n_levels={cfg.n_levels}")
    if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise ValueError("state must be normalized")


def master_equation_evolve(
    rho0: np.ndarray, t1: float, cfg: DuffingConfig, t0: float = 0.0
) -> np.ndarray:
    """RK4 solution of the Lindblad equation the QSD ensemble unravels."""
    rho = np.array(rho0, dtype=complex, copy=True)
    n = cfg.n_levels
    if rho.shape != (n, n):
        raise DimensionMismatch(f"rho {rho.shape} for n_levels={n}")
    system = qsd_system(cfg)
    L = system.L
    Ld = L.conj().T
    LdL = Ld @ L
    dt = cfg.dt

    def rhs(r, t):
        H = system.hamiltonian(t)
        comm = H @ r - r @ H
        return -1j * comm + L @ r @ Ld - 0.5 * (LdL @ r + r @ LdL)

    steps = _n_steps(t0, t1, dt)
    k0 = _step_index(t0, dt)
    for k in range(steps):
        t = (k0 + k) * dt
        a = rhs(rho, t)
        b = rhs(rho + 0.5 * dt * a, t + 0.5 * dt)
        c = rhs(rho + 0.5 * dt * b, t + 0.5 * dt)
        d = rhs(rho + dt * c, t + dt)
        rho = rho + (dt / 6.0) * (a + 2 * b + 2 * c + d)
        if not np.all(np.isfinite(rho)):
            raise NonFiniteState(f"non-finite density matrix at t={t + dt}")
    return 0.5 * (rho + rho.conj().T)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    diff = rho - sigma
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def moving_frame_shift(
    psi: np.ndarray, trunc: BasisTruncation | int, pad: int = 32, tol: float = 1e-8
) -> tuple[np.ndarray, complex]:
    """Displace ``psi`` so that ``<a> = 0``; returns (shifted state, offset).

    The displacement is carried out in a basis padded by ``pad`` levels; the
    weight pushed beyond the original truncation must stay below ``tol``.
    Lab-frame state = D(offset) @ shifted state.
    """
    psi = np.asarray(psi, dtype=complex)
    n = psi.size
    if isinstance(trunc, BasisTruncation):
        trunc = trunc.n_levels
    if trunc != n:
        raise DimensionMismatch(f"state has {n} levels, truncation {trunc}")
    alpha = expectation(lowering_operator(n), psi)
    if alpha == 0:
        return psi.copy(), 0j
    big = np.zeros(n + pad, dtype=complex)
    big[:n] = psi
    shifted = displacement_operator(-alpha, n + pad) @ big
    lost = float(np.sum(np.abs(shifted[n:]) ** 2))
    if lost > tol:
        raise TruncationTooSmall(f"frame shift by {alpha:.4g} loses norm {lost:.3g}")
    out = shifted[:n]
    return out / np.linalg.norm(out), alpha
