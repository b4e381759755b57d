"""Compiled inner loops for the QSD integrator.

Operators are passed in diagonal (DIA) form: an ``offsets`` vector and a
``data`` array with ``data[j, i] = M[i, i + offsets[j]]``.  Every operator of
the model is banded with half-width <= 4, so a product costs O(n_diag * N).
"""

from __future__ import annotations

import numpy as np
from numba import njit

SCHEME_EULER = 0
SCHEME_RK4 = 1

STATUS_OK = 0
STATUS_DISTANCE = 1
STATUS_NONFINITE = 2


def to_dia(M: np.ndarray, offsets=None, atol: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """DIA copy of square ``M``; offsets default to every nonzero diagonal."""
    M = np.asarray(M, dtype=complex)
    n = M.shape[0]
    if offsets is None:
        offsets = [k for k in range(-n + 1, n) if np.any(np.abs(np.diagonal(M, k)) > atol)]
    offsets = np.asarray(sorted(offsets), dtype=np.int64)
    data = np.zeros((offsets.size, n), dtype=complex)
    for j, k in enumerate(offsets):
        d = np.diagonal(M, k)
        if k >= 0:
            data[j, : n - k] = d
        else:
            data[j, -k:] = d
    return offsets, data


@njit(cache=True)
def _dia_matvec(offsets, data, coef_data, coef, v, out):
    """out = (data + coef * coef_data) @ v; coef_data is skipped when coef == 0."""
    n = v.shape[0]
    for i in range(n):
        out[i] = 0j
    use_coef = coef != 0.0
    for j in range(offsets.shape[0]):
        k = offsets[j]
        lo = -k if k < 0 else 0
        hi = n - k if k > 0 else n
        if use_coef:
            for i in range(lo, hi):
                out[i] += (data[j, i] + coef * coef_data[j, i]) * v[i + k]
        else:
            for i in range(lo, hi):
                out[i] += data[j, i] * v[i + k]


@njit(cache=True)
def _drift(psi, fcoef, h_off, h_dat, x_dat, l_off, l_dat, q_off, q_dat, out, lpsi, tmp):
    """QSD drift into ``out``; leaves L psi in ``lpsi`` and returns <L>.

    ``q`` is L^dag L.
    """
    n = psi.shape[0]
    _dia_matvec(l_off, l_dat, l_dat, 0.0, psi, lpsi)
    nrm2 = 0.0
    lexp = 0j
    for i in range(n):
        nrm2 += psi[i].real * psi[i].real + psi[i].imag * psi[i].imag
        lexp += np.conj(psi[i]) * lpsi[i]
    lexp = lexp / nrm2
    labs2 = lexp.real * lexp.real + lexp.imag * lexp.imag
    _dia_matvec(h_off, h_dat, x_dat, fcoef, psi, out)
    _dia_matvec(q_off, q_dat, q_dat, 0.0, psi, tmp)
    lc = np.conj(lexp)
    for i in range(n):
        out[i] = -1j * out[i] + lc * lpsi[i] - 0.5 * tmp[i] - 0.5 * labs2 * psi[i]
    return lexp


@njit(cache=True)
def _distance(a, b, projective):
    n = a.shape[0]
    ph = 1.0 + 0j
    if projective:
        ov = 0j
        for i in range(n):
            ov += np.conj(a[i]) * b[i]
        mag = abs(ov)
        if mag > 0.0:
            ph = np.conj(ov) / mag
    s = 0.0
    for i in range(n):
        d = a[i] - ph * b[i]
        s += d.real * d.real + d.imag * d.imag
    return np.sqrt(s)


@njit(cache=True)
def evolve_states(
    states,
    step0,
    n_steps,
    dt,
    omega,
    drive_amp,
    h_off,
    h_dat,
    x_dat,
    l_off,
    l_dat,
    q_off,
    q_dat,
    noise,
    scheme,
    stop_distance,
    projective,
):
    """Advance each row of ``states`` in place by up to ``n_steps`` steps.

    ``x_dat`` is the position operator on the offsets of the static
    Hamiltonian ``h_off``; the drive adds ``drive_amp cos(omega t) X``.
    Row m uses noise row m, or row 0 when ``noise`` has a single row (shared
    realization).  When ``stop_distance > 0`` and there are two rows, stops
    right after the first step whose pair distance exceeds it.

    Returns (steps_taken, status, max pre-renormalization norm deviation).
    """
    m_rows, n = states.shape
    shared = noise.shape[0] == 1
    k1 = np.empty(n, dtype=np.complex128)
    k2 = np.empty(n, dtype=np.complex128)
    k3 = np.empty(n, dtype=np.complex128)
    k4 = np.empty(n, dtype=np.complex128)
    stage = np.empty(n, dtype=np.complex128)
    lpsi0 = np.empty(n, dtype=np.complex128)
    lpsi = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    max_dev = 0.0
    check = stop_distance > 0.0 and m_rows == 2
    half = 0.5 * dt
    sixth = dt / 6.0
    for k in range(n_steps):
        t = (step0 + k) * dt
        f0 = drive_amp * np.cos(omega * t)
        fh = drive_amp * np.cos(omega * (t + half))
        f1 = drive_amp * np.cos(omega * (t + dt))
        for m in range(m_rows):
            psi = states[m]
            dxi = noise[0, k] if shared else noise[m, k]
            l0 = _drift(psi, f0, h_off, h_dat, x_dat, l_off, l_dat, q_off, q_dat, k1, lpsi0, tmp)
            if scheme == SCHEME_RK4:
                for i in range(n):
                    stage[i] = psi[i] + half * k1[i]
                _drift(stage, fh, h_off, h_dat, x_dat, l_off, l_dat, q_off, q_dat, k2, lpsi, tmp)
                for i in range(n):
                    stage[i] = psi[i] + half * k2[i]
                _drift(stage, fh, h_off, h_dat, x_dat, l_off, l_dat, q_off, q_dat, k3, lpsi, tmp)
                for i in range(n):
                    stage[i] = psi[i] + dt * k3[i]
                _drift(stage, f1, h_off, h_dat, x_dat, l_off, l_dat, q_off, q_dat, k4, lpsi, tmp)
                for i in range(n):
                    psi[i] = (
                        psi[i]
                        + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                        + (lpsi0[i] - l0 * psi[i]) * dxi
                    )
            else:
                for i in range(n):
                    psi[i] = psi[i] + dt * k1[i] + (lpsi0[i] - l0 * psi[i]) * dxi
            nrm2 = 0.0
            for i in range(n):
                nrm2 += psi[i].real * psi[i].real + psi[i].imag * psi[i].imag
            if not np.isfinite(nrm2) or nrm2 <= 0.0:
                return k + 1, STATUS_NONFINITE, max_dev
            nrm = np.sqrt(nrm2)
            dev = abs(nrm - 1.0)
            if dev > max_dev:
                max_dev = dev
            inv = 1.0 / nrm
            for i in range(n):
                psi[i] *= inv
        if check:
            if _distance(states[0], states[1], projective) > stop_distance:
                return k + 1, STATUS_DISTANCE, max_dev
    return n_steps, STATUS_OK, max_dev


@njit(cache=True)
def pair_distance(a, b, projective):
    return _distance(a, b, projective)


@njit(cache=True, fastmath={"contract", "reassoc"})
def _dense_matvec(ur, ui, v, out):
    n = v.shape[0]
    for i in range(n):
        sr = 0.0
        si = 0.0
        for j in range(n):
            a = ur[i, j]
            b = ui[i, j]
            c = v[j].real
            d = v[j].imag
            sr += a * c - b * d
            si += a * d + b * c
        out[i] = complex(sr, si)


@njit(cache=True)
def apply_dense(ur, ui, states):
    """Multiply every row of ``states`` in place by the matrix ur + i ui."""
    tmp = np.empty(states.shape[1], dtype=np.complex128)
    for m in range(states.shape[0]):
        _dense_matvec(ur, ui, states[m], tmp)
        states[m, :] = tmp


@njit(cache=True)
def evolve_states_split(
    states,
    step0,
    n_steps,
    dt,
    omega,
    drive_amp,
    ur,
    ui,
    x_off,
    x_dat,
    l_off,
    l_dat,
    q_off,
    q_dat,
    noise,
    stop_distance,
    projective,
):
    """Split-step counterpart of :func:`evolve_states`.

    Rows hold ``U(dt/2) psi`` on entry and exit, where ``U(dt) = ur + i ui``
    is the exact propagator of the static Hamiltonian; each step applies the
    Euler-Maruyama update of the remaining terms (drive at the step midpoint,
    Lindblad drift, noise) followed by ``U(dt)``.  Distances and norms are
    unaffected by the common unitary offset.
    """
    m_rows, n = states.shape
    shared = noise.shape[0] == 1
    lpsi = np.empty(n, dtype=np.complex128)
    xpsi = np.empty(n, dtype=np.complex128)
    qpsi = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    max_dev = 0.0
    check = stop_distance > 0.0 and m_rows == 2
    for k in range(n_steps):
        fmid = drive_amp * np.cos(omega * (step0 + k + 0.5) * dt)
        for m in range(m_rows):
            psi = states[m]
            dxi = noise[0, k] if shared else noise[m, k]
            _dia_matvec(l_off, l_dat, l_dat, 0.0, psi, lpsi)
            _dia_matvec(q_off, q_dat, q_dat, 0.0, psi, qpsi)
            _dia_matvec(x_off, x_dat, x_dat, 0.0, psi, xpsi)
            lexp = 0j
            for i in range(n):
                lexp += np.conj(psi[i]) * lpsi[i]
            labs2 = lexp.real * lexp.real + lexp.imag * lexp.imag
            lc = np.conj(lexp)
            nrm2 = 0.0
            for i in range(n):
                v = (
                    psi[i]
                    + dt
                    * (
                        -1j * fmid * xpsi[i]
                        + lc * lpsi[i]
                        - 0.5 * qpsi[i]
                        - 0.5 * labs2 * psi[i]
                    )
                    + (lpsi[i] - lexp * psi[i]) * dxi
                )
                tmp[i] = v
                nrm2 += v.real * v.real + v.imag * v.imag
            if not np.isfinite(nrm2) or nrm2 <= 0.0:
                return k + 1, STATUS_NONFINITE, max_dev
            nrm = np.sqrt(nrm2)
            dev = abs(nrm - 1.0)
            if dev > max_dev:
                max_dev = dev
            inv = 1.0 / nrm
            for i in range(n):
                tmp[i] *= inv
            _dense_matvec(ur, ui, tmp, psi)
        if check:
            if _distance(states[0], states[1], projective) > stop_distance:
                return k + 1, STATUS_DISTANCE, max_dev
    return n_steps, STATUS_OK, max_dev
