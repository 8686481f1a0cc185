"""Heisenberg-picture integration of the driven emitter with delayed feedback.

For an n-photon drive the relevant operator algebra closes on matrices over
the basis |emitter state, photons left in the pulse register>, of dimension
2(n + 1). Two matrices are evolved: the excitation operator E and the
lowering operator S, coupled to their own values one round trip earlier.
The delay term is integrated with fixed-step RK4, all four stages reading
the same stored snapshot from one delay back; before t = tau the feedback
terms are literally absent, not merely small.

The drive enters through a scalar kernel g(t) built from the pulse envelope:
with feedback the emitter sees the pulse twice, directly and reflected with
the round-trip phase, so the kernel is the corresponding two-term
combination; without a mirror it is the envelope itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvariantError, NumericalError
from .evolution import PhysicsParams

NAN_CHECK_STRIDE = 512


def drive_kernel(envelope: Callable, t, tau: float, phi: float):
    """Effective drive seen by the emitter, envelope taken symmetrically.

    g(t) = f(t - tau/2) e^{+i phi/2} - f(t + tau/2) e^{-i phi/2}; the caller
    chooses the envelope's time origin so that the direct arrival lands at
    the pulse time and the reflected copy one delay later.
    """
    t = np.asarray(t, dtype=float)
    return envelope(t - tau / 2) * np.exp(0.5j * phi) - envelope(t + tau / 2) * np.exp(
        -0.5j * phi
    )


def register_lowering(n_photons: int) -> np.ndarray:
    """Photon-number lowering on the pulse register, identity on the emitter."""
    b = np.diag(np.sqrt(np.arange(1.0, n_photons + 1)), k=1)
    return np.kron(np.eye(2), b)


def initial_matrices(n_photons: int):
    """E and S at t = 0: excitation projector and lowering on the emitter."""
    proj_e = np.diag([0.0, 1.0])
    sm = np.zeros((2, 2))
    sm[0, 1] = 1.0
    eye_reg = np.eye(n_photons + 1)
    return np.kron(proj_e, eye_reg).astype(complex), np.kron(sm, eye_reg).astype(complex)


def rhs_matrices(e_mat, s_mat, g, s_delayed, gamma: float, phi: float, lower):
    """Time derivatives of (E, S); s_delayed is None while feedback is off."""
    lt_s = lower.conj().T @ s_mat
    de = -2.0 * gamma * e_mat - np.sqrt(gamma) * (
        np.conj(g) * lt_s + g * lt_s.conj().T
    )
    ds = -gamma * s_mat - np.sqrt(gamma) * g * (
        lower - 2.0 * (e_mat @ lower)
    )
    if s_delayed is not None:
        de = de + gamma * (
            np.exp(-1j * phi) * (s_delayed.conj().T @ s_mat)
            + np.exp(1j * phi) * (s_mat.conj().T @ s_delayed)
        )
        ds = ds + gamma * np.exp(1j * phi) * (s_delayed - 2.0 * (e_mat @ s_delayed))
    return de, ds


class HistoryBuffer:
    """Ring holding the most recent grid snapshots of (E, S)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvariantError(f"history needs positive capacity, got {capacity}")
        self.capacity = capacity
        self._e = [None] * capacity
        self._s = [None] * capacity
        self.count = 0

    def append(self, e_mat, s_mat):
        slot = self.count % self.capacity
        self._e[slot] = e_mat
        self._s[slot] = s_mat
        self.count += 1

    def get(self, index: int):
        """Snapshot by absolute grid index; only the last `capacity` remain."""
        if not (self.count - self.capacity <= index < self.count):
            raise InvariantError(
                f"snapshot {index} outside retained window "
                f"[{self.count - self.capacity}, {self.count})"
            )
        slot = index % self.capacity
        return self._e[slot], self._s[slot]


@dataclass
class HeisenbergTrace:
    """Excitation trace plus a quality figure for the integration."""

    times: np.ndarray
    excitation: np.ndarray
    hermiticity_dev: float


def run_heisenberg_simulation(
    params: PhysicsParams,
    n_steps: int,
    system_state: tuple = (1.0, 0.0),
    envelope: Optional[Callable] = None,
    n_photons: int = 0,
) -> HeisenbergTrace:
    """Integrate n_steps of size params.dt and record the emitter excitation.

    The same parameter object as the time-bin engine is reused; here dt is
    the integrator step and must divide the delay. A missing envelope means
    no drive, which leaves the photon register inert.
    """
    if n_steps < 1:
        raise InvariantError("need at least one step")
    if n_photons < 0:
        raise InvariantError(f"photon number must be nonnegative, got {n_photons}")
    if envelope is None and n_photons > 0:
        raise InvariantError("a photon number needs an envelope")
    h = params.dt
    l = params.delay_bins
    c_g, c_e = complex(system_state[0]), complex(system_state[1])
    norm = abs(c_g) ** 2 + abs(c_e) ** 2
    if abs(norm - 1.0) > 1e-12:
        raise InvariantError(f"system state not normalized: |c|^2 = {norm}")

    times = h * np.arange(n_steps + 1)
    if envelope is None:
        g_full = np.zeros(n_steps + 1, dtype=complex)
        g_mid = np.zeros(n_steps, dtype=complex)
    elif params.feedback:
        # Shift the envelope's origin so the direct arrival keeps the pulse's
        # own timing and the mirror copy lands one delay later.
        shifted = lambda u: envelope(u - params.tau / 2)
        g_full = drive_kernel(shifted, times, params.tau, params.phi)
        g_mid = drive_kernel(shifted, times[:-1] + h / 2, params.tau, params.phi)
    else:
        g_full = np.asarray(envelope(times), dtype=complex)
        g_mid = np.asarray(envelope(times[:-1] + h / 2), dtype=complex)

    lower = register_lowering(n_photons)
    e_mat, s_mat = initial_matrices(n_photons)
    dim = 2 * (n_photons + 1)
    weight = np.zeros(dim, dtype=complex)
    weight[0 * (n_photons + 1) + n_photons] = c_g
    weight[1 * (n_photons + 1) + n_photons] = c_e

    excitation = np.empty(n_steps + 1)
    excitation[0] = float(np.real(weight.conj() @ e_mat @ weight))
    history = HistoryBuffer(l + 1) if params.feedback else None
    if history is not None:
        history.append(e_mat, s_mat)

    herm_dev = 0.0
    gamma, phi = params.gamma, params.phi
    for j in range(n_steps):
        if params.feedback and j >= l:
            _, s_d = history.get(j - l)
        else:
            s_d = None
        g0, gm, g1 = g_full[j], g_mid[j], g_full[j + 1]
        k1e, k1s = rhs_matrices(e_mat, s_mat, g0, s_d, gamma, phi, lower)
        k2e, k2s = rhs_matrices(
            e_mat + 0.5 * h * k1e, s_mat + 0.5 * h * k1s, gm, s_d, gamma, phi, lower
        )
        k3e, k3s = rhs_matrices(
            e_mat + 0.5 * h * k2e, s_mat + 0.5 * h * k2s, gm, s_d, gamma, phi, lower
        )
        k4e, k4s = rhs_matrices(
            e_mat + h * k3e, s_mat + h * k3s, g1, s_d, gamma, phi, lower
        )
        e_mat = e_mat + (h / 6.0) * (k1e + 2 * k2e + 2 * k3e + k4e)
        s_mat = s_mat + (h / 6.0) * (k1s + 2 * k2s + 2 * k3s + k4s)
        if history is not None:
            history.append(e_mat, s_mat)
        excitation[j + 1] = float(np.real(weight.conj() @ e_mat @ weight))
        herm_dev = max(herm_dev, float(np.abs(e_mat - e_mat.conj().T).max()))
        if (j + 1) % NAN_CHECK_STRIDE == 0 and not np.isfinite(e_mat).all():
            raise NumericalError(f"integration lost finiteness near t = {times[j + 1]:.4g}")
    if not (np.isfinite(e_mat).all() and np.isfinite(s_mat).all()):
        raise NumericalError("integration lost finiteness at the final step")
    return HeisenbergTrace(times, excitation, herm_dev)
