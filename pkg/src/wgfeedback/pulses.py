"""Pulse envelopes, their time-bin discretization, and n-photon input states.

An envelope is a callable f(t) with unit L2 norm. Discretization samples it
at the center of every bin, w_k = f((k + 1/2) dt) sqrt(dt), and renormalizes
the weight vector exactly, so the photon-number sector is represented
without a quadrature error in the norm.

The n-photon state over the occupied bins,
(sum_k w_k b_k^dag)^n / sqrt(n!) acting on the vacuum, has an exact MPS with
bond index equal to the number of photons already placed in earlier bins:
each site tensor carries w_k^i sqrt(binom(q + i, i)) for the move q -> q + i.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from .errors import InvariantError

GAUSS_WINDOW_SIGMAS = 5.0


@dataclass(frozen=True)
class RectangularPulse:
    """Flat-top envelope of unit norm on [t_start, t_start + duration)."""

    t_start: float
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise InvariantError(f"pulse duration must be positive, got {self.duration}")
        if self.t_start < 0:
            raise InvariantError(f"pulse start must be nonnegative, got {self.t_start}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.t_start) & (t < self.t_start + self.duration)
        return np.where(inside, 1.0 / np.sqrt(self.duration), 0.0).astype(complex)


@dataclass(frozen=True)
class GaussianPulse:
    """Gaussian envelope f(t) ~ exp(-(t - center)^2 / (2 sigma^2)).

    sigma is the standard deviation of the amplitude, so |f(t)|^2 is sigma /
    sqrt(2) wide. The envelope is clipped to center +- 5 sigma, which drops
    2e-12 of the norm before the discretization renormalizes. Without an
    explicit center the pulse is placed at 5 sigma so it effectively starts
    at t = 0.
    """

    sigma: float
    center: Optional[float] = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvariantError(f"pulse width must be positive, got {self.sigma}")

    @property
    def effective_center(self) -> float:
        return GAUSS_WINDOW_SIGMAS * self.sigma if self.center is None else self.center

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        c = self.effective_center
        amp = (np.pi * self.sigma**2) ** -0.25 * np.exp(
            -((t - c) ** 2) / (2 * self.sigma**2)
        )
        window = np.abs(t - c) <= GAUSS_WINDOW_SIGMAS * self.sigma
        return np.where(window, amp, 0.0).astype(complex)


@dataclass(frozen=True)
class DiscretizedPulse:
    """Bin weights of an envelope; sum |w_k|^2 == 1 by construction."""

    first_bin: int
    weights: np.ndarray

    @property
    def last_bin(self) -> int:
        return self.first_bin + len(self.weights) - 1

    @property
    def n_bins(self) -> int:
        return len(self.weights)


def discretize_pulse(envelope, dt: float, n_bins: int) -> DiscretizedPulse:
    """Sample an envelope onto the bin grid and renormalize exactly.

    Bins are sampled at their centers; an edge sample would shift the whole
    drive by half a bin against a continuum description of the same pulse.
    """
    if dt <= 0:
        raise InvariantError(f"bin width must be positive, got {dt}")
    if n_bins < 1:
        raise InvariantError("need at least one bin")
    t = (np.arange(n_bins) + 0.5) * dt
    w = np.asarray(envelope(t), dtype=complex) * np.sqrt(dt)
    support = np.flatnonzero(np.abs(w) > 0)
    if len(support) == 0:
        raise InvariantError("envelope has no support on the bin grid")
    first, last = int(support[0]), int(support[-1])
    w = w[first : last + 1]
    return DiscretizedPulse(first, w / np.linalg.norm(w))


def n_photon_mps(pulse: DiscretizedPulse, n: int, p: int) -> list:
    """Site tensors of the n-photon wavepacket over the pulse's bins.

    Bond index = photons already emitted into earlier bins, trimmed at both
    ends to the reachable range, so the bond dimension never exceeds n + 1.
    Local dimension p must allow n photons in one bin.
    """
    if n < 0:
        raise InvariantError(f"photon number must be nonnegative, got {n}")
    if p < n + 1:
        raise InvariantError(f"bin dimension {p} cannot hold {n} photons")
    w = pulse.weights
    k_bins = len(w)

    def bond_range(b):
        lo = max(0, n - (k_bins - b) * (p - 1))
        hi = min(n, b * (p - 1))
        return lo, hi

    tensors = []
    for k in range(k_bins):
        lo_l, hi_l = bond_range(k)
        lo_r, hi_r = bond_range(k + 1)
        t = np.zeros((hi_l - lo_l + 1, p, hi_r - lo_r + 1), dtype=complex)
        for q in range(lo_l, hi_l + 1):
            for i in range(0, min(p - 1, hi_r - q) + 1):
                if q + i < lo_r:
                    continue
                t[q - lo_l, i, q + i - lo_r] = w[k] ** i * np.sqrt(comb(q + i, i))
        tensors.append(t)
    return tensors
