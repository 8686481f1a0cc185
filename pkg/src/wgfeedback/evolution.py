"""Stroboscopic time-bin evolution of the emitter-waveguide state.

Each step couples the emitter to two bins at once: the fresh bin being
consumed (emission away from the mirror) and the bin that left l = tau/dt
steps ago and is now returning (emission toward the mirror, picking up the
round-trip phase). The chain keeps returning bins in chronological order, so
one step is: fetch the delayed bin next to the emitter, apply the three-body
gate, advance the emitter past the consumed bin, and walk the delayed bin
back to its slot. All entanglement growth happens inside that corridor.

Without feedback the mirror-side emission never returns; a fresh vacuum
ancilla takes the delayed bin's place each step and is left behind.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvariantError
from .mps import SYSTEM, MpsChain, bin_label, init_chain, install_fragment
from .pulses import DiscretizedPulse, n_photon_mps
from .tensor import TruncationPolicy, unitary_from_generator

log = logging.getLogger(__name__)

EXCITED_POP = np.diag([0.0, 1.0])

# A literal zero cutoff would keep round-off singular values, and repeated
# swaps then double the bond with pure noise directions. Discarding 1e-12 of
# relative Schmidt weight per split only ever removes that dust.
DEFAULT_POLICY = TruncationPolicy(cutoff=1e-12)

# A single step discarding more than this (summed Schmidt weight) usually
# means the bond cap is squeezing real dynamics; the trace gets a warning.
STEP_DISCARD_ALARM = 1e-6


@dataclass(frozen=True)
class PhysicsParams:
    """Emitter and waveguide constants; time in ps, rates in 1/ps.

    gamma is the coupling rate into one propagation direction; the free
    emitter decays at 2*gamma. phi is the round-trip phase at the carrier
    frequency. tau must sit on the bin grid.
    """

    gamma: float
    dt: float
    tau: float = 0.0
    phi: float = 0.0
    feedback: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise InvariantError(f"coupling rate must be nonnegative, got {self.gamma}")
        if self.dt <= 0:
            raise InvariantError(f"step must be positive, got {self.dt}")
        if self.feedback:
            if self.tau <= 0:
                raise InvariantError(f"feedback delay must be positive, got {self.tau}")
            steps = self.tau / self.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise InvariantError(
                    f"delay {self.tau} is not an integer multiple of the step {self.dt}"
                )
        if self.gamma * self.dt > 0.1:
            log.warning(
                "gamma*dt = %.3g; the stroboscopic map is first order in the step",
                self.gamma * self.dt,
            )

    @property
    def delay_bins(self) -> int:
        return int(round(self.tau / self.dt)) if self.feedback else 0


def build_step_unitary(gamma: float, dt: float, phi: float, p: int) -> np.ndarray:
    """One-step propagator on (delayed bin, emitter, fresh bin), left slowest.

    Generated by the emitter exchanging an excitation with the fresh bin and,
    with relative amplitude -e^{-i phi}, with the returning delayed bin. The
    generator is anti-Hermitian by construction, so the result is exactly
    unitary even with truncated bin spaces.
    """
    if p < 2:
        raise InvariantError(f"bin dimension must be at least 2, got {p}")
    sm = np.zeros((2, 2))
    sm[0, 1] = 1.0  # |g><e|
    lower = np.diag(np.sqrt(np.arange(1, p)), k=1)  # b[i, i+1]
    raise_new = np.kron(np.kron(np.eye(p), sm), lower.conj().T)
    raise_fb = np.kron(np.kron(lower.conj().T, sm), np.eye(p))
    x = -np.sqrt(gamma * dt) * (raise_new - np.exp(-1j * phi) * raise_fb)
    return unitary_from_generator(x - x.conj().T)


@dataclass
class TraceRecord:
    """Per-step observables of one run; index 0 is the initial state."""

    times: np.ndarray
    excitation: np.ndarray
    max_bond: np.ndarray
    norm_drift: np.ndarray      # 1 - <psi|psi>, grows only by truncation
    discarded_cum: np.ndarray   # running sum of discarded Schmidt weight
    warnings: list

    @property
    def final_excitation(self) -> float:
        return float(self.excitation[-1])


def _step_feedback(chain: MpsChain, gate, k: int, l: int,
                   policy: TruncationPolicy):
    ps = chain.position_of(SYSTEM)
    fb = bin_label(k - l)
    if chain.position_of(fb) != ps - l or chain.labels[ps + 1] != bin_label(k):
        raise InvariantError(f"chain order broken at step {k}")
    for pos in range(ps - l, ps - 1):
        chain.swap_sites(pos, policy, center_side="right")
    chain.apply_three_site(ps - 1, gate, policy, center_side="middle")
    chain.swap_sites(ps, policy, center_side="right")
    exc = chain.local_expectation(ps + 1, EXCITED_POP).real
    norm = chain.norm_sq()
    for pos in range(ps - 2, ps - l - 1, -1):
        chain.swap_sites(pos, policy, center_side="left")
    return exc, norm


def _step_open(chain: MpsChain, gate, k: int, p: int, policy: TruncationPolicy):
    ps = chain.position_of(SYSTEM)
    if chain.labels[ps + 1] != bin_label(k):
        raise InvariantError(f"chain order broken at step {k}")
    chain.insert_vacuum_site(ps, ("anc", k), p)
    chain.apply_three_site(ps, gate, policy, center_side="middle")
    chain.swap_sites(ps + 1, policy, center_side="right")
    exc = chain.local_expectation(ps + 2, EXCITED_POP).real
    return exc, chain.norm_sq()


def run_mps_simulation(
    params: PhysicsParams,
    n_steps: int,
    system_state: tuple = (1.0, 0.0),
    pulse: Optional[DiscretizedPulse] = None,
    n_photons: int = 0,
    policy: TruncationPolicy = DEFAULT_POLICY,
    p: Optional[int] = None,
    charged: Optional[bool] = None,
    audit: bool = False,
) -> TraceRecord:
    """Evolve for n_steps bins and record the emitter excitation trace.

    p (bin Fock levels) defaults to holding every excitation in one bin,
    which is exact: n_photons plus one if the emitter starts excited, plus
    the vacuum level. Charge-resolved bonds are switched on automatically
    when more than one excitation is present, which keeps the per-sector
    factorizations small; pass charged explicitly to override.
    """
    if n_steps < 1:
        raise InvariantError("need at least one step")
    if n_photons < 0:
        raise InvariantError(f"photon number must be nonnegative, got {n_photons}")
    if (pulse is None) != (n_photons == 0):
        raise InvariantError("a pulse needs n_photons > 0 and vice versa")
    l = params.delay_bins
    if params.feedback and l < 1:
        raise InvariantError("feedback needs at least one delay bin")
    if params.feedback and n_steps < l:
        raise InvariantError(f"trace shorter than the delay: {n_steps} < {l} steps")
    c_g, c_e = complex(system_state[0]), complex(system_state[1])
    total_exc = n_photons + (1 if abs(c_e) > 0 else 0)
    if p is None:
        p = max(2, total_exc + 1)
    if charged is None:
        charged = total_exc >= 2 and not (abs(c_g) > 0 and abs(c_e) > 0)
    if pulse is not None and pulse.last_bin >= n_steps:
        raise InvariantError("pulse extends past the simulated bins")

    chain = init_chain(n_steps, p, (c_g, c_e), prepad=l, charged=charged)
    if pulse is not None:
        fragment = n_photon_mps(pulse, n_photons, p)
        install_fragment(chain, bin_label(pulse.first_bin), fragment,
                         total_charge=n_photons)
    gate = build_step_unitary(params.gamma, params.dt, params.phi, p)

    times = params.dt * np.arange(n_steps + 1)
    excitation = np.empty(n_steps + 1)
    max_bond = np.empty(n_steps + 1, dtype=int)
    norm_drift = np.empty(n_steps + 1)
    discarded = np.empty(n_steps + 1)
    excitation[0] = abs(c_e) ** 2
    norm_drift[0] = 1.0 - chain.norm_sq()
    discarded[0] = 0.0
    warnings: list = []

    # Reported bond is the max over the interaction corridor: the cuts an
    # upcoming operation can still touch. Cuts behind the corridor never
    # change again, so including them would turn the series into a running
    # max and hide when the active entanglement relaxes.
    reach = l if params.feedback else 3
    max_bond[0] = chain.max_bond()

    alarmed = False
    capped = False
    for k in range(n_steps):
        before = chain.discarded_total
        if params.feedback:
            exc, norm = _step_feedback(chain, gate, k, l, policy)
        else:
            exc, norm = _step_open(chain, gate, k, p, policy)
        step_discard = chain.discarded_total - before
        excitation[k + 1] = exc
        norm_drift[k + 1] = 1.0 - norm
        discarded[k + 1] = chain.discarded_total
        ps = chain.position_of(SYSTEM)
        corridor = chain.tensors[max(0, ps - reach) : ps + 3]
        max_bond[k + 1] = max(t.shape[0] for t in corridor)
        if audit:
            chain.check_gauge(1e-8)
            chain.check_charges(1e-24)
        if not alarmed and step_discard > STEP_DISCARD_ALARM:
            warnings.append(
                f"step {k}: discarded weight {step_discard:.3e} in one step; "
                "bond cap or cutoff is cutting into the state"
            )
            alarmed = True
        if not capped and max_bond[k + 1] >= policy.max_bond:
            warnings.append(f"step {k}: bond dimension reached the cap {policy.max_bond}")
            capped = True
    for w in warnings:
        log.warning("%s", w)
    return TraceRecord(times, excitation, max_bond, norm_drift, discarded, warnings)
