"""Config-driven runs: parsing, engine dispatch, steady-state readout, sweeps.

Configs are flat JSON documents. The feedback phase enters as phi_over_2pi
so resonant configs (phi = 2*pi*m) survive the text round trip exactly.
Output files are deterministic: same config, same bytes.
"""

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import __version__
from .errors import ScenarioError
from .evolution import PhysicsParams, TraceRecord, run_mps_simulation
from .heisenberg import HeisenbergTrace, run_heisenberg_simulation
from .pulses import (
    GAUSS_WINDOW_SIGMAS,
    GaussianPulse,
    RectangularPulse,
    discretize_pulse,
)
from .tensor import TruncationPolicy

SCHEMA_VERSION = 1
METHODS = ("mps", "heisenberg", "both")

DEFAULT_T_MAX = 100.0
DEFAULT_DT = 0.05
DEFAULT_H = 0.01
DEFAULT_CUTOFF = 1e-8
DEFAULT_MAX_BOND = 512

# Steady-state window rule: average over the trailing stretch of this length
# (or one delay, if longer) and call it converged when the window is flat to
# 5% or the value is zero for practical purposes.
STEADY_WINDOW_MIN = 10.0
STEADY_REL_BAND = 0.05
STEADY_ZERO_LEVEL = 1e-4
SETTLE_DELAYS = 5.0

GRID_RTOL = 1e-9


@dataclass(frozen=True)
class Scenario:
    """A validated run description with every default filled in."""

    method: str
    gamma: float
    tau: Optional[float]
    phi_over_2pi: float
    t_max: float
    initial: tuple
    initial_label: str
    pulse: Optional[object]
    n_photons: int
    dt: float
    h: float
    cutoff: float
    max_bond: int
    p: Optional[int]
    trace_name: str
    summary_name: str
    config_sha: str
    warnings: tuple = ()

    @property
    def feedback(self) -> bool:
        return self.tau is not None

    @property
    def phi(self) -> float:
        return 2.0 * np.pi * self.phi_over_2pi


@dataclass(frozen=True)
class SteadyStateReport:
    value: float
    window: tuple
    converged: bool
    residual: float

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "window": [self.window[0], self.window[1]],
            "converged": self.converged,
            "residual": self.residual,
        }


def _require(cond, msg: str):
    if not cond:
        raise ScenarioError(msg)


def _no_unknown_keys(d: dict, where: str, known):
    unknown = sorted(set(d) - set(known))
    _require(not unknown, f"unknown {where} key(s): {', '.join(unknown)}")


def _real(d: dict, key: str, where: str, default=None):
    if key not in d or d[key] is None:
        return default
    v = d[key]
    _require(isinstance(v, (int, float)) and not isinstance(v, bool),
             f"{where}{key} must be a number, got {v!r}")
    return float(v)


def _whole(x: float, name: str) -> int:
    n = int(round(x))
    _require(n >= 1 and abs(x - n) <= GRID_RTOL * max(1.0, abs(x)),
             f"{name} = {x} is not a whole number of steps")
    return n


def _parse_initial(spec, warnings: list):
    if spec == "ground":
        return (1.0, 0.0), "ground"
    if spec == "excited":
        return (0.0, 1.0), "excited"
    if isinstance(spec, list) and len(spec) == 2 and all(
        isinstance(c, (int, float)) and not isinstance(c, bool) for c in spec
    ):
        c_g, c_e = float(spec[0]), float(spec[1])
        norm = np.hypot(c_g, c_e)
        _require(abs(norm - 1.0) < 1e-9,
                 f"initial amplitudes must be normalized, |c|^2 = {norm**2}")
        return (c_g / norm, c_e / norm), "superposition"
    raise ScenarioError(
        f"initial must be 'ground', 'excited' or [c_g, c_e], got {spec!r}"
    )


def _parse_pulse(d: dict, t_max: float):
    _require(isinstance(d, dict), "pulse must be an object")
    shape = d.get("shape")
    photons = d.get("photons")
    _require(isinstance(photons, int) and not isinstance(photons, bool)
             and photons >= 1,
             f"pulse.photons must be a positive integer, got {photons!r}")
    if shape == "rectangular":
        _no_unknown_keys(d, "pulse", ("shape", "photons", "t_start", "duration"))
        t_start = _real(d, "t_start", "pulse.", default=0.0)
        duration = _real(d, "duration", "pulse.")
        _require(duration is not None, "pulse.duration is required")
        pulse = RectangularPulse(t_start=t_start, duration=duration)
        end = t_start + duration
    elif shape == "gaussian":
        _no_unknown_keys(d, "pulse", ("shape", "photons", "sigma", "center"))
        sigma = _real(d, "sigma", "pulse.")
        _require(sigma is not None, "pulse.sigma is required")
        pulse = GaussianPulse(sigma=sigma, center=_real(d, "center", "pulse."))
        end = pulse.effective_center + GAUSS_WINDOW_SIGMAS * sigma
        _require(pulse.effective_center - GAUSS_WINDOW_SIGMAS * sigma >= -GRID_RTOL,
                 "pulse.center puts the envelope before t = 0")
    else:
        raise ScenarioError(
            f"pulse.shape must be 'rectangular' or 'gaussian', got {shape!r}"
        )
    _require(end <= t_max + GRID_RTOL,
             f"pulse ends at t = {end} past t_max = {t_max}")
    return pulse, photons


def pulse_end_time(pulse) -> float:
    """Last instant with support; 0 for no pulse."""
    if pulse is None:
        return 0.0
    if isinstance(pulse, RectangularPulse):
        return pulse.t_start + pulse.duration
    return pulse.effective_center + GAUSS_WINDOW_SIGMAS * pulse.sigma


def parse_scenario(text: str) -> Scenario:
    """Validate a JSON config and fill in defaults.

    Unknown keys are rejected rather than ignored so a typo cannot silently
    fall back to a default.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"config is not valid JSON: {exc}") from None
    _require(isinstance(raw, dict), "config must be a JSON object")
    _no_unknown_keys(raw, "config", (
        "schema", "method", "gamma", "tau", "phi_over_2pi", "t_max",
        "initial", "pulse", "numerics", "outputs",
    ))
    schema = raw.get("schema", SCHEMA_VERSION)
    _require(schema == SCHEMA_VERSION,
             f"unsupported schema {schema!r}, this build reads {SCHEMA_VERSION}")
    method = raw.get("method")
    _require(method in METHODS,
             f"method must be one of {', '.join(METHODS)}, got {method!r}")

    gamma = _real(raw, "gamma", "")
    _require(gamma is not None and gamma > 0,
             f"gamma must be a positive rate, got {raw.get('gamma')!r}")
    tau = _real(raw, "tau", "")
    _require(tau is None or tau > 0, f"tau must be positive, got {tau}")
    phi_over_2pi = _real(raw, "phi_over_2pi", "", default=0.0)
    t_max = _real(raw, "t_max", "", default=DEFAULT_T_MAX)
    _require(t_max > 0, f"t_max must be positive, got {t_max}")

    warnings: list = []
    _require("initial" in raw, "initial is required")
    initial, initial_label = _parse_initial(raw["initial"], warnings)

    pulse, n_photons = (None, 0)
    if raw.get("pulse") is not None:
        pulse, n_photons = _parse_pulse(raw["pulse"], t_max)
        if initial_label != "ground":
            warnings.append(
                "pulse driving a non-ground emitter; "
                "trapping numbers assume a ground start"
            )

    numerics = raw.get("numerics") or {}
    _require(isinstance(numerics, dict), "numerics must be an object")
    _no_unknown_keys(numerics, "numerics", ("dt", "h", "cutoff", "max_bond", "p"))
    dt = _real(numerics, "dt", "numerics.", default=DEFAULT_DT)
    h = _real(numerics, "h", "numerics.", default=DEFAULT_H)
    _require(dt > 0, f"numerics.dt must be positive, got {dt}")
    _require(h > 0, f"numerics.h must be positive, got {h}")
    cutoff = _real(numerics, "cutoff", "numerics.", default=DEFAULT_CUTOFF)
    _require(cutoff >= 0, f"numerics.cutoff must be nonnegative, got {cutoff}")
    max_bond = numerics.get("max_bond", DEFAULT_MAX_BOND)
    _require(isinstance(max_bond, int) and not isinstance(max_bond, bool)
             and max_bond >= 1,
             f"numerics.max_bond must be a positive integer, got {max_bond!r}")
    p = numerics.get("p")
    _require(p is None or (isinstance(p, int) and not isinstance(p, bool) and p >= 2),
             f"numerics.p must be an integer >= 2, got {p!r}")

    if tau is not None:
        if method in ("mps", "both"):
            _whole(tau / dt, f"delay over bin width tau/dt = {tau}/{dt}")
        if method in ("heisenberg", "both"):
            _whole(tau / h, f"delay over integrator step tau/h = {tau}/{h}")
    if method == "both":
        _whole(dt / h, f"bin width over integrator step dt/h = {dt}/{h}")

    outputs = raw.get("outputs") or {}
    _require(isinstance(outputs, dict), "outputs must be an object")
    _no_unknown_keys(outputs, "outputs", ("trace", "summary"))
    trace_name = outputs.get("trace", "trace.csv")
    summary_name = outputs.get("summary", "summary.json")
    for name in (trace_name, summary_name):
        _require(isinstance(name, str) and name, f"output name invalid: {name!r}")

    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    sha = hashlib.sha256(canonical.encode()).hexdigest()
    return Scenario(
        method=method, gamma=gamma, tau=tau, phi_over_2pi=phi_over_2pi,
        t_max=t_max, initial=initial, initial_label=initial_label,
        pulse=pulse, n_photons=n_photons, dt=dt, h=h, cutoff=cutoff,
        max_bond=max_bond, p=p, trace_name=trace_name,
        summary_name=summary_name, config_sha=sha, warnings=tuple(warnings),
    )


def parse_scenario_file(path: str) -> Scenario:
    with open(path, encoding="utf-8") as f:
        return parse_scenario(f.read())


def extract_steady_state(trace, tau: Optional[float],
                         pulse_end: float = 0.0) -> SteadyStateReport:
    """Average the tail of an excitation trace.

    The window is the trailing max(tau, 10 ps) of the trace; the trace must
    extend at least 5 delays past the end of the drive and must contain the
    whole window after it, otherwise the readout would sample the transient.
    """
    times = np.asarray(trace.times, dtype=float)
    exc = np.asarray(trace.excitation, dtype=float)
    t_end = times[-1]
    tau_eff = 0.0 if tau is None else tau
    window = max(tau_eff, STEADY_WINDOW_MIN)
    settled = max(SETTLE_DELAYS * tau_eff, window)
    if t_end - pulse_end < settled - GRID_RTOL:
        raise ScenarioError(
            f"trace ends {t_end - pulse_end:g} ps after the drive; "
            f"steady-state readout needs {settled:g} ps"
        )
    mask = times >= t_end - window - GRID_RTOL * max(1.0, t_end)
    value = float(np.mean(exc[mask]))
    residual = float(np.max(np.abs(exc[mask] - value)))
    converged = residual < STEADY_REL_BAND * value or value < STEADY_ZERO_LEVEL
    t_a = float(times[mask][0])
    return SteadyStateReport(value=value, window=(t_a, float(t_end)),
                             converged=bool(converged), residual=residual)


def _n_steps(t_max: float, step: float) -> int:
    return max(1, int(np.ceil(t_max / step - GRID_RTOL)))


def _run_mps(s: Scenario) -> TraceRecord:
    params = PhysicsParams(gamma=s.gamma, dt=s.dt, tau=s.tau or 0.0,
                           phi=s.phi, feedback=s.feedback)
    n_steps = _n_steps(s.t_max, s.dt)
    pulse = None
    if s.pulse is not None:
        pulse = discretize_pulse(s.pulse, s.dt, n_steps)
    policy = TruncationPolicy(cutoff=s.cutoff, max_bond=s.max_bond)
    return run_mps_simulation(params, n_steps, system_state=s.initial,
                              pulse=pulse, n_photons=s.n_photons,
                              policy=policy, p=s.p)


def _run_heisenberg(s: Scenario) -> HeisenbergTrace:
    params = PhysicsParams(gamma=s.gamma, dt=s.h, tau=s.tau or 0.0,
                           phi=s.phi, feedback=s.feedback)
    if s.method == "both":
        n_steps = _n_steps(s.t_max, s.dt) * _whole(s.dt / s.h, "dt/h")
    else:
        n_steps = _n_steps(s.t_max, s.h)
    return run_heisenberg_simulation(params, n_steps, system_state=s.initial,
                                     envelope=s.pulse, n_photons=s.n_photons)


def _fmt(x) -> str:
    # repr of a builtin float is the shortest digits that round-trip, which
    # keeps the files byte-stable across runs
    return repr(float(x))


def _write_trace(path: str, mps: Optional[TraceRecord],
                 hb: Optional[HeisenbergTrace], stride: int = 1):
    lines = []
    if mps is not None and hb is not None:
        lines.append("t_ps,excitation,max_bond,norm_drift,"
                     "excitation_heisenberg,abs_diff\n")
        for k in range(len(mps.times)):
            e_hb = hb.excitation[k * stride]
            lines.append(
                f"{_fmt(mps.times[k])},{_fmt(mps.excitation[k])},"
                f"{int(mps.max_bond[k])},{_fmt(mps.norm_drift[k])},"
                f"{_fmt(e_hb)},{_fmt(abs(mps.excitation[k] - e_hb))}\n"
            )
    elif mps is not None:
        lines.append("t_ps,excitation,max_bond,norm_drift\n")
        for k in range(len(mps.times)):
            lines.append(
                f"{_fmt(mps.times[k])},{_fmt(mps.excitation[k])},"
                f"{int(mps.max_bond[k])},{_fmt(mps.norm_drift[k])}\n"
            )
    else:
        lines.append("t_ps,excitation,max_bond,norm_drift\n")
        for k in range(len(hb.times)):
            lines.append(f"{_fmt(hb.times[k])},{_fmt(hb.excitation[k])},,\n")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.writelines(lines)


def run_scenario(s: Scenario, out_dir: Optional[str] = None) -> dict:
    """Run the selected engine(s) and return the summary.

    With an out_dir the trace CSV and summary JSON are written there; the
    summary always carries the steady-state report per engine and, for
    method 'both', the largest pointwise difference between the two traces.
    """
    mps = _run_mps(s) if s.method in ("mps", "both") else None
    hb = _run_heisenberg(s) if s.method in ("heisenberg", "both") else None
    p_end = pulse_end_time(s.pulse)

    warnings = list(s.warnings)
    engines: dict = {}
    if mps is not None:
        steady = extract_steady_state(mps, s.tau, p_end)
        peak = int(np.argmax(mps.max_bond))
        engines["mps"] = {
            "steady_state": steady.as_dict(),
            "final_excitation": float(mps.excitation[-1]),
            "norm_drift_final": float(mps.norm_drift[-1]),
            "bond_peak": {"value": int(mps.max_bond[peak]),
                          "t_ps": float(mps.times[peak])},
        }
        warnings += [f"mps: {w}" for w in mps.warnings]
    if hb is not None:
        steady = extract_steady_state(hb, s.tau, p_end)
        engines["heisenberg"] = {
            "steady_state": steady.as_dict(),
            "final_excitation": float(hb.excitation[-1]),
            "hermiticity_dev": float(hb.hermiticity_dev),
        }

    summary = {
        "schema": SCHEMA_VERSION,
        "version": __version__,
        "config_sha256": s.config_sha,
        "method": s.method,
        "physics": {"gamma": s.gamma, "tau": s.tau,
                    "phi_over_2pi": s.phi_over_2pi, "t_max": s.t_max},
        "initial": s.initial_label if s.initial_label != "superposition"
        else [s.initial[0], s.initial[1]],
        "pulse": _pulse_echo(s),
        "numerics": {"dt": s.dt, "h": s.h, "cutoff": s.cutoff,
                     "max_bond": s.max_bond, "p": s.p},
        "engines": engines,
        "warnings": warnings,
    }
    stride = 1
    if s.method == "both":
        stride = _whole(s.dt / s.h, "dt/h")
        diffs = np.abs(mps.excitation - hb.excitation[::stride][: len(mps.excitation)])
        summary["max_abs_diff"] = float(np.max(diffs))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_trace(os.path.join(out_dir, s.trace_name), mps, hb, stride)
        with open(os.path.join(out_dir, s.summary_name), "w",
                  encoding="utf-8", newline="") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
    return summary


def _pulse_echo(s: Scenario):
    if s.pulse is None:
        return None
    if isinstance(s.pulse, RectangularPulse):
        return {"shape": "rectangular", "t_start": s.pulse.t_start,
                "duration": s.pulse.duration, "photons": s.n_photons}
    return {"shape": "gaussian", "sigma": s.pulse.sigma,
            "center": s.pulse.effective_center, "photons": s.n_photons}


# ---------------------------------------------------------------------------
# sweeps

def _sweep_cell(payload):
    index, cell, cell_dir = payload
    row = {"gamma_tau": cell.gamma * (cell.tau or 0.0), "n": cell.n_photons,
           "gamma": cell.gamma, "tau": cell.tau,
           "value_mps": None, "converged_mps": None,
           "value_heisenberg": None, "converged_heisenberg": None, "error": ""}
    try:
        summary = run_scenario(cell, cell_dir)
        for engine, short in (("mps", "mps"), ("heisenberg", "heisenberg")):
            if engine in summary["engines"]:
                report = summary["engines"][engine]["steady_state"]
                row[f"value_{short}"] = report["value"]
                row[f"converged_{short}"] = report["converged"]
    except Exception as exc:  # recorded per cell, the sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}"
    return index, row


def sweep(base: Scenario, gamma_taus, photon_counts,
          out_dir: Optional[str] = None, workers: Optional[int] = None) -> list:
    """Steady-state table over a Gamma*tau grid and a photon-number list.

    The delay stays fixed by the base scenario; each cell re-derives the
    emitter rate gamma = (Gamma*tau)/tau. Scanning gamma rather than tau
    keeps the pulse envelope and the feedback geometry on the same absolute
    timescale across the grid, which is what makes the trapped values
    comparable cell to cell. n = 0 means the excited emitter with no pulse,
    n >= 1 reuses the base pulse shape with that photon number. Rows come
    back in grid order regardless of worker scheduling.
    """
    _require(base.tau is not None, "a sweep needs a feedback scenario as base")
    gamma_taus = [float(g) for g in gamma_taus]
    _require(len(gamma_taus) > 0 and all(g > 0 for g in gamma_taus),
             "gamma_tau values must be positive")
    photon_counts = [int(n) for n in photon_counts]
    _require(all(n >= 0 for n in photon_counts),
             "photon numbers must be nonnegative")
    _require(base.pulse is not None or all(n == 0 for n in photon_counts),
             "photon numbers above zero need a pulse in the base config")

    payloads = []
    for i, (gt, n) in enumerate((gt, n) for gt in gamma_taus
                                for n in photon_counts):
        changes = {
            "gamma": gt / base.tau,
            "warnings": (),
        }
        if n == 0:
            changes.update(pulse=None, n_photons=0,
                           initial=(0.0, 1.0), initial_label="excited")
        else:
            changes.update(n_photons=n)
        cell = replace(base, **changes)
        cell_dir = None
        if out_dir is not None:
            cell_dir = os.path.join(out_dir, f"cell_gt{gt:g}_n{n}")
        payloads.append((i, cell, cell_dir))

    if workers is None:
        workers = int(os.environ.get("SIM_WORKERS", "0")) or (os.cpu_count() or 1)
    if workers <= 1 or len(payloads) <= 1:
        results = [_sweep_cell(pl) for pl in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, payloads))
    return [row for _, row in sorted(results, key=lambda r: r[0])]


def write_sweep_table(path: str, rows: list):
    cols = ("gamma_tau", "n", "gamma", "tau", "value_mps", "converged_mps",
            "value_heisenberg", "converged_heisenberg", "error")
    lines = [",".join(cols) + "\n"]
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            if v is None:
                cells.append("")
            elif isinstance(v, bool):
                cells.append("true" if v else "false")
            elif isinstance(v, float):
                cells.append(_fmt(v))
            else:
                text = str(v)
                if "," in text or '"' in text or "\n" in text:
                    text = '"' + text.replace('"', '""') + '"'
                cells.append(text)
        lines.append(",".join(cells) + "\n")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.writelines(lines)
