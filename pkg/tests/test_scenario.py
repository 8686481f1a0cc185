"""Config layer: parsing, steady-state readout, file output, sweeps, CLI."""

import json
import os
from types import SimpleNamespace

import numpy as np
import pytest

from wgfeedback.cli import main
from wgfeedback.errors import ScenarioError
from wgfeedback.scenario import (
    extract_steady_state,
    parse_scenario,
    run_scenario,
    sweep,
    write_sweep_table,
)

MINIMAL = {"method": "mps", "gamma": 4, "tau": 2, "phi_over_2pi": 1,
           "initial": "excited"}


def _cfg(**overrides):
    cfg = dict(MINIMAL)
    cfg.update(overrides)
    return json.dumps(cfg)


def test_minimal_config_fills_defaults():
    s = parse_scenario(_cfg())
    assert s.method == "mps"
    assert s.t_max == 100.0
    assert (s.dt, s.h) == (0.05, 0.01)
    assert (s.cutoff, s.max_bond, s.p) == (1e-8, 512, None)
    assert s.pulse is None and s.n_photons == 0
    assert s.initial == (0.0, 1.0)
    assert s.feedback and abs(s.phi - 2 * np.pi) < 1e-15
    assert (s.trace_name, s.summary_name) == ("trace.csv", "summary.json")
    assert s.warnings == ()


def test_pulse_config_echoes_fields():
    s = parse_scenario(_cfg(
        initial="ground",
        pulse={"shape": "rectangular", "t_start": 0.1, "duration": 2.4,
               "photons": 3},
    ))
    assert s.n_photons == 3
    assert s.pulse.t_start == 0.1 and s.pulse.duration == 2.4
    assert s.warnings == ()
    g = parse_scenario(_cfg(
        initial="ground",
        pulse={"shape": "gaussian", "sigma": 7, "photons": 2},
        t_max=200,
    ))
    assert g.pulse.sigma == 7 and g.pulse.effective_center == 35.0


def test_off_grid_delay_is_rejected():
    with pytest.raises(ScenarioError, match="whole number"):
        parse_scenario(_cfg(numerics={"dt": 0.3}))


def test_both_method_needs_commensurate_steps():
    with pytest.raises(ScenarioError, match="dt/h"):
        parse_scenario(_cfg(method="both", numerics={"dt": 0.05, "h": 0.02}))
    s = parse_scenario(_cfg(method="both", numerics={"dt": 0.05, "h": 0.025}))
    assert s.method == "both"


def test_unknown_keys_are_named():
    with pytest.raises(ScenarioError, match="gama"):
        parse_scenario(_cfg(gama=3))
    with pytest.raises(ScenarioError, match="pulse.*sigm"):
        parse_scenario(_cfg(pulse={"shape": "gaussian", "sigm": 7, "photons": 1}))
    with pytest.raises(ScenarioError, match="numerics.*cutof"):
        parse_scenario(_cfg(numerics={"cutof": 0}))


def test_missing_and_malformed_fields():
    for broken in (
        {k: v for k, v in MINIMAL.items() if k != "method"},
        {k: v for k, v in MINIMAL.items() if k != "gamma"},
        {k: v for k, v in MINIMAL.items() if k != "initial"},
        dict(MINIMAL, gamma=-1),
        dict(MINIMAL, tau=0),
        dict(MINIMAL, initial=[0.9, 0.1]),
        dict(MINIMAL, initial="exited"),
        dict(MINIMAL, pulse={"shape": "rectangular", "duration": 2, "photons": 0}),
        dict(MINIMAL, pulse={"shape": "triangular", "photons": 1}),
        dict(MINIMAL, t_max=10,
             pulse={"shape": "rectangular", "duration": 20, "photons": 1}),
        dict(MINIMAL, schema=2),
    ):
        with pytest.raises(ScenarioError):
            parse_scenario(json.dumps(broken))
    with pytest.raises(ScenarioError, match="JSON"):
        parse_scenario("{not json")


def test_superposition_initial_is_normalized():
    s = parse_scenario(_cfg(initial=[0.6, 0.8]))
    assert abs(s.initial[0] - 0.6) < 1e-15 and abs(s.initial[1] - 0.8) < 1e-15
    assert s.initial_label == "superposition"


def test_pulse_on_excited_emitter_warns_but_parses():
    s = parse_scenario(_cfg(
        pulse={"shape": "rectangular", "duration": 2.4, "photons": 1}))
    assert len(s.warnings) == 1


def test_config_hash_ignores_formatting_only():
    a = parse_scenario(_cfg())
    b = parse_scenario(json.dumps(dict(reversed(list(MINIMAL.items()))), indent=4))
    assert a.config_sha == b.config_sha
    c = parse_scenario(_cfg(gamma=5))
    assert c.config_sha != a.config_sha


# ---------------------------------------------------------------------------
# steady-state readout


def _trace(times, excitation):
    return SimpleNamespace(times=np.asarray(times, dtype=float),
                           excitation=np.asarray(excitation, dtype=float))


def test_steady_state_of_constant_trace():
    t = np.linspace(0, 20, 401)
    report = extract_steady_state(_trace(t, np.full_like(t, 0.5)), tau=2.0)
    assert report.value == 0.5
    assert report.converged and report.residual == 0.0
    assert report.window == (10.0, 20.0)


def test_steady_state_of_decayed_trace_converges_to_zero():
    t = np.linspace(0, 12, 1201)
    report = extract_steady_state(_trace(t, np.exp(-8.0 * t)), tau=1.0)
    assert report.value < 1e-4
    assert report.converged


def test_steady_state_rejects_short_trace():
    t = np.linspace(0, 8, 81)
    with pytest.raises(ScenarioError, match="steady-state readout"):
        extract_steady_state(_trace(t, np.zeros_like(t)), tau=2.0)
    # long enough trace, but the drive ends too close to the edge
    t = np.linspace(0, 20, 201)
    with pytest.raises(ScenarioError):
        extract_steady_state(_trace(t, np.zeros_like(t)), tau=2.0, pulse_end=12.0)


def test_steady_state_window_is_one_delay_when_longer():
    t = np.linspace(0, 80, 801)
    report = extract_steady_state(_trace(t, np.full_like(t, 0.2)), tau=16.0)
    assert report.window == (64.0, 80.0)


# ---------------------------------------------------------------------------
# running scenarios


def test_vacuum_ground_trace_is_flat_zero(tmp_path):
    s = parse_scenario(json.dumps({
        "method": "mps", "gamma": 1.0, "initial": "ground", "t_max": 12,
        "numerics": {"dt": 0.1},
    }))
    summary = run_scenario(s, str(tmp_path))
    data = np.genfromtxt(tmp_path / "trace.csv", delimiter=",", names=True)
    assert np.all(data["excitation"] == 0.0)
    assert summary["engines"]["mps"]["steady_state"]["value"] == 0.0
    assert summary["engines"]["mps"]["steady_state"]["converged"]


def test_open_line_decay_rate_recoverable_from_trace_file(tmp_path):
    s = parse_scenario(json.dumps({
        "method": "heisenberg", "gamma": 4.0, "initial": "excited",
        "t_max": 10, "numerics": {"h": 0.005},
    }))
    run_scenario(s, str(tmp_path))
    data = np.genfromtxt(tmp_path / "trace.csv", delimiter=",", names=True)
    early = data["t_ps"] <= 1.0
    slope = np.polyfit(data["t_ps"][early], np.log(data["excitation"][early]), 1)[0]
    assert abs(slope - (-2 * 4.0)) < 0.01 * 2 * 4.0
    # empty engine-specific columns on matrix-element runs
    assert np.isnan(data["max_bond"]).all()


def test_identical_config_gives_identical_bytes(tmp_path):
    cfg = json.dumps({
        "method": "both", "gamma": 2.0, "tau": 1.0, "phi_over_2pi": 1,
        "initial": "excited", "t_max": 12,
        "numerics": {"dt": 0.05, "h": 0.025},
    })
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run_scenario(parse_scenario(cfg), str(out_a))
    run_scenario(parse_scenario(cfg), str(out_b))
    for name in ("trace.csv", "summary.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_summary_recomputable_from_trace(tmp_path):
    cfg = json.dumps({
        "method": "both", "gamma": 2.0, "tau": 1.0, "phi_over_2pi": 1,
        "initial": "excited", "t_max": 12,
        "numerics": {"dt": 0.05, "h": 0.025},
    })
    summary = run_scenario(parse_scenario(cfg), str(tmp_path))
    data = np.genfromtxt(tmp_path / "trace.csv", delimiter=",", names=True)
    tail = data["t_ps"] >= data["t_ps"][-1] - 10.0
    assert np.isclose(np.mean(data["excitation"][tail]),
                      summary["engines"]["mps"]["steady_state"]["value"],
                      rtol=0, atol=1e-15)
    assert np.isclose(np.max(data["abs_diff"]), summary["max_abs_diff"])
    peak = summary["engines"]["mps"]["bond_peak"]
    k = int(np.argmax(data["max_bond"]))
    assert (data["max_bond"][k], data["t_ps"][k]) == (peak["value"], peak["t_ps"])


# ---------------------------------------------------------------------------
# sweeps


def _hb_base():
    return parse_scenario(json.dumps({
        "method": "heisenberg", "gamma": 4.0, "tau": 0.5, "phi_over_2pi": 1,
        "initial": "ground", "t_max": 24,
        "pulse": {"shape": "gaussian", "sigma": 1.0, "photons": 1},
        "numerics": {"h": 0.01},
    }))


def test_single_point_sweep_matches_run_scenario():
    base = _hb_base()
    rows = sweep(base, [2.0], [1], workers=1)
    direct = run_scenario(base)
    assert len(rows) == 1
    got = rows[0]
    assert got["error"] == ""
    assert got["value_heisenberg"] == pytest.approx(
        direct["engines"]["heisenberg"]["steady_state"]["value"], rel=0, abs=0)
    assert got["tau"] == 0.5 and got["n"] == 1


def test_sweep_zero_photons_uses_excited_emitter():
    rows = sweep(_hb_base(), [1.0, 2.0], [0], workers=1)
    # trapped excitation decreases with gamma*tau
    v1, v2 = rows[0]["value_heisenberg"], rows[1]["value_heisenberg"]
    assert v1 > v2 > 0
    assert abs(v1 - 1 / (1 + 1.0) ** 2) < 0.02
    assert abs(v2 - 1 / (1 + 2.0) ** 2) < 0.02


def test_sweep_records_cell_failures_and_continues():
    base = _hb_base()
    # gamma = gamma_tau / tau = 2e5 blows past the integrator's stability
    # limit, so the first cell dies with a finiteness error
    rows = sweep(base, [1e5, 2.0], [1], workers=1)
    assert rows[0]["error"] != "" and rows[0]["value_heisenberg"] is None
    assert rows[1]["error"] == "" and rows[1]["value_heisenberg"] is not None


def test_sweep_rejects_photons_without_pulse():
    s = parse_scenario(_cfg())
    with pytest.raises(ScenarioError, match="pulse"):
        sweep(s, [1.0], [2])


def test_sweep_table_quotes_error_cells(tmp_path):
    rows = [{"gamma_tau": 1.0, "n": 0, "gamma": 4.0, "tau": 0.25,
             "value_mps": None, "converged_mps": None,
             "value_heisenberg": 0.25, "converged_heisenberg": True,
             "error": 'boom, with "quotes"'}]
    path = tmp_path / "table.csv"
    write_sweep_table(str(path), rows)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("gamma_tau,n,gamma,tau")
    assert '"boom, with ""quotes"""' in lines[1]
    assert ",true," in lines[1]


# ---------------------------------------------------------------------------
# command line


def _write_cfg(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_validate_and_run(tmp_path, capsys):
    path = _write_cfg(tmp_path, {
        "method": "heisenberg", "gamma": 4.0, "tau": 2.0, "phi_over_2pi": 1,
        "initial": "excited", "t_max": 15, "numerics": {"h": 0.01},
    })
    assert main(["validate", path]) == 0
    assert "1500 steps" in capsys.readouterr().out
    out = tmp_path / "out"
    assert main(["run", path, "--out", str(out)]) == 0
    assert (out / "trace.csv").exists() and (out / "summary.json").exists()
    assert "steady state" in capsys.readouterr().out


def test_cli_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{")
    assert main(["validate", str(path)]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["run", str(path)]) == 2
    capsys.readouterr()


def test_cli_sweep_writes_table(tmp_path, capsys):
    path = _write_cfg(tmp_path, {
        "method": "heisenberg", "gamma": 4.0, "tau": 0.5, "phi_over_2pi": 1,
        "initial": "excited", "t_max": 15, "numerics": {"h": 0.01},
    })
    out = tmp_path / "sw"
    assert main(["sweep", path, "--axis", "gamma_tau=1:2:0.5",
                 "--photons", "0", "--out", str(out), "--workers", "1"]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 4
    assert "0 failed" in capsys.readouterr().out


def test_cli_rejects_malformed_axis(tmp_path, capsys):
    path = _write_cfg(tmp_path, dict(MINIMAL))
    assert main(["sweep", path, "--axis", "tau=1:2:1", "--photons", "0"]) == 2
    assert main(["sweep", path, "--axis", "gamma_tau=1:2", "--photons", "0"]) == 2
    assert main(["sweep", path, "--axis", "gamma_tau=2:1:1", "--photons", "0"]) == 2
    assert main(["sweep", path, "--axis", "gamma_tau=1:2:1",
                 "--photons", "x"]) == 2
    capsys.readouterr()
