import csv
import hashlib
import json

import numpy as np
import pytest

from mercury_lwi import cli
from mercury_lwi import gain_field as gf
from mercury_lwi.config import ConfigError, default_config, parse_config
from mercury_lwi.constants import TWO_PI


def test_defaults_round_trip_through_toml():
    cfg = default_config()
    again = parse_config(cfg.to_toml())
    assert again.values == cfg.values
    assert cfg["liouvillian"]["pump_r"] == 1.1e6


def test_unknown_key_reports_line():
    text = "[run]\nseed = 1\n\n[liouvillian]\npump_r = 1e6\npump_rr = 2e6\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "x.toml")
    assert exc.value.line == 6
    assert "x.toml:6" in str(exc.value) and "pump_rr" in str(exc.value)


def test_unknown_section_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("\n[atom-model]\nscheme = '4-level'\n")
    assert exc.value.line == 2


@pytest.mark.parametrize("text, line", [
    ("[doppler]\nnodes = 2.5\n", 2),
    ("[doppler]\nenabled = 1\n", 2),
    ("[atom_model]\nscheme = '7-level'\n", 2),
    ("[laser_power]\n\nQ = 0.0\n", 3),
    ("[liouvillian]\npump_r = -1.0\n", 2),
    ("[laser_power]\nlinewidth_sets = [[1.0, 2.0, 3.0]]\n", 2),
    ("[cavity_optics]\ngrid = 100\n", 2),
    ("[gain_field]\ntable_method = 'spline'\n", 2),
])
def test_bad_values_rejected_with_line(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line


def test_malformed_toml():
    with pytest.raises(ConfigError) as exc:
        parse_config("[run]\nseed = = 3\n")
    assert exc.value.line == 2


def test_cross_checks():
    with pytest.raises(ConfigError):
        parse_config("[spectrum]\ndetuning_min = 1.0\ndetuning_max = 0.0\n")
    with pytest.raises(ConfigError):
        parse_config("[spectrum]\npump_rates = []\n")
    with pytest.raises(ConfigError):
        parse_config("[cavity_optics]\narm = 0.04\n")


def test_transition_override():
    cfg = parse_config("[atom_model.transitions.ab]\nlinewidth = 2e6\n")
    sch = cli.build_scheme(cfg)
    assert sch.transitions["ab"].gamma == pytest.approx(TWO_PI * 2e6)
    with pytest.raises(ConfigError):
        parse_config("[atom_model.transitions.zz]\nlinewidth = 2e6\n")


def test_build_system_units():
    cfg = parse_config("[atom_model]\nscheme = '4-level'\nrabi_s = 20.7e6\n[liouvillian]\nb_s = 5e3\n")
    s = cli.build_system(cfg)
    assert s.scheme.dimension == 4
    assert abs(s.drives["s"].rabi) == pytest.approx(TWO_PI * 20.7e6)
    assert s.linewidths[0] == pytest.approx(TWO_PI * 5e3)
    assert cli.build_system(cfg, noise=False).linewidths == (0.0, 0.0, 0.0)


def test_gain_beams_reproduce_configured_rabi():
    cfg = default_config()
    s = cli.build_system(cfg)
    beams = cli.build_beams(cfg, cli.build_geometry(s.scheme))
    for name, hz in (("s", 33.5e6), ("w", 3.7e6)):
        tr = s.scheme.transitions["ca" if name == "s" else "cd"]
        comps = gf.power_to_peak_rabi(beams[name], tr, s.scheme.J(tr.upper))
        assert max(abs(v) for v in comps.values()) == pytest.approx(TWO_PI * hz, rel=0.05)


SPECTRUM = """
[atom_model]
scheme = "4-level"
rabi_s = 20.7e6
rabi_w = 0.3e6
probe_rabi = 10.0
[liouvillian]
pump_r = 0.0
b_r = 0.0
density = 1e17
[spectrum]
detuning_min = -30e6
detuning_max = 30e6
points = 7
pump_rates = [0.0, 5e3]
"""


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _read_csv(path):
    lines = path.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    rows = list(csv.reader(l for l in lines if not l.startswith("#")))
    return header, rows[0], rows[1:]


def test_spectrum_command(tmp_path):
    cfg = _write(tmp_path, SPECTRUM)
    out = tmp_path / "out"
    assert cli.main(["spectrum", "--config", str(cfg), "--out", str(out)]) == 0
    header, cols, rows = _read_csv(out / "spectrum.csv")
    assert cols == ["pump_r", "delta_p", "re_chi", "im_chi"]
    assert len(rows) == 14
    assert any("liouvillian.pump_r" in h for h in header)
    manifest = json.loads((out / "manifest.json").read_text())
    digest = hashlib.sha256((out / "spectrum.csv").read_bytes()).hexdigest()
    assert manifest["outputs"]["spectrum.csv"]["sha256"] == digest
    assert manifest["status"] == "ok"
    # the manifest alone reproduces the configuration
    assert parse_config(manifest["config_toml"]).values == parse_config(SPECTRUM).values


def test_threads_do_not_change_output(tmp_path):
    cfg = _write(tmp_path, SPECTRUM)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["spectrum", "--config", str(cfg), "--out", str(a)]) == 0
    assert cli.main(["spectrum", "--config", str(cfg), "--out", str(b), "--threads", "3"]) == 0
    assert (a / "spectrum.csv").read_bytes() == (b / "spectrum.csv").read_bytes()


def test_noise_sweep_zero_linewidth_matches_spectrum(tmp_path):
    text = SPECTRUM.replace("points = 7", "points = 1\ndetuning_min = 0.0\n", 1)
    text = text.replace("detuning_min = -30e6\n", "").replace("pump_rates = [0.0, 5e3]", "pump_rates = [5e3]")
    text += '[noise_sweep]\nmode = "linewidth"\nlinewidths = [0.0, 20e3]\ntemperatures = [300.0]\n'
    text = text.replace("pump_r = 0.0", "pump_r = 5e3")
    cfg = _write(tmp_path, text)
    assert cli.main(["spectrum", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["noise-sweep", "--config", str(cfg), "--out", str(tmp_path / "n")]) == 0
    _, _, spec = _read_csv(tmp_path / "s" / "spectrum.csv")
    _, _, sweep = _read_csv(tmp_path / "n" / "noise_sweep.csv")
    assert float(sweep[0][4]) == pytest.approx(float(spec[0][3]), rel=1e-10)
    # drive noise degrades the gain
    assert float(sweep[1][4]) > float(sweep[0][4])


def test_empty_detuning_grid_is_config_error(tmp_path):
    cfg = _write(tmp_path, SPECTRUM.replace("points = 7", "points = 0"))
    out = tmp_path / "out"
    assert cli.main(["spectrum", "--config", str(cfg), "--out", str(out)]) == 2
    assert not (out / "spectrum.csv").exists()


def test_zero_q_is_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, "[laser_power]\nQ = 0.0\n")
    assert cli.main(["power", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "laser_power.Q" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["spectrum", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2


def test_bad_threads(tmp_path):
    assert cli.main(["spectrum", "--threads", "0", "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(run, args):
        raise cli.co.ModeSolverError("no convergence")

    monkeypatch.setitem(cli.COMMANDS, "cavity", boom)
    out = tmp_path / "o"
    assert cli.main(["cavity", "--out", str(out)]) == 3
    assert json.loads((out / "manifest.json").read_text())["status"] == "non-convergence"


def test_selfcheck_passes(tmp_path, capsys):
    assert cli.main(["selfcheck", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "FAIL" not in text and text.count("PASS") >= 7


def test_selfcheck_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "selfcheck", lambda seed=0: [("forced", False, "x")])
    assert cli.main(["selfcheck", "--out", str(tmp_path)]) == 1


def test_threshold_command_small(tmp_path):
    text = SPECTRUM + "[laser_power]\nQ = 1e9\nb_s_grid = [0.0, 20e3]\nb_w_grid = [0.0]\nr_max = 1e6\niterations = 20\n"
    cfg = _write(tmp_path, text)
    assert cli.main(["threshold", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    _, cols, rows = _read_csv(tmp_path / "t" / "threshold.csv")
    assert cols == ["b_s", "b_w", "r_thr", "P_thr"]
    r = [float(x[2]) for x in rows]
    assert np.all(np.isfinite(r)) and r[1] > r[0]


def test_gain3d_and_cavity_commands(tmp_path):
    text = """
[gain_field]
shape = [5, 3, 5]
table_size = 6
[cavity_optics]
grid = 64
modes = 2
drive_waists = [2e-3]
"""
    cfg = _write(tmp_path, text)
    out = tmp_path / "g"
    assert cli.main(["gain3d", "--config", str(cfg), "--out", str(out)]) == 0
    field = gf.ComplexField3D.load(out / "gain3d.bin")
    assert field.shape == (5, 3, 5)
    out = tmp_path / "c"
    assert cli.main(["cavity", "--config", str(cfg), "--out", str(out), "--no-loaded"]) == 0
    _, cols, rows = _read_csv(out / "modes.csv")
    assert len(rows) == 2 and cols[0] == "drive_waist"
    assert (out / "mode_00_00.bin").exists()
