import json
import subprocess
import sys

import numpy as np
import pytest

from radial_ids.cli import main

SCHWARZSCHILD = """\
mode: spherical
r0: 2.0
r_max: 2000.0
boundary: minimal
grid: {radial_nodes: 400, n_theta: 8, n_phi: 16}
"""

DEC_VIOLATING = """\
mode: diagnose_only
r0: 1.0
r_max: 200.0
boundary: prescribed
boundary_value: 0.9
grid: {radial_nodes: 200, n_theta: 8, n_phi: 16}
matter: {A_mu: 0.01, A_j: 0.05, A_k: 0.1}
"""

UMBILIC = """\
mode: umbilic
r0: 1.0
r_max: 20.0
boundary: generalized_horizon
grid: {radial_nodes: 60, n_theta: 12, n_phi: 24}
family:
  kind: exp_perturbed
  amplitude: 0.05
  generator: [[1.0, 0.3, 0.0], [0.3, -0.5, 0.2], [0.0, 0.2, -0.5]]
matter: {A_mu: 0.03, A_j: {"1": 0.02, z: 0.004}, jI_mode: umbilic_derived, decay_b: 3.0}
tolerances: {compat: 0.05}
"""


def write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def run_cli(tmp_path, text, command="diagnose", out="out", extra=()):
    cfg = write(tmp_path, text)
    code = main([command, "--config", str(cfg), "--out-dir", str(tmp_path / out), *extra])
    return code, tmp_path / out


def test_schwarzschild_report(tmp_path):
    code, out = run_cli(tmp_path, SCHWARZSCHILD)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert abs(rep["penrose_gap"]) < 1e-6
    assert abs(rep["E_ADM"] - 1.0) < 1e-6
    assert rep["verdicts"]["penrose"] is True
    assert {"radial.csv", "per_radius.csv", "report.json", "manifest.json"} <= {
        p.name for p in out.iterdir()}


def test_dec_violation_diagnose_only(tmp_path):
    code, out = run_cli(tmp_path, DEC_VIOLATING)
    assert code == 0
    v = json.loads((out / "report.json").read_text())["verdicts"]
    assert v["dec"] is False
    assert v["monotonicity"] == "not applicable" and v["penrose"] == "not applicable"


def test_degenerate_f0_names_radius(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "r0: 2.0\nr_max: 40.0\nf0: 3.0\ngrid: {radial_nodes: 50}\n")
    assert code == 1
    err = capsys.readouterr().err
    assert "radial_ids." in err and "r = 2" in err


def test_config_error_exit_code(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "matter: {decay_b: 1.2}\n")
    assert code == 2
    assert "matter.decay_b" in capsys.readouterr().err
    code, _ = run_cli(tmp_path, "lapse_mode: fast\n")
    assert code == 2


def test_identical_configs_identical_outputs(tmp_path):
    _, a = run_cli(tmp_path, SCHWARZSCHILD, command="report", out="a")
    _, b = run_cli(tmp_path, SCHWARZSCHILD, command="report", out="b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_manifest_contents(tmp_path):
    _, out = run_cli(tmp_path, SCHWARZSCHILD, command="report")
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "report"
    assert man["config"]["r0"] == 2.0 and man["config"]["boundary"] == "minimal"
    assert {"numpy", "scipy"} <= set(man["versions"])
    # every verdict-gating tolerance is recorded
    assert {"monotonicity", "penrose", "dec", "horizon", "rigidity"} <= set(man["tolerances"])
    assert set(man["files"]) == {"radial.csv", "per_radius.csv", "report.json"}
    rep = json.loads((out / "report.json").read_text())
    assert "residuals" in rep


def test_override_flag(tmp_path):
    code, out = run_cli(tmp_path, SCHWARZSCHILD, command="solve-spherical",
                        extra=["--override", "r_max=100", "--override", "grid.radial_nodes=30"])
    assert code == 0
    table = np.loadtxt(out / "radial.csv", delimiter=",", skiprows=2)
    assert table.shape == (30, 5) and table[-1, 0] == 100.0


def test_umbilic_pipeline(tmp_path):
    code, out = run_cli(tmp_path, UMBILIC)
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert {"steps.csv", "slice_r0.csv", "slice_rmax.csv", "report.json"} <= names
    v = json.loads((out / "report.json").read_text())["verdicts"]
    assert v["dec"] is True and v["penrose"] is True


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, SCHWARZSCHILD.replace("2000.0", "100.0"))
    proc = subprocess.run([sys.executable, "-m", "radial_ids.cli", "solve-spherical", "--config",
                           str(cfg), "--out-dir", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "radial.csv").is_file()


@pytest.mark.parametrize("argv", [[], ["diagnose"], ["bogus", "--config", "x.yaml"]])
def test_bad_arguments(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
