import csv

import numpy as np
import pytest

from eulerian_pf import config as cfgmod
from eulerian_pf.cli import main
from eulerian_pf.exceptions import ConfigError

BOX = """\
[mesh]
builder = box
lengths = 1 1
cells = 6 6

[model]
second_well = 1.1

[deformation]
family = affine
matrix = 1.2 0.1 0 0.9

[phase]
set = half

[optimizer]
eps = 0.3
max_iterations = 20
"""

WRAP = """\
[mesh]
builder = annulus
n_r = 3
n_theta = 32

[deformation]
family = wrap
dirichlet = none
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_defaults_and_resolved_header():
    cfg = cfgmod.load_config()
    assert cfg.mesh.dim == 2 and cfg.optimizer.eps == 0.1
    head = cfg.header()
    assert head[0] == "config source: <defaults>"
    assert "[optimizer]" in head and "eps = 0.1" in head


@pytest.mark.parametrize("text, line, fragment", [
    ("[mesh]\ndim = 4\n", 2, "[mesh] dim"),
    ("[mesh]\ncells = 4\n", 2, "expected 2 values"),
    ("[model]\n\ngamma = abc\n", 3, "cannot parse"),
    ("[mesh]\nbuilder = box\n[deformation]\nfamily = wrap\n", 4, "annulus"),
    ("[bogus]\nx = 1\n", 1, "unknown section"),
    ("[run]\nseed = 1\ncolour = red\n", 3, "unknown key"),
    ("[sweep]\neps = 0.1 0.2\n", 2, "strictly decreasing"),
])
def test_config_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        cfgmod.load_config(text=text)
    msg = str(info.value)
    assert msg.startswith(f"<string>:{line}:")
    assert fragment in msg


def test_optimizer_error_points_at_section():
    with pytest.raises(ConfigError, match=r"<string>:2 \[optimizer\]: backtracking"):
        cfgmod.load_config(text="\n[optimizer]\nbacktracking = 2\n")


def test_builders(tmp_path):
    cfg = cfgmod.load_config(_write(tmp_path, BOX))
    mesh = cfgmod.build_mesh(cfg)
    y = cfgmod.build_deformation(cfg, mesh.nodes)
    assert np.allclose(y, mesh.nodes @ np.array([[1.2, 0.1], [0.0, 0.9]]).T)
    E = cfgmod.build_phase_set(cfg, mesh)
    assert np.array_equal(E, mesh.centroids[:, 0] < 0.5)
    assert np.array_equal(np.sort(cfgmod.dirichlet_nodes(cfg, mesh)), np.sort(mesh.boundary_nodes()))
    assert cfgmod.build_model(cfg, 2).bulk.phases[1].well[0, 0] == pytest.approx(1.1)


def _read_csv(path):
    lines = path.read_text().splitlines()
    body = [line for line in lines if not line.startswith("# ")]
    return lines, list(csv.DictReader(body))


def test_cli_eval_writes_headers(tmp_path):
    cfgpath = _write(tmp_path, BOX + "\n[sweep]\neps = 0.2 0.1\n")
    out = tmp_path / "out"
    assert main(["eval", "--config", str(cfgpath), "--out", str(out)]) == 0
    lines, rows = _read_csv(out / "energies.csv")
    assert lines[0] == f"# config source: {cfgpath}"
    # sharp interface of the affine half split: |A e_2| = |(0.1, 0.9)|
    assert float(rows[0]["sharp_interface"]) == pytest.approx(np.hypot(0.1, 0.9))
    assert "diffuse_interface[eps=0.1]" in rows[0]
    adm = (out / "admissibility.txt").read_text()
    assert adm.startswith("# config source:") and "warning = none" in adm


def test_cli_eval_flags_wrap(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["eval", "--config", str(_write(tmp_path, WRAP)), "--out", str(out)]) == 0
    adm = (out / "admissibility.txt").read_text()
    assert "warning = cn_violated" in adm
    assert "CN VIOLATED" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["eval", "--config", str(tmp_path / "missing.ini"), "--out", out]) == 2
    bad = _write(tmp_path, BOX.replace("1.2 0.1 0 0.9", "-1 0 0 1"), "bad.ini")
    assert main(["eval", "--config", str(bad), "--out", out]) == 3
    assert main(["minimize", "--config", str(bad), "--out", out]) == 3
    assert "infeasible input" in capsys.readouterr().err


def test_cli_minimize_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["minimize", "--config", str(_write(tmp_path, BOX)), "--out", str(out), "--seed", "3"]) == 0
    lines, rows = _read_csv(out / "iterations_0.csv")
    assert "seed = 3" in "\n".join(lines)
    energies = [float(r["energy"]) for r in rows]
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert (out / "snapshot.txt").read_text().startswith("# config source:")
    _, summary = _read_csv(out / "energies.csv")
    assert summary[0]["stage"] == "0"


def test_cli_sweep_and_compare(tmp_path):
    text = BOX + "\n[sweep]\neps = 0.4 0.2\nrefine = true\n"
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(_write(tmp_path, text)), "--out", str(out)]) == 0
    _, rows = _read_csv(out / "sweep.csv")
    assert [float(r["eps"]) for r in rows] == [0.4, 0.2]
    assert (out / "snapshot_1.txt").exists()
    assert main(["sweep", "--config", str(_write(tmp_path, BOX, "nosweep.ini")), "--out", str(out)]) == 2

    a = _write(tmp_path, BOX, "a.ini")
    b = _write(tmp_path, BOX.replace("1.2 0.1 0 0.9", "1.2 0.1 0 0.9\noffset = 0.25 0"), "b.ini")
    assert main(["compare", "--config", str(a), "--other", str(b), "--out", str(out)]) == 0
    _, rows = _read_csv(out / "compare.csv")
    # two translated copies of the same parallelogram (area 1.08) overlap except for 2 x 0.25 x 0.9
    sym = float(rows[0]["symmetric_difference"])
    assert sym == pytest.approx(0.45, abs=float(rows[0]["grid_tolerance"]))


def test_cli_gradcheck_and_verify(tmp_path):
    text = "[mesh]\ncells = 3 3\n[model]\nsecond_well = 1.1\n[optimizer]\neps = 0.2\n"
    cfgpath = _write(tmp_path, text)
    out = tmp_path / "out"
    assert main(["gradcheck", "--config", str(cfgpath), "--out", str(out)]) == 0
    _, rows = _read_csv(out / "gradcheck.csv")
    assert len(rows) == 100
    assert main(["gradcheck", "--config", str(cfgpath), "--out", str(out), "--tolerance", "1e-30"]) == 1
    assert main(["verify", "--config", str(cfgpath), "--out", str(out)]) == 0
    _, rows = _read_csv(out / "characterization.csv")
    assert len(rows) == 30 and all(r["passed"] == "true" for r in rows)
