import os
import subprocess
import sys

import numpy as np
import pytest

from gradflow_fv.cli import main, parse_grid
from gradflow_fv.errors import ConfigError
from gradflow_fv.special_fn import bernoulli
from gradflow_fv.tessellation import load_mesh

RUN = """
[mesh]
h = 0.125
[potential]
V = quadratic center=0.5 k=1
[solver]
eps = 0.2
t_end = 0.05
record_every = 0.01
initial = gaussian width=0.2
[output]
audit = true
"""

STUDY = """
[mesh]
[potential]
V = quadratic center=0.5 k=1
[solver]
eps = 0.2
t_end = 0.05
[study]
study = converge_h
levels = 8,16,32
min_order = {min_order}
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_mesh_cartesian(tmp_path, capsys):
    out = str(tmp_path / "m.fvmesh")
    assert main(["mesh", "--cartesian", "1d", "0", "1", "0.25", "--out", out]) == 0
    assert load_mesh(out).n_cells == 4
    assert "4 cells, 3 faces" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 1
    assert "ERROR config_not_found" in capsys.readouterr().err
    assert main(["mesh", "--cartesian", "2d", "0", "1", "0.25", "--out", "x"]) == 1
    assert main(["bogus"]) == 1
    bad = write(tmp_path, "bad.ini", "[solver]\nfoo = 1\n")
    assert main(["solve", "--config", bad, "--out", str(tmp_path / "o")]) == 1
    assert "ERROR config" in capsys.readouterr().err
    neg = write(tmp_path, "neg.ini", "[mesh]\nh = 0.125\n[solver]\ndt = 0.5\n"
                "initial = gaussian width=0.1\n")
    assert main(["solve", "--config", neg, "--out", str(tmp_path / "n")]) == 2
    assert "ERROR negative_density" in capsys.readouterr().err


def test_solve_audit_lift(tmp_path, capsys):
    cfg = write(tmp_path, "run.ini", RUN)
    traj = str(tmp_path / "traj")
    assert main(["solve", "--config", cfg, "--out", traj]) == 0
    for f in ("mesh.fvmesh", "states.csv", "fluxes.csv", "meta.ini", "audit.csv"):
        assert os.path.isfile(os.path.join(traj, f))
    out = str(tmp_path / "a.csv")
    assert main(["audit", "--traj", traj, "--out", out]) == 0
    lines = open(out).read().splitlines()
    assert lines[0] == "t,E,R,D,residual_cum"
    assert len([ln for ln in lines if not ln.startswith("#")]) == 1 + 6
    assert "# energy_monotone=true" in lines
    assert open(out).read() == open(os.path.join(traj, "audit.csv")).read()
    assert main(["lift", "--traj", traj]) == 0
    rows = open(os.path.join(traj, "fields.csv")).read().splitlines()
    assert rows[0] == "t,cell,x1,volume,density"
    assert len(rows) == 1 + 6 * 8
    dens = np.array([float(r.split(",")[-1]) for r in rows[1:9]])
    assert np.sum(dens * 0.125) == pytest.approx(1.0, abs=1e-14)


def test_eps_override(tmp_path):
    cfg = write(tmp_path, "run.ini", RUN)
    traj = str(tmp_path / "traj")
    assert main(["solve", "--config", cfg, "--out", traj, "--eps", "0.5"]) == 0
    assert "eps = 0.5" in open(os.path.join(traj, "meta.ini")).read()


def test_special_table(tmp_path, capsys):
    assert main(["special-table", "--fn", "bernoulli", "--grid", "s=-1:1:3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "s,value"
    assert float(lines[1].split(",")[1]) == bernoulli(-1.0)
    assert float(lines[2].split(",")[1]) == 1.0
    out = str(tmp_path / "b.csv")
    assert main(["special-table", "--fn", "beta", "--grid", "a=1;2,b=1,eps=0.1", "--out", out]) == 0
    assert len(open(out).read().splitlines()) == 3
    assert main(["special-table", "--fn", "nope", "--grid", "s=1"]) == 1


def test_parse_grid():
    g = parse_grid("a=0:1:3,b=2;5", ("a", "b"))
    np.testing.assert_array_equal(g["a"], [0, 0.5, 1])
    np.testing.assert_array_equal(g["b"], [2, 5])
    for bad in ("a=1", "a=1,b=2,c=3", "a=1,a=2,b=1", "a=x,b=1", "a=0:1:0,b=1", "a"):
        with pytest.raises(ConfigError):
            parse_grid(bad, ("a", "b"))


def test_study_outputs_and_determinism(tmp_path, monkeypatch):
    cfg = write(tmp_path, "s.ini", STUDY.format(min_order=0.5))
    o1, o2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    assert main(["study", "--config", cfg, "--out", o1, "--threads", "1"]) == 0
    monkeypatch.setenv("GRADFLOW_THREADS", "3")
    assert main(["study", "--config", cfg, "--out", o2]) == 0
    for f in ("report.csv", "report.txt"):
        assert open(os.path.join(o1, f)).read() == open(os.path.join(o2, f)).read()
    assert open(os.path.join(o1, "report.csv")).readline().strip() == "level,error,order,residual"


def test_study_threshold_failure(tmp_path, capsys):
    cfg = write(tmp_path, "s.ini", STUDY.format(min_order=5))
    assert main(["study", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "ERROR study_failed" in capsys.readouterr().err
    assert os.path.isfile(tmp_path / "o" / "report.csv")


def test_console_entry_point(tmp_path):
    out = str(tmp_path / "m.fvmesh")
    r = subprocess.run([sys.executable, "-m", "gradflow_fv.cli", "mesh", "--cartesian", "2d",
                        "0", "1", "0", "1", "0.5", "--out", out], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert load_mesh(out).n_cells == 4
