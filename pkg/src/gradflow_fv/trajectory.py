"""Trajectory persistence.

A trajectory directory holds ``mesh.fvmesh``, ``states.csv`` (``t`` then one
column per cell mass), ``fluxes.csv`` (``t`` then one column per face) and
``meta.ini`` (solver settings and potential specs).  Floats are written
as shortest round-trip decimals, so a round trip is exact.
"""
import configparser
import os

import numpy as np

from .errors import TrajectoryFormatError
from .potentials import PotentialSpec
from .scheme import SchemeConfig, Trajectory
from .tessellation import load_mesh, save_mesh

__all__ = ["save_trajectory", "load_trajectory", "write_csv", "fmt"]

def fmt(v):
    """Shortest decimal string that reads back to the same double."""
    return repr(float(v))


def write_csv(path, header, rows):
    """Write a header line and rows of round-trip exact floats."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")


def _read_csv(path, ncols):
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if len(header) != ncols or header[0] != "t":
                raise TrajectoryFormatError(f"{os.path.basename(path)}: expected {ncols} columns "
                                            f"starting with t", line=1)
            rows = []
            for no, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                parts = line.strip().split(",")
                if len(parts) != ncols:
                    raise TrajectoryFormatError(f"{os.path.basename(path)}: expected {ncols} "
                                                f"values, got {len(parts)}", line=no)
                try:
                    rows.append([float(p) for p in parts])
                except ValueError:
                    raise TrajectoryFormatError(f"{os.path.basename(path)}: bad number",
                                                line=no) from None
    except FileNotFoundError:
        raise TrajectoryFormatError(f"missing {path}") from None
    return np.array(rows, dtype=float).reshape(-1, ncols)


def _config_dict(cfg):
    return {
        "kind": cfg.kind,
        "eps": fmt(cfg.eps),
        "dt": "auto" if cfg.dt is None else fmt(float(cfg.dt)),
        "integrator": cfg.integrator,
        "t_end": fmt(float(cfg.t_end)),
        "record_every": fmt(float(cfg.record_every)),
        "safety": fmt(float(cfg.safety)),
        "max_steps": str(int(cfg.max_steps)),
        "align_every": fmt(float(cfg.align_every)),
        "energy_guard": "true" if cfg.energy_guard else "false",
    }


def save_trajectory(traj, path):
    """Write ``traj`` into directory ``path`` (created if needed)."""
    os.makedirs(path, exist_ok=True)
    t = traj.tess
    save_mesh(t, os.path.join(path, "mesh.fvmesh"))
    tcol = traj.times[:, None]
    write_csv(os.path.join(path, "states.csv"),
              ["t"] + [f"rho_{k}" for k in range(t.n_cells)],
              np.hstack([tcol, traj.states]))
    write_csv(os.path.join(path, "fluxes.csv"),
              ["t"] + [f"J_{int(a)}_{int(b)}" for a, b in t.faces],
              np.hstack([tcol, traj.fluxes]))
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["solver"] = _config_dict(traj.config)
    spec = traj.potentials
    cp["potential"] = {"V": spec.V.spec if spec else "zero", "W": spec.W.spec if spec else "zero"}
    run = {"n_steps": str(traj.n_steps if traj.n_steps is not None else -1),
           "dt_max": fmt(traj.dt_max if traj.dt_max is not None else float("nan"))}
    for k, v in sorted(traj.meta.items()):
        run[str(k)] = str(v)
    cp["run"] = run
    with open(os.path.join(path, "meta.ini"), "w") as fh:
        cp.write(fh)


def load_trajectory(path):
    """Read a directory written by :func:`save_trajectory`."""
    meta_path = os.path.join(path, "meta.ini")
    if not os.path.isfile(meta_path):
        raise TrajectoryFormatError(f"no meta.ini in {path}")
    t = load_mesh(os.path.join(path, "mesh.fvmesh"))
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read(meta_path)
    try:
        s = cp["solver"]
        cfg = SchemeConfig(
            kind=s["kind"], eps=float(s["eps"]),
            dt=None if s["dt"] == "auto" else float(s["dt"]),
            integrator=s["integrator"], t_end=float(s["t_end"]),
            record_every=float(s["record_every"]), safety=float(s["safety"]),
            max_steps=int(s["max_steps"]), align_every=float(s.get("align_every", "0")),
            energy_guard=s.getboolean("energy_guard", True))
        p = cp["potential"]
        spec = PotentialSpec.from_strings(p["V"], p["W"], base_dir=path)
        run = dict(cp["run"]) if cp.has_section("run") else {}
    except (KeyError, ValueError) as exc:
        raise TrajectoryFormatError(f"bad meta.ini: {exc}") from None
    st = _read_csv(os.path.join(path, "states.csv"), t.n_cells + 1)
    fl = _read_csv(os.path.join(path, "fluxes.csv"), t.n_faces + 1)
    if st.shape[0] != fl.shape[0] or not np.array_equal(st[:, 0], fl[:, 0]):
        raise TrajectoryFormatError("states.csv and fluxes.csv have different record times")
    n_steps = int(run.pop("n_steps", -1))
    dt_max = float(run.pop("dt_max", "nan"))
    return Trajectory(t, st[:, 0], st[:, 1:], fl[:, 1:], cfg, potentials=spec, meta=run,
                      n_steps=None if n_steps < 0 else n_steps,
                      dt_max=None if np.isnan(dt_max) else dt_max)
