"""``gradflow-fv`` command line interface.

Subcommands: ``mesh``, ``solve``, ``audit``, ``lift``, ``special-table`` and
``study``.  Exit status is 0 on success, 1 on validation or parse errors and
2 on numerical failures (CFL violation, non-convergence, failed study
thresholds).  Errors go to standard error as ``ERROR <code>: <message>``.
"""
import argparse
import itertools
import os
import sys
import warnings

import numpy as np

from . import __version__, special_fn
from .config import RunConfig
from .errors import ConfigError, GradflowError, StudyFailed
from .experiments import initial_state, run_study
from .gradstruct import audit
from .potentials import discretize
from .scheme import solve
from .tessellation import build_cartesian, save_mesh, validate
from .trajectory import fmt, load_trajectory, save_trajectory, write_csv

__all__ = ["main", "SPECIAL_FUNCTIONS", "parse_grid"]

# name -> argument names, in call order
SPECIAL_FUNCTIONS = {
    "bernoulli": ("s",),
    "log_mean": ("s", "t"),
    "harm_log_mean": ("s", "t"),
    "h_kernel": ("s",),
    "psi_star": ("s", "eps"),
    "alpha_zero": ("a", "b", "xi"),
    "alpha_star": ("a", "b", "xi", "eps"),
    "alpha_star_d1": ("a", "b", "xi", "eps"),
    "alpha_star_d2": ("a", "b", "xi", "eps"),
    "alpha_dual": ("a", "b", "j", "eps"),
    "beta": ("a", "b", "eps"),
    "hh_kernel": ("a", "b", "q", "eps"),
}


def parse_grid(text, names):
    """``"a=0:1:3,b=2;5"`` -> dict of value arrays.

    Each item is ``name=value``, ``name=lo:hi:n`` (``n`` equispaced points)
    or ``name=v1;v2;...``.  Every argument of the function must appear once.
    """
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"grid item {item!r} is not name=values")
        k, v = (s.strip() for s in item.split("=", 1))
        if k not in names:
            raise ConfigError(f"unknown grid variable {k!r}; expected {list(names)}")
        if k in out:
            raise ConfigError(f"grid variable {k!r} given twice")
        try:
            if ":" in v:
                lo, hi, n = v.split(":")
                if int(n) < 1:
                    raise ValueError("point count must be positive")
                out[k] = np.linspace(float(lo), float(hi), int(n))
            else:
                out[k] = np.array([float(x) for x in v.split(";")])
        except ValueError as exc:
            raise ConfigError(f"bad grid values for {k!r}: {exc}") from None
    missing = [n for n in names if n not in out]
    if missing:
        raise ConfigError(f"grid lacks variables {missing}")
    return out


def _threads(args):
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("GRADFLOW_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"GRADFLOW_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("thread count must be positive")
    return n


def _load_config(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = RunConfig.from_file(args.config)
    if getattr(args, "eps", None) is not None:
        cfg.set("solver", "eps", float(args.eps))
    if getattr(args, "seed", None) is not None:
        cfg.set("solver", "seed", int(args.seed))
    return cfg


def _out(args, cfg=None, default=None):
    out = args.out or (cfg.resolve(cfg["output"]["dir"]) if cfg is not None else "") or default
    if not out:
        raise ConfigError("--out is required")
    return out


def _write_audit(traj, path, eps=None):
    """Per-record rows, then a ``#`` summary block (total residual over [0, T])."""
    a = audit(traj, eps)
    rows = [[s.t, s.E, s.R, s.D, c] for s, c in zip(a.samples, a.residual_cum)]
    write_csv(path, ["t", "E", "R", "D", "residual_cum"], rows)
    with open(path, "a", newline="\n") as fh:
        fh.write(f"# eps={fmt(a.eps)}\n# residual_total={fmt(a.residual)}\n"
                 f"# energy_monotone={str(a.energy_monotone()).lower()}\n")
    return a


# -- subcommands ---------------------------------------------------------------

def cmd_mesh(args):
    if args.cartesian:
        spec = args.cartesian
        dim_tok = spec[0].lower()
        if not dim_tok.endswith("d") or not dim_tok[:-1].isdigit():
            raise ConfigError("--cartesian expects DIM like 1d, 2d or 3d first")
        dim = int(dim_tok[:-1])
        nums = spec[1:]
        if len(nums) != 2 * dim + 1:
            raise ConfigError(f"--cartesian {dim}d needs {2 * dim} bounds and h")
        try:
            vals = [float(v) for v in nums]
        except ValueError:
            raise ConfigError("--cartesian bounds and h must be numbers") from None
        box = [(vals[2 * i], vals[2 * i + 1]) for i in range(dim)]
        try:
            t = build_cartesian(box, vals[-1])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        out = _out(args)
    else:
        cfg = _load_config(args)
        t = cfg.mesh()
        out = _out(args, cfg)
    save_mesh(t, out)
    rep = validate(t)
    print(f"mesh: {t.n_cells} cells, {t.n_faces} faces, h={t.h:.17g}, "
          f"zeta_inner={rep.zeta_inner:.6g}, zeta_face={rep.zeta_face:.6g}")
    return 0


def cmd_solve(args):
    cfg = _load_config(args)
    out = _out(args, cfg)
    t = cfg.mesh()
    spec = cfg.potentials()
    sc = cfg.scheme()
    dp = discretize(spec, t)
    rho0 = initial_state(t, cfg["solver"]["initial"], dp=dp, eps=sc.eps if sc.eps > 0 else None,
                         seed=cfg["solver"]["seed"])
    traj = solve(t, dp, rho0, sc)
    traj.meta["initial"] = cfg["solver"]["initial"]
    traj.meta["seed"] = cfg["solver"]["seed"]
    save_trajectory(traj, out)
    if cfg["output"]["audit"]:
        _write_audit(traj, os.path.join(out, "audit.csv"))
    print(f"solve: {len(traj)} records, {traj.n_steps} steps, t_end={traj.times[-1]:.17g}")
    return 0


def cmd_audit(args):
    if not args.traj:
        raise ConfigError("--traj is required")
    traj = load_trajectory(args.traj)
    out = args.out or os.path.join(args.traj, "audit.csv")
    a = _write_audit(traj, out, args.eps)
    print(f"audit: residual {a.residual:.3e}, energy monotone {a.energy_monotone()}")
    return 0


def cmd_lift(args):
    if not args.traj:
        raise ConfigError("--traj is required")
    traj = load_trajectory(args.traj)
    t = traj.tess
    out = _out(args, default=os.path.join(args.traj, "fields.csv"))
    header = ["t", "cell"] + [f"x{i + 1}" for i in range(t.dim)] + ["volume", "density"]
    geom = [",".join(fmt(v) for v in np.append(x, vol)) for x, vol in zip(t.centers, t.volumes)]
    with open(out, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for time, rho in zip(traj.times, traj.states):
            ts = fmt(time)
            for k, u in enumerate(rho / t.volumes):
                fh.write(f"{ts},{k},{geom[k]},{fmt(u)}\n")
    return 0


def cmd_special_table(args):
    if args.fn not in SPECIAL_FUNCTIONS:
        raise ConfigError(f"unknown function {args.fn!r}; expected one of {sorted(SPECIAL_FUNCTIONS)}")
    names = SPECIAL_FUNCTIONS[args.fn]
    grid = parse_grid(args.grid or "", names)
    fn = getattr(special_fn, args.fn)
    rows = []
    for combo in itertools.product(*(grid[n] for n in names)):
        with np.errstate(all="ignore"):
            v = fn(*combo)
        rows.append(list(combo) + [float(v)])
    header = list(names) + ["value"]
    if args.out:
        write_csv(args.out, header, rows)
    else:
        sys.stdout.write(",".join(header) + "\n")
        for r in rows:
            sys.stdout.write(",".join(fmt(v) for v in r) + "\n")
    return 0


def cmd_study(args):
    cfg = _load_config(args)
    out = _out(args, cfg)
    spec = cfg.study(threads=_threads(args))
    rep = run_study(spec)
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "report.csv"), ["level", "error", "order", "residual"],
              rep.csv_rows())
    text = rep.summary()
    with open(os.path.join(out, "report.txt"), "w", newline="\n") as fh:
        fh.write(text)
    sys.stdout.write(text)
    if not rep.passed:
        failed = [k for k, ok in rep.checks.items() if not ok]
        raise StudyFailed(f"study {spec.study} missed thresholds: {', '.join(failed)}")
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="gradflow-fv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gradflow-fv {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--out", help="output file or directory")
        sp.add_argument("--eps", type=float, help="override the diffusion strength")
        sp.add_argument("--seed", type=int, help="seed for random initial data")
        sp.add_argument("--threads", type=int, help="worker threads (default GRADFLOW_THREADS or 1)")
        return sp

    m = common(sub.add_parser("mesh", help="write an FVMESH file"))
    m.add_argument("--cartesian", nargs="+", metavar="ARG",
                   help="DIM lo1 hi1 [lo2 hi2 ...] h, e.g. 1d 0 1 0.25")
    m.set_defaults(func=cmd_mesh)
    common(sub.add_parser("solve", help="integrate and write a trajectory directory")).set_defaults(
        func=cmd_solve)
    a = common(sub.add_parser("audit", help="EDB audit of a trajectory"))
    a.add_argument("--traj", help="trajectory directory")
    a.set_defaults(func=cmd_audit)
    li = common(sub.add_parser("lift", help="cell-density tables per record time"))
    li.add_argument("--traj", help="trajectory directory")
    li.set_defaults(func=cmd_lift)
    st = common(sub.add_parser("special-table", help="tabulate a special function"))
    st.add_argument("--fn", required=True, help="function name")
    st.add_argument("--grid", help="e.g. 'a=0.5:2:4,b=1,xi=-1;0;1,eps=0.1'")
    st.set_defaults(func=cmd_special_table)
    common(sub.add_parser("study", help="run a convergence study")).set_defaults(func=cmd_study)
    return p


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors count as validation failures
        return 0 if not exc.code else 1
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except GradflowError as exc:
        sys.stderr.write(f"ERROR {exc.code}: {exc}\n")
        return exc.exit_status
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"ERROR io: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
