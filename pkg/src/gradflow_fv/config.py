"""INI run configuration.

Sections and keys (all optional, defaults shown by :data:`SCHEMA`):

``[mesh]``
    ``type`` (``cartesian`` or ``file``), ``dim``, ``box`` (``lo,hi`` per
    axis separated by ``;``), ``h``, ``file`` (FVMESH path for ``type=file``).
``[potential]``
    ``V`` and ``W`` one-line potential specs, e.g. ``quadratic center=0.5 k=1``.
``[solver]``
    ``kind`` (``sg``/``upwind``), ``eps``, ``dt`` (``auto`` or a number),
    ``integrator``, ``t_end``, ``record_every``, ``safety``, ``max_steps``,
    ``energy_guard``, ``initial`` (initial-state spec), ``seed``.
``[study]``
    ``study``, ``levels`` (cells per axis), ``eps_list``, ``sample_every``,
    ``min_order``, ``max_ratio``, ``edb_factor``.  The study reuses the mesh
    box, the potentials and ``eps``/``t_end``/``initial``/``integrator``/
    ``safety`` from ``[solver]``.
``[output]``
    ``dir`` (used when ``--out`` is absent) and ``audit`` (also write
    ``audit.csv`` next to a solved trajectory).

Unknown sections or keys are errors.  :meth:`RunConfig.to_string` writes
every key, so parse, serialize and parse again gives the same config.
"""
import configparser
import os

from .errors import ConfigError
from .experiments import StudySpec
from .potentials import PotentialSpec
from .scheme import SchemeConfig
from .tessellation import build_cartesian, load_mesh

__all__ = ["SCHEMA", "RunConfig", "parse_box", "format_box"]


def _float(v):
    return float(v)


def _int(v):
    return int(v)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _str(v):
    return str(v).strip()


def _dt(v):
    s = str(v).strip().lower()
    return None if s == "auto" else float(s)


def _floats(v):
    return tuple(float(x) for x in str(v).split(",") if x.strip())


def _ints(v):
    return tuple(int(x) for x in str(v).split(",") if x.strip())


def parse_box(v):
    """``"0,1;0,2"`` -> ``((0.0, 1.0), (0.0, 2.0))``."""
    axes = []
    for part in str(v).split(";"):
        vals = [float(x) for x in part.split(",")]
        if len(vals) != 2:
            raise ValueError(f"box axis {part!r} is not lo,hi")
        axes.append(tuple(vals))
    return tuple(axes)


def format_box(box):
    return ";".join(f"{lo!r},{hi!r}" for lo, hi in box)


def _fmt(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return format_box(v)
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return str(v)


# section -> key -> (parser, default)
SCHEMA = {
    "mesh": {
        "type": (_str, "cartesian"),
        "dim": (_int, 1),
        "box": (parse_box, ((0.0, 1.0),)),
        "h": (_float, 0.0625),
        "file": (_str, ""),
    },
    "potential": {
        "V": (_str, "zero"),
        "W": (_str, "zero"),
    },
    "solver": {
        "kind": (_str, "sg"),
        "eps": (_float, 0.1),
        "dt": (_dt, None),
        "integrator": (_str, "explicit_euler"),
        "t_end": (_float, 1.0),
        "record_every": (_float, 0.0),
        "safety": (_float, 0.9),
        "max_steps": (_int, 10_000_000),
        "energy_guard": (_bool, True),
        "initial": (_str, "uniform"),
        "seed": (_int, 0),
    },
    "study": {
        "study": (_str, "converge_h"),
        "levels": (_ints, (16, 32, 64, 128)),
        "eps_list": (_floats, (0.4, 0.2, 0.1, 0.05)),
        "sample_every": (_float, 0.0),
        "min_order": (_float, 0.8),
        "max_ratio": (_float, 0.25),
        "edb_factor": (_float, 10.0),
    },
    "output": {
        "dir": (_str, ""),
        "audit": (_bool, False),
    },
}


class RunConfig:
    """Typed view of an INI run configuration; ``cfg[section][key]``."""

    def __init__(self, values=None, base_dir=None):
        self.values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
        self.base_dir = base_dir
        for sec, kv in (values or {}).items():
            for k, v in kv.items():
                self.set(sec, k, v)

    def __getitem__(self, section):
        return self.values[section]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def set(self, section, key, value):
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]; "
                              f"expected one of {sorted(SCHEMA[section])}")
        parser = SCHEMA[section][key][0]
        if isinstance(value, str):
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from None
        self.values[section][key] = value

    @classmethod
    def from_string(cls, text, base_dir=None):
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        values = {sec: dict(cp[sec]) for sec in cp.sections()}
        return cls(values, base_dir=base_dir)

    @classmethod
    def from_file(cls, path):
        if not os.path.isfile(path):
            raise ConfigError(f"config file {path} not found", code="config_not_found")
        with open(path) as fh:
            text = fh.read()
        return cls.from_string(text, base_dir=os.path.dirname(os.path.abspath(path)))

    def to_string(self):
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for k in keys:
                lines.append(f"{k} = {_fmt(self.values[sec][k])}")
            lines.append("")
        return "\n".join(lines)

    def resolve(self, path):
        if not path or os.path.isabs(path) or self.base_dir is None:
            return path
        return os.path.join(self.base_dir, path)

    # -- builders ------------------------------------------------------------

    def mesh(self):
        m = self["mesh"]
        if m["type"] == "file":
            if not m["file"]:
                raise ConfigError("[mesh] type=file needs file=<path>")
            return load_mesh(self.resolve(m["file"]))
        if m["type"] != "cartesian":
            raise ConfigError(f"[mesh] type must be cartesian or file, got {m['type']!r}")
        box = m["box"]
        if len(box) != m["dim"]:
            raise ConfigError(f"[mesh] box has {len(box)} axes but dim={m['dim']}")
        try:
            return build_cartesian(box, m["h"])
        except ValueError as exc:
            raise ConfigError(f"[mesh] {exc}") from None

    def potentials(self):
        p = self["potential"]
        return PotentialSpec.from_strings(p["V"], p["W"], base_dir=self.base_dir)

    def scheme(self):
        s = self["solver"]
        kind = s["kind"].lower()
        eps = 0.0 if kind in ("up", "upwind") else s["eps"]
        return SchemeConfig(kind=kind, eps=eps, dt=s["dt"], integrator=s["integrator"],
                            t_end=s["t_end"], record_every=s["record_every"],
                            safety=s["safety"], max_steps=s["max_steps"],
                            energy_guard=s["energy_guard"])

    def study(self, threads=1):
        st, s, m, p = self["study"], self["solver"], self["mesh"], self["potential"]
        return StudySpec(study=st["study"], dim=m["dim"], box=m["box"], levels=st["levels"],
                         eps=s["eps"], eps_list=st["eps_list"], V=p["V"], W=p["W"],
                         rho0=s["initial"], T=s["t_end"], sample_every=st["sample_every"],
                         integrator=s["integrator"], safety=s["safety"],
                         min_order=st["min_order"], max_ratio=st["max_ratio"],
                         edb_factor=st["edb_factor"], seed=s["seed"], threads=threads,
                         base_dir=self.base_dir)
