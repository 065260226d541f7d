import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradflow_fv.config import RunConfig, format_box, parse_box
from gradflow_fv.errors import ConfigError

TEXT = """
[mesh]
dim = 2
box = 0,1;0,2   # unit by two
h = 0.25
[potential]
V = quadratic center=0.5,1 k=2
W = gaussian amplitude=1 width=0.25
[solver]
kind = upwind
t_end = 0.2
dt = auto
energy_guard = no
[study]
levels = 4,8,16
[output]
audit = yes
"""


def test_parse_and_build():
    cfg = RunConfig.from_string(TEXT)
    assert cfg["mesh"]["box"] == ((0.0, 1.0), (0.0, 2.0))
    assert cfg["solver"]["dt"] is None and cfg["output"]["audit"] is True
    t = cfg.mesh()
    assert t.n_cells == 32
    sc = cfg.scheme()
    assert sc.kind == "upwind" and sc.eps == 0.0 and not sc.energy_guard
    assert cfg.potentials().W.name == "gaussian"
    assert cfg.study(threads=2).levels == (4, 8, 16)


def test_round_trip_idempotent():
    cfg = RunConfig.from_string(TEXT)
    s1 = cfg.to_string()
    again = RunConfig.from_string(s1)
    assert again == cfg
    assert again.to_string() == s1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(1e-3, 10)), min_size=1, max_size=3))
def test_box_round_trip(axes):
    box = tuple((lo, lo + w) for lo, w in axes)
    assert parse_box(format_box(box)) == box


@pytest.mark.parametrize("text", [
    "[mesh]\nshape = cube\n",
    "[wat]\nx = 1\n",
    "[mesh]\nh = small\n",
    "[solver]\nenergy_guard = maybe\n",
    "[mesh]\nbox = 0,1,2\n",
    "no section header\n",
])
def test_rejects(text):
    with pytest.raises(ConfigError):
        RunConfig.from_string(text)


def test_builder_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_string("[mesh]\ndim = 2\n").mesh()
    with pytest.raises(ConfigError):
        RunConfig.from_string("[mesh]\ntype = file\n").mesh()
    with pytest.raises(ConfigError) as e:
        RunConfig.from_file(str(tmp_path / "missing.ini"))
    assert e.value.code == "config_not_found"


def test_relative_paths(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[output]\ndir = out\n")
    cfg = RunConfig.from_file(str(p))
    assert cfg.resolve(cfg["output"]["dir"]) == str(tmp_path / "out")
