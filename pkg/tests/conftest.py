import numpy as np
import pytest

from gradflow_fv.potentials import PotentialSpec, discretize
from gradflow_fv.tessellation import build_cartesian


def random_state(t, rng, low=0.2, high=2.0):
    rho = rng.uniform(low, high, t.n_cells) * t.volumes
    return rho / rho.sum()


def make(dim, n, V="zero", W="zero"):
    box = [(0.0, 1.0)] * dim
    t = build_cartesian(box, 1.0 / n)
    return t, discretize(PotentialSpec.from_strings(V, W), t)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the terminal summary repeats them all."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
