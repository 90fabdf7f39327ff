import numpy as np
import pytest

from heatlab.forms import assemble_form
from heatlab.space import cycle, explicit, path, torus


@pytest.fixture
def two_point():
    """Two unit masses at distance 1 with ``J(a, b) = 1``."""
    sp = explicit([[0.0, 1.0], [1.0, 0.0]], mass=[1.0, 1.0])
    return assemble_form(sp, None, {"kind": "explicit", "matrix": [[0, 1], [1, 0]]})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_forms(count, seed=0, n_max=50):
    """Mixed local/jump forms with random masses on small graphs."""
    rng = np.random.default_rng(seed)
    out = []
    makers = [cycle, path, lambda n, mass=None: torus(max(2, int(np.sqrt(n))), mass=mass)]
    for i in range(count):
        n = int(rng.integers(4, n_max // 2)) if i % 3 == 2 else int(rng.integers(4, n_max))
        maker = makers[i % 3]
        sp = maker(n)
        sp = sp.with_mass(rng.uniform(0.5, 2.0, sp.n))
        local = {"kind": "nearest_neighbor", "weight": float(rng.uniform(0.1, 2))} \
            if rng.random() < 0.7 else None
        jump = {"kind": "stable", "alpha": 1.0, "beta": float(rng.uniform(0.5, 1.9)),
                "scale": float(rng.uniform(0.1, 2))}
        if local is not None and rng.random() < 0.3:
            jump = None
        out.append(assemble_form(sp, local, jump))
    return out


_ACCEPTANCE = {}


@pytest.fixture
def criterion(capsys):
    """Record and print the one-line verdict of an acceptance criterion."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE[number] = line
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
