import numpy as np
import pytest

from pie2d import examples
from pie2d.pie_converter import convert


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


_PAIRS = {}


def pie_pair(name, **params):
    """Converted bundled example, cached across tests."""
    key = (name, tuple(sorted(params.items())))
    if key not in _PAIRS:
        _PAIRS[key] = convert(examples.load(name, **params))
    return _PAIRS[key]


# acceptance scoreboard: criterion number -> (passed, detail)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
