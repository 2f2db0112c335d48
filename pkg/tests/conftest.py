import numpy as np
import pytest

from popsyn import _kernels
from popsyn.survey_data import BINARY, ColumnSpec, SurveySchema, SurveyTable

BACKENDS = ["numpy"] + (["numba"] if _kernels.numba_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(prev)


def toy_table(n_a, n_b):
    """Single binary column with ``n_a`` A rows followed by ``n_b`` B rows."""
    schema = SurveySchema((ColumnSpec("X", BINARY, ("A", "B")),))
    return SurveyTable(schema, {"X": np.array([0] * n_a + [1] * n_b)})


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
