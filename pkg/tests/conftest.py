import os

import numpy as np
import pytest

from relcollapse import _backend


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_report_header(config):
    return (f"relcollapse kernels: {'numba' if _backend.USE_NUMBA else 'numpy'} "
            f"(ARTIFACT_NUMBA={os.environ.get('ARTIFACT_NUMBA', 'unset')})")



def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance suite's one-line verdicts at the end of the run."""
    import sys
    lines = [l for name, mod in list(sys.modules.items()) if name.endswith("test_acceptance")
             for l in getattr(mod, "LINES", [])]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
