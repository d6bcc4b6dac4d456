import numpy as np
import pytest

import acceptance_log


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for ac in range(1, 12):
        if ac in acceptance_log.RESULTS:
            ok, detail = acceptance_log.RESULTS[ac]
            terminalreporter.write_line(f"AC{ac:<2} {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"AC{ac:<2} NOT RUN")
