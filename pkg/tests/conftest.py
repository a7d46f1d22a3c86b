import numpy as np
import pytest

from anneal_decode.models import M2_PRIME_SPEC, M2_SPEC, tabular_from_spec


@pytest.fixture
def m2():
    return tabular_from_spec(M2_SPEC, name="M2")


@pytest.fixture
def m2p():
    return tabular_from_spec(M2_PRIME_SPEC, name="M2prime")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Call ``criterion(n, ok, detail)`` to log and assert one acceptance criterion."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
