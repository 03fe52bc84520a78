import os

import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, name)(ok, detail)``; asserts ``ok``."""
    def open_(n: int, name: str):
        _ACCEPTANCE[n] = (name, "FAIL", "did not finish")

        def close(ok: bool, detail: str = "", status: str | None = None):
            _ACCEPTANCE[n] = (name, status or ("PASS" if ok else "FAIL"), detail)
            print(f"criterion {n} {name}: {_ACCEPTANCE[n][1]} {detail}")
            assert ok, f"criterion {n} ({name}) failed: {detail}"

        return close

    return open_


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, status, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] {n:>2}. {name}: {detail}")
