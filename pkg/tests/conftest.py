import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("v2v", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("v2v")

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    def log(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {detail}"
        print(ACCEPTANCE_LINES[number])
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def vlm():
    from v2v.vlm import MicroVLM
    return MicroVLM()


@pytest.fixture(scope="session")
def toy_result():
    """The color-card toy generator trained once per session (2000 Adam steps)."""
    from v2v.toy import ToyConfig, train_toy
    return train_toy(ToyConfig())
