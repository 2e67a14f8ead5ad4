import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("muonlab", deadline=None, max_examples=40)
settings.load_profile("muonlab")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._acceptance_lines = {}


@pytest.fixture
def report(request):
    """Record one ``AC<n> PASS|FAIL`` line; printed in the terminal summary."""
    lines = request.config._acceptance_lines

    def record(name, ok, detail):
        lines[name] = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        print(lines[name])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for name in sorted(lines, key=lambda n: int(n[2:])):
            terminalreporter.write_line(lines[name])
