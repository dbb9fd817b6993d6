import pytest

from guidedsynth.config import RunConfig
from guidedsynth.pipeline import train_models


@pytest.fixture(scope="session")
def default_config():
    return RunConfig()


@pytest.fixture(scope="session")
def trained(default_config):
    """Models of the default configuration, trained once per session."""
    return train_models(default_config)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
