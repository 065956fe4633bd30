import numpy as np
import pytest

from ganvert.generator import GeneratorConfig, init_weights


@pytest.fixture(scope="session")
def bundle():
    return init_weights(GeneratorConfig(), 7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def gap_report(bundle):
    """Default two-step inversion on 20 seeded targets of every kind; shared
    by the harness and acceptance tests because it is the slowest fixture."""
    from ganvert.harness import TARGET_KINDS, gap_experiment

    return gap_experiment(bundle, 20, TARGET_KINDS)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
