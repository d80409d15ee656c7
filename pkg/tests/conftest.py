from __future__ import annotations

import pytest

from randomhorizon.model import ClaimSpec, validate, study_config
from randomhorizon.paths import generate_ensemble

# filled by test_acceptance; echoed after the run so the verdicts survive output capture
ACCEPTANCE_LINES: list[str] = []


def small_config(**overrides):
    """Study market on a coarse grid with few paths, for unit tests."""
    kw = dict(n_steps=20, n_paths=4096, seed=11)
    kw.update(overrides)
    return validate(study_config(**kw))


@pytest.fixture(scope="session")
def small_vc():
    return small_config()


@pytest.fixture(scope="session")
def small_ensemble(small_vc):
    return generate_ensemble(small_vc)


@pytest.fixture(scope="session")
def small_zero_vc(small_vc):
    return small_vc.with_claim(ClaimSpec("zero"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
