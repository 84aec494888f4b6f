from pathlib import Path

import pytest

from restmarl.semantics import load_fixture_embeddings
from restmarl.spec_model import load_spec, parse_spec
from restmarl.sut_sim import sim_spec_text

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def table():
    return load_fixture_embeddings()


@pytest.fixture(scope="session")
def sim_spec():
    return parse_spec(sim_spec_text(), "yaml")


@pytest.fixture(scope="session")
def market_spec():
    return load_spec(FIXTURES / "market_register.yaml")


CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Call with (number, passed, detail); records one line and returns ``passed``."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
