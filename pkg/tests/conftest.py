import pytest

from cits_sim.attack import load_scenario, load_vuln_catalog
from cits_sim.fixtures import fixture_path
from cits_sim.topology import load_topology


@pytest.fixture(scope="session")
def reference():
    return load_topology(fixture_path("reference.json"))


@pytest.fixture(scope="session")
def scenario1_topology():
    return load_topology(fixture_path("scenario1.json"))


@pytest.fixture(scope="session")
def scenario2_topology():
    return load_topology(fixture_path("scenario2.json"))


@pytest.fixture(scope="session")
def catalog():
    return load_vuln_catalog()


@pytest.fixture(scope="session")
def s1():
    return load_scenario(fixture_path("attack_s1.json"))


@pytest.fixture(scope="session")
def s2():
    return load_scenario(fixture_path("attack_s2.json"))


@pytest.fixture(scope="session")
def s2_hold():
    return load_scenario(fixture_path("attack_s2_hold.json"))


# Acceptance outcomes, one line per criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
