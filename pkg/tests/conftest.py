import pytest

from posereg.synth import make_procedural_model


@pytest.fixture(scope="session")
def model():
    return make_procedural_model("box")


@pytest.fixture(scope="session")
def ellipsoid_model():
    return make_procedural_model("ellipsoid", seed=1)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
