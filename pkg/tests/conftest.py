import numpy as np
import pytest

from spreadfit.estimation import synthetic_dataset
from spreadfit.models import make_model

# Reference SIR parameters (thousands, days) and their +/-2 SE intervals.
REFERENCE = {"beta": 0.0153, "gamma": 0.3643, "S0": 156.6120, "I0": 2.2726}
REFERENCE_INTERVALS = {
    "beta": (0.0130, 0.0177),
    "gamma": (0.2830, 0.4456),
    "S0": (139.0034, 174.2207),
    "I0": (0.6626, 3.8827),
}
DAYS = np.arange(15.0)

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def sir_model():
    return make_model("sir_mass_action")


@pytest.fixture(scope="session")
def reference(sir_model):
    return sir_model.vector(REFERENCE)


@pytest.fixture(scope="session")
def clean_data(sir_model, reference):
    return synthetic_dataset(sir_model, reference, DAYS, label="reference noise-free")


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
