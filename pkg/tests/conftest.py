import numpy as np
import pytest

from intcl.model import DesiredTrajectory, PlantModel, register_model, registered_models


def scalar_regressor(x, t):
    Y = np.zeros((1, 1))
    Y[0, 0] = x[0]
    return Y


def scalar_ref(t):
    return np.array([np.sin(t)])


def scalar_ref_dot(t):
    return np.array([np.cos(t)])


SCALAR = PlantModel(n=1, m=1, regressor=scalar_regressor, true_theta=np.array([-1.0]),
                    name="scalar_toy")
if SCALAR.name not in registered_models():
    register_model(SCALAR, DesiredTrajectory(scalar_ref, scalar_ref_dot, name="scalar_toy"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Collect one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def _report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
