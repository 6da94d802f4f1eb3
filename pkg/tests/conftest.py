import numpy as np
import pytest

from scatter_ra.core_data import LaserReading
from scatter_ra.simulator import DatasetConfig, generate_dataset


@pytest.fixture(scope="session")
def small_config():
    return DatasetConfig(n_samples=5, readings_per_sample=(5, 6, 5, 7, 5), stylus_tracks=3, length_steps=512)


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return generate_dataset(small_config, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_reading(rng, t=64, reading_id="r"):
    return LaserReading(rng.integers(0, 256, size=(20, t), dtype=np.uint8), reading_id=reading_id)


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Call ``criterion(number, passed, detail)``; the line is printed at the
    end of the run and a failure also fails the test.
    """

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
