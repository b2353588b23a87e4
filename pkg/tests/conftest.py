import pytest

from psglite.counters import COUNTERS


@pytest.fixture(autouse=True)
def _fresh_counters():
    COUNTERS.reset()
    yield
