import pytest

from dpslab.model import Direction, DpsModel

# arrival rates used throughout: lambda = (0.2, 0.3), mu = (1, 1)
RATES = dict(arrival_rates=(0.2, 0.3), service_rates=(1.0, 1.0))


@pytest.fixture
def reference_model():
    """Two classes with weights (1, 2)."""
    return DpsModel(weights=(1.0, 2.0), **RATES)


@pytest.fixture
def egalitarian_model():
    return DpsModel(weights=(2.0, 2.0), **RATES)


@pytest.fixture
def mm1_model():
    return DpsModel((0.5,), (1.0,), (1.0,))


@pytest.fixture
def half_half():
    return Direction((0.5, 0.5))
