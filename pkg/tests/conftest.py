import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def small():
    from fttrain.sim import builtin_scenario

    return builtin_scenario("small")


@pytest.fixture(scope="session")
def calibrated():
    from fttrain.sim import builtin_scenario

    return builtin_scenario("calibrated")


@pytest.fixture(scope="session")
def models(small):
    from fttrain.sim.runner import default_models

    return default_models(small.trace)


@pytest.fixture(scope="session")
def corpus(small):
    from fttrain.sim.corpus import detection_corpus

    return detection_corpus(small, 13, 11, seed=0)
