import numpy as np
import pytest

from pyrosurrogate import plantsim
from pyrosurrogate.forest import HyperParams, fit_forest
from pyrosurrogate.telemetry import fit_normalizer, flatten


@pytest.fixture(scope="session")
def plant_config():
    return plantsim.default_config()


@pytest.fixture(scope="session")
def small_records(plant_config):
    return plantsim.generate_dataset(plant_config, 400)


@pytest.fixture(scope="session")
def small_table(small_records):
    return flatten(small_records, 3, ["nox", "co2", "o2"], state_names=plantsim.STATE_NAMES)


@pytest.fixture(scope="session")
def small_models(small_table):
    """Normalized NOx, CO2 and O2 forests on the small scenario."""
    table = fit_normalizer(small_table)
    hyper = HyperParams(n_estimators=10, seed=3)
    return {t: fit_forest(table, t, hyper) for t in ("nox", "co2", "o2")}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
