"""Shared fixtures: preset configs and their calibrated thresholds.

Calibration is the expensive part of the suite, so each scenario family is
calibrated once per session and reused by unit and acceptance tests alike.
"""

import pytest

from gridmark import calibrate_scenario
from gridmark.presets import load_preset


@pytest.fixture(scope="session")
def clean_config():
    return load_preset("clean")


@pytest.fixture(scope="session")
def dtk1_config():
    return load_preset("dt-k1")


@pytest.fixture(scope="session")
def procnoise_config():
    return load_preset("dt-with-process-noise")


@pytest.fixture(scope="session")
def amp_config():
    return load_preset("dt-k-scaling")


@pytest.fixture(scope="session")
def nl_config():
    return load_preset("nonlinear-dt")


@pytest.fixture(scope="session")
def sub_config():
    return load_preset("substitution")


@pytest.fixture(scope="session")
def replay_config():
    return load_preset("replay")


@pytest.fixture(scope="session")
def auth_config():
    return load_preset("authenticated-channel")


# Thresholds are fitted on clean runs from the calibration seed block, which
# never overlaps the evaluation run indices. The clean, dt-k1, and
# authenticated presets share one scenario family (same model, horizon,
# detector, and base seed), so one calibration serves all three.

@pytest.fixture(scope="session")
def thresholds_default(clean_config):
    return calibrate_scenario(clean_config, n_runs=50)


@pytest.fixture(scope="session")
def thresholds_fast(sub_config):
    # substitution and replay presets share the short-horizon clean family
    return calibrate_scenario(sub_config, n_runs=50)


@pytest.fixture(scope="session")
def thresholds_procnoise(procnoise_config):
    return calibrate_scenario(procnoise_config, n_runs=50)


@pytest.fixture(scope="session")
def thresholds_amp(amp_config):
    # the gain band's 1/240 tail quantile needs a few hundred blocks
    return calibrate_scenario(amp_config, n_runs=100)


@pytest.fixture(scope="session")
def thresholds_nl(nl_config):
    # the 1/240 tail quantile needs a few hundred blocks to stabilize
    return calibrate_scenario(nl_config, n_runs=100)
