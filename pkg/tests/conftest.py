"""Shared fixtures for the simulator tests."""

import pytest

import config
from afc_lib import CombParams, gaussian_pulse, make_grid, schedule
from src.services.experiment_config import default_experiment_config
from src.services.filter_chain import FilterChainParams, gate_window


@pytest.fixture(scope="session")
def grid():
    """Default 20 MHz / 2^14 point grid (1.22 kHz, 819.2 us)."""
    return make_grid(20.0, 2 ** 14)


@pytest.fixture(scope="session")
def square_comb():
    """6 us square-tooth comb, finesse 3, total depth 2.4 in one pass."""
    return CombParams.from_delay(6.0, finesse=3.0, peak_depth=2.4)


@pytest.fixture(scope="session")
def input_pulse(grid):
    return gaussian_pulse(grid, 0.0, 2.0, 1.0)


@pytest.fixture
def timeline():
    return schedule(6.0, 21.0, 4.0)


@pytest.fixture
def chain_params(timeline):
    return FilterChainParams(aom_window=gate_window(timeline, 0.5, 15.0))


@pytest.fixture
def cfg():
    return default_experiment_config()


@pytest.fixture
def log_to_tmp(tmp_path, monkeypatch):
    """Send the CLI log file into the test's temporary directory."""
    monkeypatch.setattr(config, "LOG_FILE", str(tmp_path / "afcsim.log"))
    return tmp_path
