from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from rfidgp import gp_engine, signal_sim

settings.register_profile("rfidgp", max_examples=60, deadline=None)
settings.load_profile("rfidgp")


@pytest.fixture(scope="session")
def small_spec():
    return signal_sim.EnvironmentSpec(id="small", phase_offset=0.3, noise_sigma=0.02,
                                      spike_rate=0.05, spike_scale=0.08, rssi_sigma=1.0, seed=7)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return signal_sim.generate_dataset(small_spec, distances=np.arange(2.0, 20.5, 1.0),
                                       angles=[-15.0, 0.0, 15.0], samples_per_position=20)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    train, _ = signal_sim.split_dataset(small_dataset, 0.8, seed=0)
    return gp_engine.train(train, cap=400, seed=0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
