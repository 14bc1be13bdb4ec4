import os

import pytest
from hypothesis import settings

from metaiot import channel as ch
from metaiot import harness, sensing

settings.register_profile("ci", max_examples=100, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


# Reduced scenario shared by the sensing and harness tests.
SMALL_CONFIG = harness.ScenarioConfig(geometry=ch.SystemGeometry(location_count=2),
                                      grid=ch.FrequencyGrid.linspace(n=101), horizon=40, n_dh=4,
                                      seed=3)
SMALL_PIPELINE = sensing.PipelineConfig(l_cut=16, depth=2, base_channels=4, epochs=80)


@pytest.fixture(scope="session")
def small_setup():
    sim = harness.Simulator(SMALL_CONFIG)
    series = harness.generate_series(SMALL_CONFIG, simulator=sim)
    pipe = sensing.train_pipeline(series, SMALL_PIPELINE, SMALL_CONFIG.seed, SMALL_CONFIG.fingerprint())
    return SMALL_CONFIG, sim, series, pipe


# One verdict line per acceptance criterion, collected by tests/test_acceptance.py.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(line)
