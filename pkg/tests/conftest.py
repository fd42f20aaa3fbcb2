import os
import sys
import time

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from helpers import ACCEPTANCE_LINES  # noqa: E402
from xmodal import simgen  # noqa: E402
from xmodal.detectors import default_registry  # noqa: E402
from xmodal.matching import build_entity_map, merge  # noqa: E402
from xmodal.telemetry import Modality  # noqa: E402


class SimRun:
    def __init__(self, config):
        started = time.perf_counter()
        self.config = config
        self.output = simgen.generate(config)
        self.datasets = self.output.datasets
        self.labels = self.output.labels
        self.detection_sets = default_registry().run_all(self.datasets)
        self.entity_map = build_entity_map(self.datasets[Modality.ENDPOINT])
        self.merged = merge(self.detection_sets, self.entity_map)
        self.build_seconds = time.perf_counter() - started


@pytest.fixture(scope="session")
def small_sim():
    """120 entities over 6 days with every scenario kind."""
    return SimRun(simgen.default_config(n_entities=120, days=6, n_shlayer=4, n_trojan=2, n_lookalike=8))


@pytest.fixture(scope="session")
def default_sim():
    return SimRun(simgen.default_config())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
