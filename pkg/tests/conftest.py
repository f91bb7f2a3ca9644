import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_sim():
    """Three subjects, three pairs of 60 s trials on a 16-channel montage."""
    from attndec.simulator import SimConfig, gen_dataset

    config = SimConfig(n_subjects=3, n_pairs=3, trial_seconds=60, n_channels=16, seed=5)
    records, truth = gen_dataset(config)
    return config, records, truth


@pytest.fixture(scope="session")
def small_records(small_sim):
    return small_sim[1]


@pytest.fixture
def fast_decode():
    from attndec.decoding import DecodeConfig

    return DecodeConfig(n_phase_surrogates=0, n_circular_shifts=20, seed=3)


@pytest.fixture(scope="session")
def acceptance(request):
    """Collects one result line per acceptance criterion for the run summary."""
    if not hasattr(request.config, "acceptance_lines"):
        request.config.acceptance_lines = []
    return request.config.acceptance_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
