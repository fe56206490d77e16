import time
from pathlib import Path

import numpy as np
import pytest

from prospective.pipeline import PipelineConfig, run_pipeline
from prospective.synth import default_config, generate_population


@pytest.fixture(scope="session")
def default_population():
    """The calibrated generator at its default size and seed."""
    return generate_population(default_config())


@pytest.fixture(scope="session")
def pipeline_pair(tmp_path_factory):
    """Two complete default runs with the same master seed, written to separate directories."""
    runs = []
    for tag in ("first", "second"):
        out = tmp_path_factory.mktemp(f"pipeline_{tag}")
        start = time.perf_counter()
        run = run_pipeline(PipelineConfig(out=str(out), threads=1))
        runs.append((run, Path(out), time.perf_counter() - start))
    return runs


@pytest.fixture(scope="session")
def pipeline_run(pipeline_pair):
    return pipeline_pair[0][0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
