from __future__ import annotations

import os
from pathlib import Path

import pytest

from paerpr.harness import ExperimentConfig, Pipeline
from paerpr.harness.pipeline import CACHE_ENV

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE_CONFIG = ROOT / "configs" / "acceptance.json"

# (number, name, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance_config() -> ExperimentConfig:
    return ExperimentConfig.load(ACCEPTANCE_CONFIG)


@pytest.fixture(scope="session")
def acceptance_pipe(acceptance_config, tmp_path_factory) -> Pipeline:
    """Shared pipeline; set PAERPR_CACHE to reuse checkpoints across sessions."""
    cache = os.environ.get(CACHE_ENV) or tmp_path_factory.mktemp("acceptance-cache")
    return Pipeline(acceptance_config, cache)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {name}: {detail}")
