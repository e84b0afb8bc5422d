import os
from pathlib import Path

import numpy as np
import pytest

from bistable_lob.ensemble import Ensemble, run_ensemble
from bistable_lob.market import MarketConfig

BASELINE_SEED = 2025
BASELINE_RUNS = 50

# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE = {}


def _cached_ensemble(base_seed):
    """Baseline ensemble, loaded from $BISTABLE_LOB_CACHE/ens<seed> when present."""
    cache = os.environ.get("BISTABLE_LOB_CACHE")
    path = Path(cache) / f"ens{base_seed}" if cache else None
    if path is not None and (path / "manifest.json").exists():
        return Ensemble.load(path)
    ens = run_ensemble(MarketConfig(), BASELINE_RUNS, base_seed)
    if path is not None:
        ens.save(path)
    return ens


@pytest.fixture(scope="session")
def baseline_ensemble():
    return _cached_ensemble(BASELINE_SEED)


@pytest.fixture(scope="session")
def ensemble_factory():
    cache = {}

    def get(seed):
        if seed not in cache:
            cache[seed] = _cached_ensemble(seed)
        return cache[seed]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")
        assert passed, f"criterion {number} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} | {detail}")
