import functools

import pytest

from rlsforget import harness
from rlsforget.cli import apply_overrides


@functools.lru_cache(maxsize=None)
def cached_run(case: str, algos: tuple[str, ...] = ("ef", "df1", "df2", "pef"), mu=None, seed=None, duration=None):
    cfg = apply_overrides(harness.builtin_case(case), algos=list(algos), mu=mu, seed=seed, duration=duration)
    trace, summary = harness.run(cfg)
    return cfg, trace, summary


@pytest.fixture(scope="session")
def c1_run():
    return cached_run("C1")


@pytest.fixture(scope="session")
def c2_run():
    return cached_run("C2")
