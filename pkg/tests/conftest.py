"""Shared fixtures: a coarse problem cache so expensive builds happen once.

Thread caps are set before the first numpy import; the whole suite is
single-threaded for determinism and because the solves are memory-bound.
"""

import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, os.environ.get("PERIPROP_THREADS", "1"))

import pytest

from periprop.geometry import BodyShape
from periprop.timeloop import SimConfig


# coarse scale: fast enough for unit tests, fine enough to exercise every path
COARSE = dict(R=4.0, size_far=1.0, size_body=0.3, N=50)


def coarse_config(h: float = 2.0, **overrides) -> SimConfig:
    kw = dict(COARSE, h=h, omega="auto")
    kw.update(overrides)
    return SimConfig(**kw)


@pytest.fixture(scope="session")
def problem_cache():
    """Memoized LinearProblem.build keyed by (shape, config); shared session-wide."""
    from periprop.thrust import LinearProblem

    cache = {}

    def get(shape_name: str, cfg: SimConfig | None = None):
        cfg = cfg or coarse_config()
        key = (shape_name, cfg.R, cfg.size_far, cfg.size_body, cfg.N, cfg.h, cfg.mode)
        if key not in cache:
            cache[key] = LinearProblem.build(BodyShape.from_name(shape_name), cfg)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def coarse_drop(problem_cache):
    return problem_cache("drop")


@pytest.fixture(scope="session")
def coarse_flipped(problem_cache):
    return problem_cache("flipped-drop")


@pytest.fixture(scope="session")
def coarse_ellipsoid(problem_cache):
    return problem_cache("ellipsoid")


def pytest_collection_modifyitems(items):
    # acceptance carries the multi-hour desk runs; everything else goes first
    items.sort(key=lambda it: it.path.name == "test_acceptance.py")
