import numpy as np
import pytest

from cscseg import backend


@pytest.fixture(scope="session", autouse=True)
def warm_backend():
    # Compile (or load cached) kernels once so timed tests measure the
    # algorithms, not the JIT.
    backend.warmup()


@pytest.fixture
def stream():
    from cscseg.rng import Stream

    return Stream(1234, "tests")
