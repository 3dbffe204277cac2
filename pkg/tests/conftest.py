import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from arm3d.geometry import available_backends


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_generate_tests(metafunc):
    # Run kernel-level tests against every importable geometry backend.
    if "geometry_backend" in metafunc.fixturenames:
        backends = available_backends()
        metafunc.parametrize("geometry_backend", list(backends.values()),
                             ids=list(backends.keys()))
