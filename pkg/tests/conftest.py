from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from avforge.rig.toy import make_toy_rig  # noqa: E402


@pytest.fixture(scope="session")
def toy_rig():
    return make_toy_rig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
