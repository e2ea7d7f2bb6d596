import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from eppslab.gaussian import GaussianModelParams  # noqa: E402


@pytest.fixture
def model_params():
    return GaussianModelParams.defaults()
