import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tndsim.scenarios import build_scenario


@pytest.fixture(scope="session")
def scenario1():
    return build_scenario(1)


@pytest.fixture(scope="session")
def scenario2():
    return build_scenario(2)


@pytest.fixture(scope="session")
def scenario3():
    return build_scenario(3)
