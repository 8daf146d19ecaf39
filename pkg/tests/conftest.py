import pytest

from taskprog.backends.scripted import ScriptedBackend
from taskprog.scenarios import default_registry


@pytest.fixture(scope="session")
def backend():
    return ScriptedBackend()


@pytest.fixture(scope="session")
def registry():
    return default_registry()
