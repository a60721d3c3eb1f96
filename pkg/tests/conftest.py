import os
import sys

import pytest

# Make the src layout importable without installing the package
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))
sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(20240917)


@pytest.fixture(autouse=True)
def quiet_log_env(monkeypatch):
    """Keep a developer's MEMTRACK_LOG out of CLI tests."""
    monkeypatch.delenv("MEMTRACK_LOG", raising=False)
