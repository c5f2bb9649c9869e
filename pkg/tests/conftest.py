import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from profiti import autodiff as ad


@pytest.fixture(autouse=True)
def _debug_checks():
    """Run every test with per-op finiteness validation enabled."""
    previous = ad.set_debug_checks(True)
    yield
    ad.set_debug_checks(previous)
