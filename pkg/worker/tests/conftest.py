import json
import sys
from pathlib import Path

import pytest

FIXTURES = sorted((Path(__file__).parent / "fixtures").glob("*.json"))


def load_fixture(path):
    with open(path) as f:
        return json.load(f)


@pytest.fixture(params=FIXTURES, ids=lambda p: p.stem)
def reference_arch(request):
    return request.param


def primary_cli(*args):
    """The search engine's command line (the cross-package interface)."""
    import subprocess
    return subprocess.run([sys.executable, "-m", "archsearch", *args],
                          capture_output=True, text=True)
