import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from archsearch.arch import ArchGraph, LayerSpec, TensorShape


@pytest.fixture
def kws_input():
    return TensorShape(49, 40, 1)


@pytest.fixture
def fc_baseline(kws_input):
    """The minimal starting point: one fully connected layer of 12 units."""
    return ArchGraph((LayerSpec("FC", 12, activation="relu"),), kws_input, 12)


@pytest.fixture
def gru_fc(kws_input):
    """Two stacked unidirectional GRUs of 64 units plus a 12-way classifier."""
    return ArchGraph((LayerSpec("GRU", 64, repeat=2),
                      LayerSpec("FC", 12, activation="relu", src1=1)),
                     kws_input, 12)


def baseline_doc():
    return {"mode": "layers", "input_shape": [49, 40, 1], "classes": 12,
            "layers": [{"kind": "FC", "channels_or_hidden": 12,
                        "activation": "relu", "src1": 0}]}
