import pytest

from trainer_worker.arch_schema import parse_arch
from trainer_worker.train import train_and_score

FC_ARCH = {"mode": "layers", "input_shape": [4, 4, 1], "classes": 12,
           "layers": [{"kind": "FC", "channels_or_hidden": 12,
                       "activation": "relu", "src1": 0}]}


def test_fc_learns_separable_data_within_five_epochs():
    p = train_and_score(parse_arch(FC_ARCH), "synthetic-2d", 5, seed=0)
    print(f"[{'PASS' if p > 0.9 else 'FAIL'}] fc-on-separable-data: P={p:.4f}")
    assert p > 0.9


def test_training_deterministic_under_seed():
    a = train_and_score(parse_arch(FC_ARCH), "synthetic-2d", 3, seed=7)
    b = train_and_score(parse_arch(FC_ARCH), "synthetic-2d", 3, seed=7)
    assert abs(a - b) <= 1e-6


def test_different_seeds_may_differ():
    a = train_and_score(parse_arch(FC_ARCH), "synthetic-2d", 1, seed=1)
    b = train_and_score(parse_arch(FC_ARCH), "synthetic-2d", 1, seed=2)
    assert 0.0 <= a <= 1.0 and 0.0 <= b <= 1.0


def test_zero_epochs_scores_untrained_model():
    p = train_and_score(parse_arch(FC_ARCH), "synthetic-2d", 0, seed=0)
    assert 0.0 <= p <= 1.0


def test_small_audio_model_trains_above_chance():
    doc = {"mode": "layers", "input_shape": [49, 40, 1], "classes": 12,
           "layers": [
               {"kind": "Conv2d", "channels_or_hidden": 8, "kernel_t": 4,
                "kernel_f": 4, "stride_t": 2, "stride_f_or_dilation": 2,
                "activation": "relu", "src1": 0},
               {"kind": "FC", "channels_or_hidden": 12, "activation": "relu",
                "src1": 1}]}
    p = train_and_score(parse_arch(doc), "small-audio-12class", 2, seed=0)
    assert p > 2 / 12  # comfortably above the 1/12 chance level
