import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from archsearch.arch import (ArchGraph, BranchSpec, LayerSpec, ModuleArch,
                             ModuleSpec, ParseError, ShapeMismatch,
                             ShapeUnderflow, TensorShape, canonical_parse,
                             canonical_serialize, infer_shapes, stack_module,
                             validate)
from graph_gen import random_small_graph


def test_tensor_shape_rejects_zero_dims():
    with pytest.raises(ValueError):
        TensorShape(0, 40, 1)


def test_fc_baseline_is_valid(fc_baseline):
    assert validate(fc_baseline) == []


def test_self_reference_is_forward_reference(kws_input):
    g = ArchGraph((LayerSpec("FC", 12, src1=1),), kws_input, 12)
    codes = {v.code for v in validate(g)}
    assert "forward-reference" in codes


def test_future_reference_is_forward_reference(kws_input):
    g = ArchGraph((LayerSpec("FC", 12, src1=2), LayerSpec("FC", 12, src1=1)),
                  kws_input, 12)
    assert any(v.code == "forward-reference" and v.where == 1
               for v in validate(g))


def test_pool_stack_underflows():
    # 32 -> 10 -> 3 -> 1 -> 0: the fourth width-3 pool hits zero
    layers = tuple(LayerSpec("MaxPool2d", kernel_t=3, kernel_f=3, src1=i)
                   for i in range(4))
    g = ArchGraph(layers, TensorShape(32, 32, 3), 10)
    assert any(v.code == "shape-underflow" for v in validate(g))
    three = ArchGraph(layers[:3], TensorShape(32, 32, 3), 10)
    assert validate(three) == []
    assert infer_shapes(three)[-1].dims() == (1, 1, 3)


def test_dangling_layer_detected(kws_input):
    g = ArchGraph((LayerSpec("FC", 12), LayerSpec("FC", 12, src1=0)),
                  kws_input, 12)
    assert any(v.code == "dangling-layer" and v.where == 1 for v in validate(g))


def test_empty_graph_invalid(kws_input):
    assert any(v.code == "empty-graph"
               for v in validate(ArchGraph((), kws_input, 12)))


def test_add_needs_src2(kws_input):
    g = ArchGraph((LayerSpec("Conv2d", 8, kernel_t=3, kernel_f=3),
                   LayerSpec("Add", src1=1)), kws_input, 12)
    assert any(v.code == "missing-src2" for v in validate(g))


def test_conv_same_padding_shapes():
    g = ArchGraph((LayerSpec("Conv2d", 16, kernel_t=3, kernel_f=3),),
                  TensorShape(32, 32, 3), 10)
    assert infer_shapes(g)[0].dims() == (32, 32, 16)


def test_strided_conv_ceil_division(kws_input):
    g = ArchGraph((LayerSpec("Conv2d", 8, kernel_t=4, kernel_f=4,
                             stride_t=4, stride_f_or_dilation=4),),
                  kws_input, 12)
    assert infer_shapes(g)[0].dims() == (13, 10, 8)  # ceil(49/4), ceil(40/4)


def test_bidirectional_gru_shape(kws_input):
    g = ArchGraph((LayerSpec("GRU", 64, directions=2),), kws_input, 12)
    assert infer_shapes(g)[0].dims() == (49, 1, 128)


def test_dilated_conv_keeps_freq_resolution(kws_input):
    # the shared stride/dilation slot acts as dilation: no freq striding
    g = ArchGraph((LayerSpec("DilatedConv2d", 8, kernel_t=4, kernel_f=2,
                             stride_t=2, stride_f_or_dilation=3),),
                  kws_input, 12)
    assert infer_shapes(g)[0].dims() == (25, 40, 8)


def test_fc_flattens_spatial_input():
    g = ArchGraph((LayerSpec("Conv2d", 4, kernel_t=3, kernel_f=3),
                   LayerSpec("FC", 7, src1=1)), TensorShape(6, 5, 2), 7)
    assert infer_shapes(g)[-1].dims() == (1, 1, 7)


def test_fc_reads_final_gru_step(kws_input, gru_fc):
    shapes = infer_shapes(gru_fc)
    assert shapes[0].dims() == (49, 1, 64)
    assert shapes[1].dims() == (1, 1, 12)


def test_add_concat_on_mismatched_channels():
    g = ArchGraph((LayerSpec("Conv2d", 4, kernel_t=3, kernel_f=3),
                   LayerSpec("Conv2d", 6, kernel_t=3, kernel_f=3),
                   LayerSpec("Add", src1=2, src2=1)),
                  TensorShape(8, 8, 3), 10)
    assert validate(g) == []
    assert infer_shapes(g)[-1].channels == 10


def test_add_mode_mismatch_flagged():
    g = ArchGraph((LayerSpec("Conv2d", 4, kernel_t=3, kernel_f=3),
                   LayerSpec("Conv2d", 6, kernel_t=3, kernel_f=3),
                   LayerSpec("Add", src1=2, src2=1, combine="add")),
                  TensorShape(8, 8, 3), 10)
    assert any(v.code == "shape-mismatch" for v in validate(g))


# --- module stacking ---------------------------------------------------------


def one_branch_module():
    return ModuleSpec((BranchSpec("conv-none", 3, 2, 8, 0, 0, True),))


def test_single_branch_module_stacks_to_plain_convnet():
    g = stack_module(one_branch_module(), 3, TensorShape(32, 32, 3), 10)
    assert validate(g) == []
    kinds = [l.kind for l in g.layers]
    # stem + 3 single-conv modules + 2 stage pools + GAP + FC
    assert kinds == ["Conv2d", "Conv2d", "MaxPool2d", "Conv2d", "MaxPool2d",
                     "Conv2d", "AvgPool2d", "FC"]


def test_fig_branch_cutoff_concatenates_surviving_branches():
    # branch 3 consumes branch 2; branch 2 no longer propagates, so the
    # module output joins branches 1 and 3 only
    m = ModuleSpec((BranchSpec("conv-none", 3, 2, 8, 0, 0, True),
                    BranchSpec("conv-none", 3, 2, 8, 0, 0, False),
                    BranchSpec("conv-none", 3, 2, 8, 2, 0, True)))
    g = stack_module(m, 1, TensorShape(32, 32, 3), 10)
    assert validate(g) == []
    join = [l for l in g.layers if l.kind == "Add"]
    assert len(join) == 1 and join[0].combine == "concat"
    shapes = infer_shapes(g)
    assert shapes[join[0].src1 - 1].channels == 8
    assert shapes[[l.kind for l in g.layers].index("Add")].channels == 16


def test_stage_boundaries_and_widening_at_six_repeats():
    g = stack_module(one_branch_module(), 6, TensorShape(32, 32, 3), 10)
    shapes = [s.dims() for s in infer_shapes(g)]
    # boundaries after modules 2 and 4: spatial halves, channels double
    assert shapes == [(32, 32, 8), (32, 32, 8), (32, 32, 8), (16, 16, 8),
                      (16, 16, 16), (16, 16, 16), (8, 8, 16), (8, 8, 32),
                      (8, 8, 32), (1, 1, 32), (1, 1, 10)]


def test_dead_branches_pruned_at_stacking():
    # branch 1 neither propagates nor feeds a live branch: not realized
    m = ModuleSpec((BranchSpec("conv-none", 3, 2, 8, 0, 0, False),
                    BranchSpec("conv-none", 3, 2, 16, 0, 0, True)))
    assert validate(m) == []
    g = stack_module(m, 2, TensorShape(32, 32, 3), 10)
    assert validate(g) == []
    convs = [l for l in g.layers if l.kind == "Conv2d" and l.src1 != 0]
    assert all(l.channels_or_hidden in (16, 32) for l in convs)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_valid_module_stacks_to_valid_graph(seed):
    """Whenever realization succeeds on a valid module, the result validates."""
    rng = np.random.default_rng(seed)
    types = ("conv-conv", "conv-maxpool", "conv-avgpool", "conv-none",
             "maxpool-none", "avgpool-none", "sep1x7-7x1-none")
    n = int(rng.integers(1, 6))
    branches = tuple(
        BranchSpec(types[int(rng.integers(len(types)))],
                   filter_width=int(rng.integers(1, 4)) * 2 + 1,
                   pooling_width=int(rng.integers(2, 4)),
                   channels=int(rng.integers(4, 17)),
                   src1=int(rng.integers(0, i)), src2=int(rng.integers(0, i)),
                   propagate=bool(rng.integers(2)) or i == 1)
        for i in range(1, n + 1))
    m = ModuleSpec(branches)
    if validate(m):
        return
    try:
        g = stack_module(m, int(rng.integers(1, 7)), TensorShape(32, 32, 3), 10)
    except (ShapeUnderflow, ShapeMismatch):
        return
    assert validate(g) == []


def test_two_op_branch_concatenates_both_operands():
    # branch 2 convolves the pooled branch 1 and concatenates it with a
    # freshly pooled copy of the module input (spatial dims line up at 16x16)
    m = ModuleSpec((BranchSpec("maxpool-none", 3, 2, 8, 0, 0, False),
                    BranchSpec("conv-maxpool", 3, 2, 8, 1, 0, True)))
    g = stack_module(m, 1, TensorShape(32, 32, 3), 10)
    assert validate(g) == []
    assert [l.kind for l in g.layers].count("MaxPool2d") == 2
    join = [l for l in g.layers if l.kind == "Add"]
    assert len(join) == 1 and join[0].combine == "concat"


# --- canonical text ----------------------------------------------------------


def test_round_trip_on_random_graphs():
    rng = np.random.default_rng(11)
    for _ in range(100):
        g = random_small_graph(rng)
        assert canonical_parse(canonical_serialize(g)) == g


def test_field_order_and_whitespace_canonicalized(gru_fc):
    canon = canonical_serialize(gru_fc)
    doc = json.loads(canon)
    shuffled = json.dumps({k: doc[k] for k in reversed(sorted(doc))}, indent=3)
    assert canonical_serialize(canonical_parse(shuffled)) == canon


def test_reference_gru_row_parses():
    text = json.dumps({
        "mode": "layers", "input_shape": [49, 40, 1], "classes": 12,
        "layers": [{"kind": "GRU", "repeat": 2, "channels_or_hidden": 64,
                    "directions": 1, "src1": 0}]})
    g = canonical_parse(text)
    layer = g.layers[0]
    assert (layer.kind, layer.repeat, layer.channels_or_hidden,
            layer.directions) == ("GRU", 2, 64, 1)


def test_module_arch_round_trip():
    m = ModuleArch(ModuleSpec((BranchSpec("conv-avgpool", 5, 3, 16, 0, 0, True),)),
                   TensorShape(32, 32, 3), 10)
    assert canonical_parse(canonical_serialize(m)) == m


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as e:
        canonical_parse("{\n  broken")
    assert e.value.line == 2


def test_parse_rejects_unknown_kind():
    with pytest.raises(ParseError):
        canonical_parse(json.dumps({"mode": "layers", "input_shape": [4, 4, 1],
                                    "classes": 2,
                                    "layers": [{"kind": "Transformer"}]}))


def test_parse_ignores_unknown_fields(fc_baseline):
    doc = json.loads(canonical_serialize(fc_baseline))
    doc["layers"][0]["future_field"] = 42
    assert canonical_parse(json.dumps(doc)) == fc_baseline


def test_serialize_injective_on_mutants():
    rng = np.random.default_rng(5)
    graphs = {random_small_graph(rng) for _ in range(1000)}
    texts = {canonical_serialize(g) for g in graphs}
    assert len(texts) == len(graphs)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    g = random_small_graph(np.random.default_rng(seed))
    assert canonical_parse(canonical_serialize(g)) == g


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_shape_inference_deterministic_and_positive(seed):
    g = random_small_graph(np.random.default_rng(seed))
    first = infer_shapes(g)
    assert first == infer_shapes(g)
    assert all(min(s.dims()) >= 1 for s in first)
