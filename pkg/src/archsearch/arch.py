"""Architecture graphs: layer DAGs, multi-branch modules, validation, shape
inference, and a canonical text form used as cache key and wire payload.

Source-index convention: 0 is the network input; i >= 1 is the i-th entry of
``ArchGraph.layers`` (1-based). Sources always reference strictly earlier
indices, so a layer list is topologically ordered by construction. The same
convention holds for module branches (0 = module input).

Shape rules: convolutions use same padding (out = ceil(in / stride)); pooling
uses valid padding with kernel = stride (out = in // width); a GRU consumes
freq x channels per timestep and emits (time, 1, hidden * directions); FC
flattens its input, except that an FC fed by a GRU reads the final timestep's
feature vector (the standard recurrent-classifier convention, and the one
that reproduces the reference parameter counts).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

LAYER_KINDS = ("Conv2d", "DepSepConv2d", "DilatedConv2d", "GRU",
               "AvgPool2d", "MaxPool2d", "FC", "Add")
CONV_KINDS = ("Conv2d", "DepSepConv2d", "DilatedConv2d")
POOL_KINDS = ("AvgPool2d", "MaxPool2d")
ACTIVATIONS = ("relu", "crelu", "elu", "selu", "swish", "none")
COMBINES = ("add", "concat")
BRANCH_TYPES = ("conv-conv", "conv-maxpool", "conv-avgpool", "conv-none",
                "maxpool-none", "avgpool-none", "sep1x7-7x1-none")
MAX_BRANCHES = 5

# branch type -> (first op, second op or None)
BRANCH_OPS = {
    "conv-conv": ("conv", "conv"),
    "conv-maxpool": ("conv", "maxpool"),
    "conv-avgpool": ("conv", "avgpool"),
    "conv-none": ("conv", None),
    "maxpool-none": ("maxpool", None),
    "avgpool-none": ("avgpool", None),
    "sep1x7-7x1-none": ("sep17", None),
}


class ShapeUnderflow(Exception):
    """A spatial dimension reached zero during shape inference."""

    def __init__(self, layer_index: int | None = None, detail: str = ""):
        self.layer_index = layer_index
        super().__init__(f"shape underflow at layer {layer_index}: {detail}")


class ShapeMismatch(Exception):
    """Two-source join with incompatible shapes."""


class ParseError(Exception):
    """Malformed architecture text."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


@dataclass(frozen=True)
class TensorShape:
    time_or_height: int
    freq_or_width: int
    channels: int

    def __post_init__(self):
        if min(self.time_or_height, self.freq_or_width, self.channels) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {self.dims()}")

    def dims(self) -> tuple[int, int, int]:
        return (self.time_or_height, self.freq_or_width, self.channels)

    def elements(self) -> int:
        return self.time_or_height * self.freq_or_width * self.channels


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels_or_hidden: int = 1
    repeat: int = 1
    kernel_t: int = 1
    kernel_f: int = 1
    stride_t: int = 1
    stride_f_or_dilation: int = 1
    directions: int = 1
    activation: str = "none"
    dropout_keep: float = 1.0
    src1: int = 0
    src2: int | None = None
    combine: str | None = None


@dataclass(frozen=True)
class ArchGraph:
    layers: tuple[LayerSpec, ...]
    input_shape: TensorShape
    output_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))


@dataclass(frozen=True)
class BranchSpec:
    branch_type: str
    filter_width: int = 3
    pooling_width: int = 2
    channels: int = 8
    src1: int = 0
    src2: int = 0
    propagate: bool = True


@dataclass(frozen=True)
class ModuleSpec:
    branches: tuple[BranchSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))


@dataclass(frozen=True)
class ModuleArch:
    """A module plus the task framing needed to realize and evaluate it."""
    module: ModuleSpec
    input_shape: TensorShape
    output_classes: int


@dataclass(frozen=True)
class Violation:
    code: str
    where: int  # 1-based layer/branch index; 0 = graph level
    detail: str = ""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def expand_layer(layer: LayerSpec, src_shapes: list[TensorShape],
                 src_kinds: list[str]) -> tuple[TensorShape, list[dict]]:
    """Break one layer into primitive sub-operations with resolved shapes.

    Returns (output shape, sub-op dicts). Sub-ops carry the dimensions the
    resource model needs; ``repeat`` unrolls into one sub-op per stacked copy.
    Raises ShapeUnderflow / ShapeMismatch.
    """
    k = layer.kind
    s = src_shapes[0]
    subs: list[dict] = []

    if k in CONV_KINDS:
        t, f, cin = s.dims()
        st = layer.stride_t
        # the shared stride/dilation slot means dilation only for dilated convs
        sf = 1 if k == "DilatedConv2d" else layer.stride_f_or_dilation
        cout = layer.channels_or_hidden
        op = "dsconv" if k == "DepSepConv2d" else "conv"
        for _ in range(layer.repeat):
            ot, of = _ceil_div(t, st), _ceil_div(f, sf)
            subs.append({"op": op, "in": (t, f, cin),
                         "k": (layer.kernel_t, layer.kernel_f),
                         "out": (ot, of, cout),
                         "act": layer.activation != "none"})
            t, f, cin = ot, of, cout
        return TensorShape(t, f, cout), subs

    if k in POOL_KINDS:
        t, f, c = s.dims()
        for _ in range(layer.repeat):
            ot, of = t // layer.kernel_t, f // layer.kernel_f
            if ot < 1 or of < 1:
                raise ShapeUnderflow(None, f"pool {layer.kernel_t}x{layer.kernel_f} on {t}x{f}")
            subs.append({"op": "pool", "in": (t, f, c),
                         "k": (layer.kernel_t, layer.kernel_f),
                         "out": (ot, of, c)})
            t, f = ot, of
        return TensorShape(t, f, c), subs

    if k == "GRU":
        steps = s.time_or_height
        n_in = s.freq_or_width * s.channels
        h, d = layer.channels_or_hidden, layer.directions
        for _ in range(layer.repeat):
            subs.append({"op": "gru", "steps": steps, "n_in": n_in,
                         "hidden": h, "directions": d})
            n_in = h * d
        return TensorShape(steps, 1, h * d), subs

    if k == "FC":
        n_in = s.channels if src_kinds[0] == "GRU" else s.elements()
        n_out = layer.channels_or_hidden
        act = layer.activation != "none"
        for _ in range(layer.repeat):
            subs.append({"op": "fc", "n_in": n_in, "n_out": n_out, "act": act})
            n_in = n_out
        return TensorShape(1, 1, n_out), subs

    if k == "Add":
        s2 = src_shapes[1]
        if (s.time_or_height, s.freq_or_width) != (s2.time_or_height, s2.freq_or_width):
            raise ShapeMismatch(f"join of {s.dims()} with {s2.dims()}")
        mode = layer.combine or ("add" if s.channels == s2.channels else "concat")
        if mode == "add" and s.channels != s2.channels:
            raise ShapeMismatch(f"elementwise add of {s.channels} vs {s2.channels} channels")
        out_c = s.channels if mode == "add" else s.channels + s2.channels
        out = (s.time_or_height, s.freq_or_width, out_c)
        subs.append({"op": mode, "in1": s.elements(), "in2": s2.elements(), "out": out})
        return TensorShape(*out), subs

    raise ValueError(f"unknown layer kind {k!r}")


def _layer_sources(layer: LayerSpec) -> list[int]:
    return [layer.src1, layer.src2] if layer.kind == "Add" else [layer.src1]


def _walk_shapes(graph: ArchGraph):
    """Yield (index, layer, output shape, sub-ops) over the graph in order."""
    shapes: list[TensorShape] = [graph.input_shape]
    kinds: list[str] = ["input"]
    for i, layer in enumerate(graph.layers, 1):
        srcs = _layer_sources(layer)
        try:
            shp, subs = expand_layer(layer, [shapes[s] for s in srcs],
                                     [kinds[s] for s in srcs])
        except ShapeUnderflow as e:
            raise ShapeUnderflow(i, str(e)) from None
        shapes.append(shp)
        kinds.append(layer.kind)
        yield i, layer, shp, subs


def infer_shapes(graph: ArchGraph) -> list[TensorShape]:
    """Output shape of every layer. Pre: graph passes validate()."""
    return [shp for _, _, shp, _ in _walk_shapes(graph)]


def layer_sub_ops(graph: ArchGraph) -> list[list[dict]]:
    """Per-layer primitive sub-operations (the resource model's input)."""
    return [subs for _, _, _, subs in _walk_shapes(graph)]


def topo_depths(graph: ArchGraph) -> list[int]:
    """Depth of each layer: 1 + max depth over sources (input = 0)."""
    depth = [0]
    for layer in graph.layers:
        depth.append(1 + max(depth[s] for s in _layer_sources(layer)))
    return depth[1:]


def _check_layer_fields(i: int, layer: LayerSpec) -> list[Violation]:
    bad = []
    if layer.kind not in LAYER_KINDS:
        return [Violation("bad-field", i, f"unknown kind {layer.kind!r}")]
    for name in ("channels_or_hidden", "repeat", "kernel_t", "kernel_f",
                 "stride_t", "stride_f_or_dilation"):
        v = getattr(layer, name)
        if not isinstance(v, int) or v < 1:
            bad.append(Violation("bad-field", i, f"{name}={v!r}"))
    if layer.directions not in (1, 2):
        bad.append(Violation("bad-field", i, f"directions={layer.directions!r}"))
    if layer.activation not in ACTIVATIONS:
        bad.append(Violation("bad-field", i, f"activation={layer.activation!r}"))
    if not (0.0 < float(layer.dropout_keep) <= 1.0):
        bad.append(Violation("bad-field", i, f"dropout_keep={layer.dropout_keep!r}"))
    if layer.kind == "Add":
        if layer.src2 is None:
            bad.append(Violation("missing-src2", i))
        if layer.combine is not None and layer.combine not in COMBINES:
            bad.append(Violation("bad-field", i, f"combine={layer.combine!r}"))
    elif layer.src2 is not None:
        bad.append(Violation("bad-field", i, "src2 on a single-source layer"))
    return bad


def _validate_graph(graph: ArchGraph, space) -> list[Violation]:
    out: list[Violation] = []
    layers = graph.layers
    if not layers:
        return [Violation("empty-graph", 0, "no layers, no output sink")]

    structural_ok = True
    for i, layer in enumerate(layers, 1):
        fieldv = _check_layer_fields(i, layer)
        out.extend(fieldv)
        if fieldv:
            structural_ok = False
            continue
        for s in _layer_sources(layer):
            if not isinstance(s, int) or not (0 <= s < i):
                out.append(Violation("forward-reference", i, f"src {s!r}"))
                structural_ok = False

    if structural_ok:
        consumed = {s for layer in layers for s in _layer_sources(layer)}
        for i in range(1, len(layers)):
            if i not in consumed:
                out.append(Violation("dangling-layer", i,
                                     "does not reach the output sink"))
        try:
            for _ in _walk_shapes(graph):
                pass
        except ShapeUnderflow as e:
            out.append(Violation("shape-underflow", e.layer_index or 0, str(e)))
        except ShapeMismatch as e:
            out.append(Violation("shape-mismatch", 0, str(e)))

    if space is not None:
        for i, layer in enumerate(layers, 1):
            for detail in space.field_violations(layer):
                out.append(Violation("space-violation", i, detail))
    return out


def _validate_module(module: ModuleSpec, space) -> list[Violation]:
    out: list[Violation] = []
    branches = module.branches
    if len(branches) > MAX_BRANCHES:
        out.append(Violation("branch-limit", 0, f"{len(branches)} > {MAX_BRANCHES}"))
    for i, br in enumerate(branches, 1):
        if br.branch_type not in BRANCH_TYPES:
            out.append(Violation("bad-field", i, f"branch_type={br.branch_type!r}"))
            continue
        for name in ("filter_width", "pooling_width", "channels"):
            v = getattr(br, name)
            if not isinstance(v, int) or v < 1:
                out.append(Violation("bad-field", i, f"{name}={v!r}"))
        for s in (br.src1, br.src2):
            if not isinstance(s, int) or not (0 <= s < i):
                out.append(Violation("forward-reference", i, f"src {s!r}"))
    if not any(br.propagate for br in branches):
        out.append(Violation("no-propagating-branch", 0))
    if space is not None:
        for i, br in enumerate(branches, 1):
            for detail in space.field_violations(br):
                out.append(Violation("space-violation", i, detail))
    return out


def validate(obj, space=None) -> list[Violation]:
    """Every invariant violation in the graph or module; empty list = valid.

    ``space`` (optional, duck-typed with .field_violations) additionally
    checks that field values sit inside the search-space candidate lists;
    structural validity never requires a space.
    """
    if isinstance(obj, ArchGraph):
        return _validate_graph(obj, space)
    if isinstance(obj, ModuleArch):
        return _validate_module(obj.module, space)
    if isinstance(obj, ModuleSpec):
        return _validate_module(obj, space)
    raise TypeError(f"cannot validate {type(obj).__name__}")


# ---------------------------------------------------------------------------
# module stacking


def stack_module(module: ModuleSpec, repeats: int, input_shape: TensorShape,
                 output_classes: int, stem: LayerSpec | None = None,
                 head: list[LayerSpec] | None = None) -> ArchGraph:
    """Realize a multi-branch module as a full layer graph.

    Stacking protocol (a convention, overridable via stem/head): a 3x3 stem
    convolution at the module's smallest channel size, ``repeats`` module
    copies split into 3 stages with a stride-2 max-pool and a 2x channel
    widening at each stage boundary, then global average pooling and a
    fully connected classifier.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    layers: list[LayerSpec] = []
    shapes: list[TensorShape] = [input_shape]
    kinds: list[str] = ["input"]

    def append(layer: LayerSpec) -> int:
        srcs = _layer_sources(layer)
        try:
            shp, _ = expand_layer(layer, [shapes[s] for s in srcs],
                                  [kinds[s] for s in srcs])
        except ShapeUnderflow as e:
            raise ShapeUnderflow(len(layers) + 1, str(e)) from None
        layers.append(layer)
        shapes.append(shp)
        kinds.append(layer.kind)
        return len(layers)

    if stem is None:
        base_ch = min(br.channels for br in module.branches)
        stem = LayerSpec("Conv2d", channels_or_hidden=base_ch, kernel_t=3,
                         kernel_f=3, activation="relu", src1=0)
    trunk = append(stem)

    boundaries = {b for b in (_ceil_div(repeats, 3), _ceil_div(2 * repeats, 3))
                  if 0 < b < repeats}
    mult = 1
    for m in range(1, repeats + 1):
        trunk = _emit_module(module, trunk, mult, append)
        if m in boundaries:
            trunk = append(LayerSpec("MaxPool2d", kernel_t=2, kernel_f=2, src1=trunk))
            mult *= 2

    if head is None:
        cur = shapes[trunk]
        gap = append(LayerSpec("AvgPool2d", kernel_t=cur.time_or_height,
                               kernel_f=cur.freq_or_width, src1=trunk))
        append(LayerSpec("FC", channels_or_hidden=output_classes, src1=gap))
    else:
        for h in head:
            trunk = append(LayerSpec(**{**h.__dict__, "src1": trunk, "src2": None}))
    return ArchGraph(tuple(layers), input_shape, output_classes)


def _live_branches(module: ModuleSpec) -> set[int]:
    """Branches that reach the module output: the propagating ones plus,
    transitively, their branch sources. Dead branches are not realized."""
    live = {bi for bi, br in enumerate(module.branches, 1) if br.propagate}
    frontier = list(live)
    while frontier:
        br = module.branches[frontier.pop() - 1]
        op2 = BRANCH_OPS[br.branch_type][1]
        for s in ([br.src1, br.src2] if op2 else [br.src1]):
            if s >= 1 and s not in live:
                live.add(s)
                frontier.append(s)
    return live


def _emit_module(module: ModuleSpec, in_ref: int, mult: int, append) -> int:
    live = _live_branches(module)
    outs: dict[int, int] = {}

    def realize(op: str, br: BranchSpec, src: int) -> int:
        ch = br.channels * mult
        if op == "conv":
            return append(LayerSpec("Conv2d", channels_or_hidden=ch,
                                    kernel_t=br.filter_width, kernel_f=br.filter_width,
                                    activation="relu", src1=src))
        if op == "maxpool":
            return append(LayerSpec("MaxPool2d", kernel_t=br.pooling_width,
                                    kernel_f=br.pooling_width, src1=src))
        if op == "avgpool":
            return append(LayerSpec("AvgPool2d", kernel_t=br.pooling_width,
                                    kernel_f=br.pooling_width, src1=src))
        if op == "sep17":
            a = append(LayerSpec("DepSepConv2d", channels_or_hidden=ch, kernel_t=1,
                                 kernel_f=7, activation="relu", src1=src))
            return append(LayerSpec("DepSepConv2d", channels_or_hidden=ch, kernel_t=7,
                                    kernel_f=1, activation="relu", src1=a))
        raise ValueError(op)

    def concat(a: int, b: int) -> int:
        return append(LayerSpec("Add", src1=max(a, b), src2=min(a, b), combine="concat"))

    for bi, br in enumerate(module.branches, 1):
        if bi not in live:
            continue
        op1, op2 = BRANCH_OPS[br.branch_type]
        src_of = lambda v: in_ref if v == 0 else outs[v]
        o1 = realize(op1, br, src_of(br.src1))
        outs[bi] = concat(o1, realize(op2, br, src_of(br.src2))) if op2 else o1

    prop = [outs[bi] for bi, br in enumerate(module.branches, 1) if br.propagate]
    trunk = prop[0]
    for p in prop[1:]:
        trunk = concat(trunk, p)
    return trunk


# ---------------------------------------------------------------------------
# canonical text form

_LAYER_FIELDS = ("kind", "repeat", "kernel_t", "kernel_f", "channels_or_hidden",
                 "stride_t", "stride_f_or_dilation", "directions", "activation",
                 "dropout_keep", "src1", "src2", "combine")
_BRANCH_FIELDS = ("branch_type", "filter_width", "pooling_width", "channels",
                  "src1", "src2", "propagate")


def canonical_serialize(arch) -> str:
    """Canonical UTF-8 JSON: sorted keys, compact separators, every field
    explicit. Equal graphs produce byte-equal text (usable as a cache key)."""
    if isinstance(arch, ArchGraph):
        doc = {"mode": "layers",
               "input_shape": list(arch.input_shape.dims()),
               "classes": arch.output_classes,
               "layers": [{f: getattr(l, f) for f in _LAYER_FIELDS}
                          for l in arch.layers]}
    elif isinstance(arch, ModuleArch):
        doc = {"mode": "module",
               "input_shape": list(arch.input_shape.dims()),
               "classes": arch.output_classes,
               "branches": [{f: getattr(b, f) for f in _BRANCH_FIELDS}
                            for b in arch.module.branches]}
    else:
        raise TypeError(f"cannot serialize {type(arch).__name__}")
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def canonical_hash(arch) -> str:
    return hashlib.sha256(canonical_serialize(arch).encode()).hexdigest()


def _req(doc: dict, key: str, typ, what: str):
    if key not in doc:
        raise ParseError(f"{what}: missing key {key!r}")
    v = doc[key]
    if typ is int and isinstance(v, bool):
        raise ParseError(f"{what}: key {key!r} must be {typ.__name__}")
    if not isinstance(v, typ):
        raise ParseError(f"{what}: key {key!r} must be {typ.__name__}")
    return v


def arch_from_doc(doc) -> ArchGraph | ModuleArch:
    """Build an architecture from a parsed JSON document (lenient on extra
    keys, strict on types and enums). Raises ParseError."""
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    mode = _req(doc, "mode", str, "arch")
    ishape = _req(doc, "input_shape", list, "arch")
    if len(ishape) != 3 or not all(isinstance(d, int) and not isinstance(d, bool) for d in ishape):
        raise ParseError("input_shape must be [time, freq, channels]")
    try:
        shape = TensorShape(*ishape)
    except ValueError as e:
        raise ParseError(str(e)) from None
    classes = _req(doc, "classes", int, "arch")
    if classes < 1:
        raise ParseError("classes must be >= 1")

    if mode == "layers":
        items = _req(doc, "layers", list, "arch")
        layers = []
        for i, obj in enumerate(items, 1):
            if not isinstance(obj, dict):
                raise ParseError(f"layer {i}: must be an object")
            kind = _req(obj, "kind", str, f"layer {i}")
            if kind not in LAYER_KINDS:
                raise ParseError(f"layer {i}: unknown kind {kind!r}")
            kw = {}
            for f in _LAYER_FIELDS[1:]:
                if f in obj and obj[f] is not None:
                    kw[f] = obj[f]
            try:
                layers.append(LayerSpec(kind, **kw))
            except TypeError as e:
                raise ParseError(f"layer {i}: {e}") from None
        return ArchGraph(tuple(layers), shape, classes)

    if mode == "module":
        items = _req(doc, "branches", list, "arch")
        branches = []
        for i, obj in enumerate(items, 1):
            if not isinstance(obj, dict):
                raise ParseError(f"branch {i}: must be an object")
            bt = _req(obj, "branch_type", str, f"branch {i}")
            if bt not in BRANCH_TYPES:
                raise ParseError(f"branch {i}: unknown branch_type {bt!r}")
            kw = {f: obj[f] for f in _BRANCH_FIELDS[1:] if f in obj}
            try:
                branches.append(BranchSpec(bt, **kw))
            except TypeError as e:
                raise ParseError(f"branch {i}: {e}") from None
        return ModuleArch(ModuleSpec(tuple(branches)), shape, classes)

    raise ParseError(f"unknown mode {mode!r}")


def canonical_parse(text: str) -> ArchGraph | ModuleArch:
    """Inverse of canonical_serialize (accepts any field order / whitespace)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno) from None
    return arch_from_doc(doc)
