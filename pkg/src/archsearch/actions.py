"""Search spaces (feature-wise candidate lists) and the mutation operators
that realize sampled actions: per-feature scaling of existing layers,
insertion of a new layer or branch, and removal of a layer or branch.

Inapplicable features (e.g. a pooling width sampled for a GRU) are ignored
when an action is applied; the controller still emits them so the action
tensor keeps a fixed shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .arch import (ArchGraph, BRANCH_OPS, BranchSpec, LayerSpec, MAX_BRANCHES,
                   ModuleArch, ModuleSpec, ShapeUnderflow, infer_shapes,
                   validate)

STRUCTURAL = ("insert", "keep", "remove")
INSERT, KEEP, REMOVE = 0, 1, 2


class ActionError(Exception):
    """An action that cannot be applied; callers reject and resample."""


class InvalidChoice(ActionError):
    pass


class InvalidSource(ActionError):
    pass


class LayerLimit(ActionError):
    pass


class BranchLimit(ActionError):
    pass


class NoPropagatingBranch(ActionError):
    pass


class RemoveWouldDisconnect(ActionError):
    pass


class InvalidMutation(ActionError):
    """Mutation produced an invalid graph/module (carries the violations)."""

    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(f"{v.code}@{v.where}" for v in violations))


@dataclass(frozen=True)
class Feature:
    """One searchable feature: its candidate values, the unit kinds it
    applies to ("*" = all), and the LayerSpec/BranchSpec fields it writes."""
    name: str
    values: tuple
    kinds: tuple[str, ...] | str
    fields: tuple[str, ...]
    scaleable: bool = True
    is_src: bool = False

    def applies(self, kind: str) -> bool:
        return self.kinds == "*" or kind in self.kinds

    def index_of(self, value) -> int:
        """Candidate index of a field value; out-of-list values bucket to the
        nearest candidate (used when embedding off-space architectures)."""
        if value in self.values:
            return self.values.index(value)
        if self.is_src:
            v = 0 if value is None else int(value)
            return max(0, min(v, len(self.values) - 1))
        try:
            return min(range(len(self.values)),
                       key=lambda i: abs(float(self.values[i]) - float(value)))
        except (TypeError, ValueError):
            return 0


@dataclass(frozen=True)
class SearchSpace:
    mode: str                      # "layers" | "module"
    features: tuple[Feature, ...]
    max_layers: int = 20
    max_branches: int = MAX_BRANCHES
    fixed: tuple[tuple[str, object], ...] = ()  # defaults for non-featured fields

    @property
    def kind_feature(self) -> Feature:
        return self.features[0]

    @property
    def kinds(self) -> tuple:
        return self.kind_feature.values

    @property
    def scale_features(self) -> tuple[Feature, ...]:
        return tuple(f for f in self.features[1:] if f.scaleable and not f.is_src)

    @property
    def insert_features(self) -> tuple[Feature, ...]:
        return self.features

    @property
    def src_feature(self) -> Feature:
        return next(f for f in self.features if f.is_src and f.name == "src1")

    def unit_count(self, state) -> int:
        if self.mode == "layers":
            return len(state.layers)
        return len(state.module.branches)

    def src_valid(self, state) -> list[bool]:
        """Mask over src candidate values: existing units plus the input."""
        n = self.unit_count(state)
        return [v <= n for v in self.src_feature.values]

    def remove_valid(self, state) -> list[bool]:
        """Mask over removal slots: any existing layer/branch (never the
        input at slot 0). Removals that would disconnect are rejected at
        application time."""
        n = self.unit_count(state)
        return [1 <= v <= n for v in self.src_feature.values]

    def field_violations(self, unit) -> list[str]:
        """Field values outside their owning feature's candidate list
        (hook for arch.validate)."""
        out = []
        kind = unit.kind if isinstance(unit, LayerSpec) else unit.branch_type
        for feat in self.features:
            if feat.fields and feat.applies(kind):
                for fld in feat.fields:
                    v = getattr(unit, fld)
                    if feat.name == "propagate":
                        v = int(v)
                    if v is not None and v not in feat.values:
                        out.append(f"{fld}={v!r} not in {feat.name} candidates")
        return out


def kws_layer_space(max_layers: int = 20) -> SearchSpace:
    """Layer-by-layer search space for keyword spotting."""
    conv = ("Conv2d", "DepSepConv2d", "DilatedConv2d")
    src = tuple(range(max_layers))
    return SearchSpace(
        mode="layers",
        features=(
            Feature("layer_type", ("Conv2d", "DepSepConv2d", "DilatedConv2d",
                                   "GRU", "AvgPool2d", "FC"),
                    "*", ("kind",), scaleable=False),
            Feature("num_layers", (1, 2, 3, 4, 5), "*", ("repeat",)),
            Feature("kernel_time", (1, 4, 8, 16, 20),
                    conv + ("AvgPool2d",), ("kernel_t",)),
            Feature("kernel_freq", (1, 2, 4, 8, 10),
                    conv + ("AvgPool2d",), ("kernel_f",)),
            Feature("channels", (4, 12, 16, 32, 64, 128, 192, 256),
                    conv + ("GRU", "FC"), ("channels_or_hidden",)),
            Feature("stride_time", (1, 2, 4, 8, 10), conv, ("stride_t",)),
            Feature("stride_freq_or_dilation", (1, 2, 3, 4, 5), conv,
                    ("stride_f_or_dilation",)),
            Feature("gru_directions", (1, 2), ("GRU",), ("directions",)),
            Feature("dropout_keep", (0.8, 0.9, 1.0),
                    conv + ("GRU", "FC"), ("dropout_keep",)),
            Feature("src1", src, "*", ("src1",), scaleable=False, is_src=True),
            Feature("src2", src, ("Add",), ("src2",), scaleable=False, is_src=True),
        ),
        max_layers=max_layers,
        fixed=(("activation", "relu"),),
    )


def image_layer_space(max_layers: int = 20) -> SearchSpace:
    """Layer-by-layer search space for image classification."""
    conv = ("Conv2d", "DepSepConv2d")
    src = tuple(range(max_layers))
    return SearchSpace(
        mode="layers",
        features=(
            Feature("layer_type", ("Conv2d", "DepSepConv2d", "MaxPool2d", "Add"),
                    "*", ("kind",), scaleable=False),
            Feature("filter_width", (3, 5, 7), conv, ("kernel_t", "kernel_f")),
            Feature("pooling_width", (2, 3), ("MaxPool2d",), ("kernel_t", "kernel_f")),
            Feature("channels", (16, 32, 64, 96, 128, 256), conv,
                    ("channels_or_hidden",)),
            Feature("activation", ("relu", "crelu", "elu", "selu", "swish"),
                    conv, ("activation",)),
            Feature("src1", src, "*", ("src1",), scaleable=False, is_src=True),
            Feature("src2", src, ("Add",), ("src2",), scaleable=False, is_src=True),
        ),
        max_layers=max_layers,
    )


def image_module_space() -> SearchSpace:
    """Module (multi-branch cell) search space for image classification."""
    conv_types = ("conv-conv", "conv-maxpool", "conv-avgpool", "conv-none",
                  "sep1x7-7x1-none")
    pool_types = ("conv-maxpool", "conv-avgpool", "maxpool-none", "avgpool-none")
    two_op = ("conv-conv", "conv-maxpool", "conv-avgpool")
    src = tuple(range(MAX_BRANCHES + 1))
    return SearchSpace(
        mode="module",
        features=(
            Feature("branch_type", ("conv-conv", "conv-maxpool", "conv-avgpool",
                                    "conv-none", "maxpool-none", "avgpool-none",
                                    "sep1x7-7x1-none"),
                    "*", ("branch_type",), scaleable=False),
            Feature("filter_width", (3, 5, 7), conv_types, ("filter_width",)),
            Feature("pooling_width", (2, 3), pool_types, ("pooling_width",)),
            Feature("channels", (8, 12, 16, 24, 32), conv_types, ("channels",)),
            Feature("src1", src, "*", ("src1",), scaleable=False, is_src=True),
            Feature("src2", src, two_op, ("src2",), scaleable=False, is_src=True),
            Feature("propagate", (0, 1), "*", ("propagate",)),
        ),
        max_branches=MAX_BRANCHES,
    )


SPACES = {"kws": kws_layer_space, "image": image_layer_space,
          "image-module": image_module_space}


@dataclass(frozen=True)
class Action:
    """One sampled adaptation: per-(unit, feature) scale choices, a full
    new-unit proposal, a 3-way structural decision, and a removal slot.
    All choices are candidate indices; log_prob sums every sampled choice."""
    scale: tuple[tuple[int, ...], ...]
    insert: tuple[int, ...]
    structural: int
    remove_slot: int
    log_prob: float = 0.0


def _set_fields(feat: Feature, fields: dict, value):
    for fld in feat.fields:
        fields[fld] = bool(value) if feat.name == "propagate" else value


def build_unit(space: SearchSpace, insert_choices) -> LayerSpec | BranchSpec:
    """Materialize the sampled insert choices into a LayerSpec/BranchSpec.
    Only features applicable to the sampled kind take effect."""
    feats = space.insert_features
    if len(insert_choices) != len(feats):
        raise InvalidChoice(f"expected {len(feats)} insert choices")
    for feat, idx in zip(feats, insert_choices):
        if not (0 <= idx < len(feat.values)):
            raise InvalidChoice(f"{feat.name} index {idx} out of range")
    kind = feats[0].values[insert_choices[0]]
    fields = dict(space.fixed)
    for feat, idx in zip(feats[1:], insert_choices[1:]):
        if feat.applies(kind):
            _set_fields(feat, fields, feat.values[idx])
    if space.mode == "layers":
        if kind != "Add":
            fields.pop("src2", None)
        return LayerSpec(kind, **fields)
    return BranchSpec(kind, **fields)


def identity_scale(space: SearchSpace, state) -> tuple[tuple[int, ...], ...]:
    """Scale choices that leave every unit unchanged (current value indices)."""
    units = state.layers if space.mode == "layers" else state.module.branches
    out = []
    for unit in units:
        kind = unit.kind if space.mode == "layers" else unit.branch_type
        row = []
        for feat in space.scale_features:
            v = getattr(unit, feat.fields[0]) if feat.applies(kind) else feat.values[0]
            if feat.name == "propagate":
                v = int(v)
            row.append(feat.index_of(v))
        out.append(tuple(row))
    return tuple(out)


def apply_scale(state, scale_choices, space: SearchSpace):
    """Replace each unit's feature values with the chosen candidates; wiring
    and kinds are untouched. The result is validated."""
    units = state.layers if space.mode == "layers" else state.module.branches
    feats = space.scale_features
    if len(scale_choices) != len(units):
        raise InvalidChoice(f"expected {len(units)} scale rows")
    new_units = []
    for unit, row in zip(units, scale_choices):
        if len(row) != len(feats):
            raise InvalidChoice(f"expected {len(feats)} choices per unit")
        kind = unit.kind if space.mode == "layers" else unit.branch_type
        fields = {}
        for feat, idx in zip(feats, row):
            if not (0 <= idx < len(feat.values)):
                raise InvalidChoice(f"{feat.name} index {idx} out of range")
            if feat.applies(kind):
                _set_fields(feat, fields, feat.values[idx])
        new_units.append(replace(unit, **fields))
    if space.mode == "layers":
        out = ArchGraph(tuple(new_units), state.input_shape, state.output_classes)
    else:
        out = ModuleArch(ModuleSpec(tuple(new_units)), state.input_shape,
                         state.output_classes)
    _check(out)
    return out


def _check(state):
    bad = validate(state)
    if any(v.code == "shape-underflow" for v in bad):
        raise ShapeUnderflow(next(v.where for v in bad if v.code == "shape-underflow"))
    if any(v.code == "no-propagating-branch" for v in bad):
        raise NoPropagatingBranch()
    if bad:
        raise InvalidMutation(bad)


def apply_insert_layer(graph: ArchGraph, new_layer: LayerSpec,
                       max_layers: int | None = None) -> ArchGraph:
    """Insert a layer after its src1; every consumer of src1's output is
    rewired to consume the new layer. For a two-source join the sources are
    normalized so src1 is the later one (the attachment point), which keeps
    removal (rewire-to-src1) the exact inverse of insertion."""
    n = len(graph.layers)
    if max_layers is not None and n >= max_layers:
        raise LayerLimit(f"graph already has {n} layers")
    if new_layer.kind == "Add":
        if new_layer.src2 is None:
            raise InvalidSource("join layer needs src2")
        hi, lo = sorted((new_layer.src1, new_layer.src2), reverse=True)
        new_layer = replace(new_layer, src1=hi, src2=lo)
    for s in ([new_layer.src1, new_layer.src2] if new_layer.kind == "Add"
              else [new_layer.src1]):
        if not (0 <= s <= n):
            raise InvalidSource(f"src {s} outside [0, {n}]")
    if new_layer.kind == "Add" and new_layer.combine is None:
        shapes = [graph.input_shape] + infer_shapes(graph)
        c1 = shapes[new_layer.src1].channels
        c2 = shapes[new_layer.src2].channels
        new_layer = replace(new_layer, combine="add" if c1 == c2 else "concat")

    a = new_layer.src1  # attachment point; references >= a shift past the new layer
    rebased = []
    for i, layer in enumerate(graph.layers, 1):
        if i <= a:
            rebased.append(layer)
        else:
            kw = {"src1": layer.src1 + 1 if layer.src1 >= a else layer.src1}
            if layer.src2 is not None:
                kw["src2"] = layer.src2 + 1 if layer.src2 >= a else layer.src2
            rebased.append(replace(layer, **kw))
    layers = rebased[:a] + [new_layer] + rebased[a:]
    out = ArchGraph(tuple(layers), graph.input_shape, graph.output_classes)
    _check(out)
    return out


def apply_remove(graph: ArchGraph, index: int) -> ArchGraph:
    """Delete the layer at ``index`` (1-based); its consumers are rewired to
    its src1 ancestor. The input (slot 0) is never removable, and a removal
    that leaves the graph empty or strands a layer is rejected."""
    n = len(graph.layers)
    if not (1 <= index <= n):
        raise InvalidSource(f"no layer at index {index}")
    if n == 1:
        raise RemoveWouldDisconnect("removing the only layer")
    anc = graph.layers[index - 1].src1
    layers = []
    for i, layer in enumerate(graph.layers, 1):
        if i == index:
            continue
        if i < index:
            layers.append(layer)
            continue

        def remap(s):
            if s == index:
                return anc
            return s - 1 if s > index else s

        kw = {"src1": remap(layer.src1)}
        if layer.src2 is not None:
            kw["src2"] = remap(layer.src2)
        layers.append(replace(layer, **kw))
    out = ArchGraph(tuple(layers), graph.input_shape, graph.output_classes)
    bad = validate(out)
    if any(v.code == "dangling-layer" for v in bad):
        raise RemoveWouldDisconnect("removal strands an upstream layer")
    if bad:
        raise InvalidMutation(bad)
    return out


def apply_insert_branch(march: ModuleArch, new_branch: BranchSpec) -> ModuleArch:
    """Append a branch. Every branch the new one consumes stops propagating
    (its output now flows through the new branch instead of the module
    output); the new branch's own propagate bit is as sampled, except that
    the first branch of an empty module always propagates."""
    module = march.module
    n = len(module.branches)
    if n >= MAX_BRANCHES:
        raise BranchLimit(f"module already has {n} branches")
    op1, op2 = BRANCH_OPS.get(new_branch.branch_type, ("conv", None))
    used = [new_branch.src1] + ([new_branch.src2] if op2 else [])
    for s in used:
        if not (0 <= s <= n):
            raise InvalidSource(f"branch src {s} outside [0, {n}]")
    if n == 0:
        new_branch = replace(new_branch, propagate=True)
    branches = []
    for bi, br in enumerate(module.branches, 1):
        branches.append(replace(br, propagate=False) if bi in used else br)
    branches.append(new_branch)
    out = ModuleArch(ModuleSpec(tuple(branches)), march.input_shape,
                     march.output_classes)
    _check(out)
    return out


def apply_remove_branch(march: ModuleArch, index: int) -> ModuleArch:
    """Delete branch ``index`` (1-based); consumers are remapped to its src1."""
    module = march.module
    n = len(module.branches)
    if not (1 <= index <= n):
        raise InvalidSource(f"no branch at index {index}")
    if n == 1:
        raise RemoveWouldDisconnect("removing the only branch")
    anc = module.branches[index - 1].src1

    def remap(s):
        if s == index:
            return anc
        return s - 1 if s > index else s

    branches = [replace(br, src1=remap(br.src1), src2=remap(br.src2))
                for bi, br in enumerate(module.branches, 1) if bi != index]
    out = ModuleArch(ModuleSpec(tuple(branches)), march.input_shape,
                     march.output_classes)
    _check(out)
    return out


def apply_action(state, action: Action, space: SearchSpace):
    """Scale first, then the structural mutation on top; raises ActionError /
    ShapeUnderflow when the composite is invalid."""
    new = apply_scale(state, action.scale, space)
    if action.structural == INSERT:
        unit = build_unit(space, action.insert)
        if space.mode == "layers":
            return apply_insert_layer(new, unit, space.max_layers)
        return apply_insert_branch(new, unit)
    if action.structural == REMOVE:
        target = space.src_feature.values[action.remove_slot]
        if not space.remove_valid(state)[action.remove_slot]:
            raise InvalidSource(f"slot {target} not removable")
        if space.mode == "layers":
            return apply_remove(new, target)
        return apply_remove_branch(new, target)
    return new  # keep


def random_action(space: SearchSpace, state, rng) -> Action:
    """Uniform action: every feature choice drawn uniformly from its (masked)
    candidates, the structural decision uniformly from insert/keep/remove."""
    logp = 0.0

    def pick(n_or_mask):
        nonlocal logp
        if isinstance(n_or_mask, int):
            valid = list(range(n_or_mask))
        else:
            valid = [i for i, ok in enumerate(n_or_mask) if ok]
        if not valid:
            return 0
        logp += -math.log(len(valid))
        return int(valid[rng.integers(len(valid))])

    units = space.unit_count(state)
    scale = tuple(tuple(pick(len(f.values)) for f in space.scale_features)
                  for _ in range(units))
    src_mask = space.src_valid(state)
    insert = tuple(pick(src_mask if f.is_src else len(f.values))
                   for f in space.insert_features)
    structural = pick(3)
    remove_slot = pick(space.remove_valid(state))
    return Action(scale, insert, structural, remove_slot, logp)
