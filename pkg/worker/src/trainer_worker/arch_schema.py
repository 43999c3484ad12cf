"""Wire-format architecture parsing and shape checking.

This process talks to the search engine only through line-delimited JSON, so
it carries its own reading of the architecture format and the shape rules:
same-padded convolutions (out = ceil(in / stride)), floor-division pooling
with kernel = stride, GRUs consuming freq x channels per timestep and
emitting (time, 1, hidden * directions), FC flattening its input except when
fed by a GRU (then it reads the final timestep's features).
"""

from __future__ import annotations

from dataclasses import dataclass

KINDS = ("Conv2d", "DepSepConv2d", "DilatedConv2d", "GRU",
         "AvgPool2d", "MaxPool2d", "FC", "Add")
ACTIVATIONS = ("relu", "crelu", "elu", "selu", "swish", "none")


class ArchError(Exception):
    """Malformed architecture document."""


class UnsupportedLayer(ArchError):
    pass


class ShapeError(ArchError):
    pass


@dataclass(frozen=True)
class Layer:
    kind: str
    channels: int = 1
    repeat: int = 1
    kernel_t: int = 1
    kernel_f: int = 1
    stride_t: int = 1
    stride_f: int = 1          # dilation rate for dilated convolutions
    directions: int = 1
    activation: str = "none"
    dropout_keep: float = 1.0
    src1: int = 0
    src2: int | None = None
    combine: str | None = None


@dataclass(frozen=True)
class Arch:
    layers: tuple[Layer, ...]
    input_shape: tuple[int, int, int]  # (time, freq, channels)
    classes: int


def parse_arch(doc) -> Arch:
    if not isinstance(doc, dict):
        raise ArchError("architecture must be a JSON object")
    if doc.get("mode") != "layers":
        raise ArchError(f"unsupported mode {doc.get('mode')!r}")
    shape = doc.get("input_shape")
    if (not isinstance(shape, list) or len(shape) != 3
            or any(not isinstance(d, int) or d < 1 for d in shape)):
        raise ArchError("input_shape must be three positive ints")
    classes = doc.get("classes")
    if not isinstance(classes, int) or classes < 1:
        raise ArchError("classes must be a positive int")
    raw = doc.get("layers")
    if not isinstance(raw, list):
        raise ArchError("layers must be a list")
    if not raw:
        raise UnsupportedLayer("empty layer list")

    layers = []
    for i, obj in enumerate(raw, 1):
        if not isinstance(obj, dict):
            raise ArchError(f"layer {i} must be an object")
        kind = obj.get("kind")
        if kind not in KINDS:
            raise UnsupportedLayer(f"layer {i}: kind {kind!r}")
        act = obj.get("activation", "none")
        if act not in ACTIVATIONS:
            raise ArchError(f"layer {i}: activation {act!r}")
        try:
            layer = Layer(
                kind=kind,
                channels=int(obj.get("channels_or_hidden", 1)),
                repeat=int(obj.get("repeat", 1)),
                kernel_t=int(obj.get("kernel_t", 1)),
                kernel_f=int(obj.get("kernel_f", 1)),
                stride_t=int(obj.get("stride_t", 1)),
                stride_f=int(obj.get("stride_f_or_dilation", 1)),
                directions=int(obj.get("directions", 1)),
                activation=act,
                dropout_keep=float(obj.get("dropout_keep", 1.0)),
                src1=int(obj.get("src1", 0)),
                src2=None if obj.get("src2") is None else int(obj["src2"]),
                combine=obj.get("combine"),
            )
        except (TypeError, ValueError) as e:
            raise ArchError(f"layer {i}: {e}") from None
        if layer.kind == "Add" and layer.src2 is None:
            raise ArchError(f"layer {i}: join needs src2")
        for s in (layer.src1, layer.src2):
            if s is not None and not (0 <= s < i):
                raise ArchError(f"layer {i}: source {s} out of range")
        if min(layer.channels, layer.repeat, layer.kernel_t, layer.kernel_f,
               layer.stride_t, layer.stride_f) < 1:
            raise ArchError(f"layer {i}: non-positive dimension")
        layers.append(layer)
    return Arch(tuple(layers), tuple(shape), classes)


def _ceil_div(a, b):
    return -(-a // b)


def infer_shapes(arch: Arch) -> list[tuple[int, int, int]]:
    """Per-layer output shapes (time, freq, channels); raises ShapeError."""
    shapes = [arch.input_shape]
    kinds = ["input"]
    for i, l in enumerate(arch.layers, 1):
        t, f, c = shapes[l.src1]
        if l.kind in ("Conv2d", "DepSepConv2d", "DilatedConv2d"):
            sf = 1 if l.kind == "DilatedConv2d" else l.stride_f
            for _ in range(l.repeat):
                t, f = _ceil_div(t, l.stride_t), _ceil_div(f, sf)
            out = (t, f, l.channels)
        elif l.kind in ("AvgPool2d", "MaxPool2d"):
            for _ in range(l.repeat):
                t, f = t // l.kernel_t, f // l.kernel_f
                if t < 1 or f < 1:
                    raise ShapeError(f"layer {i}: pooled dimension hit zero")
            out = (t, f, c)
        elif l.kind == "GRU":
            out = (t, 1, l.channels * l.directions)
        elif l.kind == "FC":
            out = (1, 1, l.channels)
        else:  # Add
            t2, f2, c2 = shapes[l.src2]
            if (t, f) != (t2, f2):
                raise ShapeError(f"layer {i}: join of {t}x{f} with {t2}x{f2}")
            mode = l.combine or ("add" if c == c2 else "concat")
            if mode == "add" and c != c2:
                raise ShapeError(f"layer {i}: add with unequal channels")
            out = (t, f, c if mode == "add" else c + c2)
        shapes.append(out)
        kinds.append(l.kind)

    consumed = set()
    for l in arch.layers:
        consumed.add(l.src1)
        if l.src2 is not None:
            consumed.add(l.src2)
    for i in range(1, len(arch.layers)):
        if i not in consumed:
            raise ShapeError(f"layer {i} never reaches the output")
    return shapes[1:]
