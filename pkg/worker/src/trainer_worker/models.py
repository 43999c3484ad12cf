"""Torch realizations of the wire-format layer kinds.

Tensor layout is channels-first (B, C, T, F). Convolutions reproduce
TF-style same padding (asymmetric, extra on the trailing edge) so output
shapes match the search engine's ceil(in / stride) rule; pooling uses
kernel = stride with floor semantics. crelu maps to ReLU as a
channel-preserving stand-in.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .arch_schema import Arch, Layer, UnsupportedLayer, infer_shapes

_ACTS = {"relu": nn.ReLU, "crelu": nn.ReLU, "elu": nn.ELU, "selu": nn.SELU,
         "swish": nn.SiLU, "none": nn.Identity}


def _same_pad(x, k, s, d=(1, 1)):
    _, _, t, f = x.shape
    pads = []
    for size, kk, ss, dd in ((f, k[1], s[1], d[1]), (t, k[0], s[0], d[0])):
        eff = (kk - 1) * dd + 1
        out = -(-size // ss)
        need = max(0, (out - 1) * ss + eff - size)
        pads += [need // 2, need - need // 2]
    return F.pad(x, pads)


class SamePadConv(nn.Module):
    def __init__(self, cin, cout, k, stride, dilation=(1, 1)):
        super().__init__()
        self.k, self.s, self.d = k, stride, dilation
        self.conv = nn.Conv2d(cin, cout, k, stride=stride, dilation=dilation)

    def forward(self, x):
        return self.conv(_same_pad(x, self.k, self.s, self.d))


class DepthwiseSeparable(nn.Module):
    def __init__(self, cin, cout, k, stride):
        super().__init__()
        self.k, self.s = k, stride
        self.depthwise = nn.Conv2d(cin, cin, k, stride=stride, groups=cin,
                                   bias=False)
        self.pointwise = nn.Conv2d(cin, cout, 1, bias=True)

    def forward(self, x):
        return self.pointwise(self.depthwise(_same_pad(x, self.k, self.s)))


class ConvBlock(nn.Module):
    def __init__(self, layer: Layer, cin):
        super().__init__()
        stages = []
        k = (layer.kernel_t, layer.kernel_f)
        for _ in range(layer.repeat):
            if layer.kind == "DepSepConv2d":
                conv = DepthwiseSeparable(cin, layer.channels, k,
                                          (layer.stride_t, layer.stride_f))
            elif layer.kind == "DilatedConv2d":
                conv = SamePadConv(cin, layer.channels, k, (layer.stride_t, 1),
                                   dilation=(layer.stride_f, layer.stride_f))
            else:
                conv = SamePadConv(cin, layer.channels, k,
                                   (layer.stride_t, layer.stride_f))
            stages.append(conv)
            stages.append(_ACTS[layer.activation]())
            if layer.dropout_keep < 1.0:
                stages.append(nn.Dropout(1.0 - layer.dropout_keep))
            cin = layer.channels
        self.body = nn.Sequential(*stages)

    def forward(self, x):
        return self.body(x)


class GRUBlock(nn.Module):
    def __init__(self, layer: Layer, in_features):
        super().__init__()
        self.gru = nn.GRU(in_features, layer.channels,
                          num_layers=layer.repeat, batch_first=True,
                          bidirectional=layer.directions == 2)
        self.drop = nn.Dropout(1.0 - layer.dropout_keep) \
            if layer.dropout_keep < 1.0 else nn.Identity()

    def forward(self, x):
        b, c, t, f = x.shape
        seq = x.permute(0, 2, 3, 1).reshape(b, t, f * c)
        out, _ = self.gru(seq)
        out = self.drop(out)
        return out.permute(0, 2, 1).unsqueeze(-1)  # (B, h*d, T, 1)


class FCBlock(nn.Module):
    def __init__(self, layer: Layer, in_features, from_gru):
        super().__init__()
        self.from_gru = from_gru
        stages = []
        n = in_features
        for _ in range(layer.repeat):
            stages.append(nn.Linear(n, layer.channels))
            stages.append(_ACTS[layer.activation]())
            if layer.dropout_keep < 1.0:
                stages.append(nn.Dropout(1.0 - layer.dropout_keep))
            n = layer.channels
        self.body = nn.Sequential(*stages)

    def forward(self, x):
        if self.from_gru:
            x = x[:, :, -1, 0]          # final timestep's features
        else:
            x = torch.flatten(x, 1)
        out = self.body(x)
        return out.unsqueeze(-1).unsqueeze(-1)


class Join(nn.Module):
    def __init__(self, mode):
        super().__init__()
        self.mode = mode

    def forward(self, a, b):
        return a + b if self.mode == "add" else torch.cat([a, b], dim=1)


class ChildModel(nn.Module):
    """The full architecture plus (when needed) a classifier projection to
    the training dataset's class count."""

    def __init__(self, arch: Arch, n_classes: int):
        super().__init__()
        shapes = infer_shapes(arch)            # raises on malformed graphs
        node_shapes = [arch.input_shape] + shapes
        kinds = ["input"] + [l.kind for l in arch.layers]
        self.arch = arch
        self.blocks = nn.ModuleList()
        self.wiring = []
        for l in arch.layers:
            t, f, c = node_shapes[l.src1]
            if l.kind in ("Conv2d", "DepSepConv2d", "DilatedConv2d"):
                self.blocks.append(ConvBlock(l, c))
            elif l.kind in ("AvgPool2d", "MaxPool2d"):
                cls = nn.AvgPool2d if l.kind == "AvgPool2d" else nn.MaxPool2d
                stages = [cls((l.kernel_t, l.kernel_f))] * l.repeat
                self.blocks.append(nn.Sequential(*stages))
            elif l.kind == "GRU":
                self.blocks.append(GRUBlock(l, f * c))
            elif l.kind == "FC":
                n_in = c if kinds[l.src1] == "GRU" else t * f * c
                self.blocks.append(FCBlock(l, n_in, kinds[l.src1] == "GRU"))
            elif l.kind == "Add":
                c2 = node_shapes[l.src2][2]
                mode = l.combine or ("add" if c == c2 else "concat")
                self.blocks.append(Join(mode))
            else:
                raise UnsupportedLayer(l.kind)
            self.wiring.append((l.src1, l.src2))

        sink = arch.layers[-1]
        t, f, c = shapes[-1]
        if sink.kind == "FC" and sink.channels == n_classes:
            self.head = None
        else:
            n_in = c if sink.kind == "GRU" else t * f * c
            self.head = nn.Linear(n_in, n_classes)
            self.head_from_gru = sink.kind == "GRU"

    def forward(self, x):
        outs = [x]
        for block, (s1, s2) in zip(self.blocks, self.wiring):
            if s2 is not None and isinstance(block, Join):
                outs.append(block(outs[s1], outs[s2]))
            else:
                outs.append(block(outs[s1]))
        y = outs[-1]
        if self.head is None:
            return torch.flatten(y, 1)
        y = y[:, :, -1, 0] if self.head_from_gru else torch.flatten(y, 1)
        return self.head(y)


def build_model(arch: Arch, n_classes: int) -> ChildModel:
    """Trainable model for the requested architecture; raises ArchError /
    UnsupportedLayer / ShapeError on graphs that cannot be realized."""
    return ChildModel(arch, n_classes)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
