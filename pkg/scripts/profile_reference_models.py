#!/usr/bin/env python3
"""Profile a few hand-written keyword-spotting reference architectures and
print their resource table (params, FLOPs, bytes, compute intensity)."""

from archsearch.arch import ArchGraph, LayerSpec, TensorShape
from archsearch.resources import report

KWS = TensorShape(49, 40, 1)

MODELS = {
    "fc-12 (search baseline)": ArchGraph(
        (LayerSpec("FC", 12, activation="relu"),), KWS, 12),
    "gru-2x64 + fc-12": ArchGraph(
        (LayerSpec("GRU", 64, repeat=2),
         LayerSpec("FC", 12, activation="relu", src1=1)), KWS, 12),
    "gru-1x154 + fc-12": ArchGraph(
        (LayerSpec("GRU", 154),
         LayerSpec("FC", 12, activation="relu", src1=1)), KWS, 12),
    "conv-3x32 + pool + fc-12": ArchGraph(
        (LayerSpec("Conv2d", 32, repeat=3, kernel_t=4, kernel_f=8,
                   stride_f_or_dilation=3, activation="relu"),
         LayerSpec("AvgPool2d", kernel_t=49, kernel_f=2, src1=1),
         LayerSpec("FC", 12, activation="relu", src1=2)), KWS, 12),
    "ds-cnn + pool + fc-12": ArchGraph(
        (LayerSpec("Conv2d", 64, kernel_t=10, kernel_f=4, stride_t=2,
                   stride_f_or_dilation=2, activation="relu"),
         LayerSpec("DepSepConv2d", 64, repeat=4, kernel_t=3, kernel_f=3,
                   activation="relu", src1=1),
         LayerSpec("AvgPool2d", kernel_t=25, kernel_f=20, src1=2),
         LayerSpec("FC", 12, activation="relu", src1=3)), KWS, 12),
}


def main():
    header = f"{'model':28s} {'params':>10s} {'MFLOPs':>10s} {'KB moved':>10s} {'FLOPs/B':>8s}"
    print(header)
    print("-" * len(header))
    for name, graph in MODELS.items():
        rep = report(graph)
        print(f"{name:28s} {rep.params:10d} {rep.flops / 1e6:10.3f} "
              f"{rep.bytes_accessed / 1024:10.1f} {rep.compute_intensity:8.2f}")


if __name__ == "__main__":
    main()
