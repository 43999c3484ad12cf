"""Analytic resource profile of a layer graph: parameter count, inference
FLOPs, slow-memory traffic in bytes, and compute intensity (FLOPs/byte).

Costing conventions (batch size 1, 4-byte weights and activations):

- a multiply-accumulate is 2 FLOPs; a matmul of (m,n) by (n,p) is 2mnp,
  generalized to tensors for convolutions
- every pointwise operation (bias add, nonlinearity, pool-window element,
  elementwise add) is 1 FLOP; concatenation and inference-time dropout are 0
- convolutions are dense and same-padded: taps over padding are computed,
  not skipped
- GRU gates cost 2*3*(n_in+h)*h matmul FLOPs plus 6 pointwise FLOPs per
  hidden unit per timestep per direction (3 gate nonlinearities + 3 state
  blend ops)
- each sub-operation charges its weights, all of its inputs, and its output
  to slow memory exactly once: no fusion, no cache-reuse credit
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .arch import ArchGraph, layer_sub_ops

BYTES_PER_ELEMENT = 4


class NotPowerOfTwo(ValueError):
    pass


def matmul_flops(m: int, n: int, p: int) -> int:
    """FLOPs of an (m,n) x (n,p) matrix multiply."""
    return 2 * m * n * p


def matmul_bytes(m: int, n: int, p: int) -> int:
    """Traffic of an (m,n) x (n,p) matmul: both operands plus the result."""
    return BYTES_PER_ELEMENT * (m * n + n * p + m * p)


def pointwise_flops(elements: int) -> int:
    """A pointwise op (nonlinearity, bias, ...) costs 1 FLOP per element."""
    return elements


def fft_flops(n: int) -> int:
    """FLOPs of a real FFT of length n (power of two >= 2): 2.5 * n * log2(n)."""
    if n < 2 or n & (n - 1):
        raise NotPowerOfTwo(f"FFT length must be a power of two >= 2, got {n}")
    return round(2.5 * n * math.log2(n))


@dataclass(frozen=True)
class LayerResources:
    params: int
    model_size_bytes: int
    flops: int
    bytes_accessed: int
    compute_intensity: float

    def to_dict(self) -> dict:
        return {"params": self.params, "model_size_bytes": self.model_size_bytes,
                "flops": self.flops, "bytes_accessed": self.bytes_accessed,
                "compute_intensity": self.compute_intensity}


@dataclass(frozen=True)
class ResourceReport:
    params: int
    model_size_bytes: int
    flops: int
    bytes_accessed: int
    compute_intensity: float
    per_layer: tuple[LayerResources, ...]

    def to_dict(self) -> dict:
        d = LayerResources.to_dict(self)  # same five summary fields
        d["per_layer"] = [p.to_dict() for p in self.per_layer]
        return d

    @staticmethod
    def from_dict(d: dict) -> "ResourceReport":
        per = tuple(LayerResources(**p) for p in d.get("per_layer", []))
        return ResourceReport(d["params"], d["model_size_bytes"], d["flops"],
                              d["bytes_accessed"], d["compute_intensity"], per)


def _prod(dims) -> int:
    t, f, c = dims
    return t * f * c


def _sub_params(sub: dict) -> int:
    op = sub["op"]
    if op == "conv":
        kt, kf = sub["k"]
        cin = sub["in"][2]
        cout = sub["out"][2]
        return (kt * kf * cin + 1) * cout
    if op == "dsconv":
        kt, kf = sub["k"]
        cin = sub["in"][2]
        cout = sub["out"][2]
        # depthwise filters (no bias) + biased pointwise projection
        return kt * kf * cin + (cin + 1) * cout
    if op == "gru":
        n_in, h, d = sub["n_in"], sub["hidden"], sub["directions"]
        return d * 3 * ((n_in + h) * h + h)
    if op == "fc":
        return (sub["n_in"] + 1) * sub["n_out"]
    return 0  # pool / add / concat


def _sub_flops(sub: dict) -> int:
    op = sub["op"]
    if op == "conv":
        kt, kf = sub["k"]
        cin = sub["in"][2]
        out = _prod(sub["out"])
        return out * (2 * kt * kf * cin + 1 + (1 if sub["act"] else 0))
    if op == "dsconv":
        kt, kf = sub["k"]
        cin = sub["in"][2]
        ot, of, cout = sub["out"]
        depthwise = ot * of * cin * (2 * kt * kf)
        pointwise = ot * of * cout * (2 * cin + 1 + (1 if sub["act"] else 0))
        return depthwise + pointwise
    if op == "pool":
        kt, kf = sub["k"]
        return _prod(sub["out"]) * kt * kf
    if op == "gru":
        n_in, h, d = sub["n_in"], sub["hidden"], sub["directions"]
        return sub["steps"] * d * (2 * 3 * (n_in + h) * h + 6 * h)
    if op == "fc":
        return sub["n_out"] * (2 * sub["n_in"] + 1 + (1 if sub["act"] else 0))
    if op == "add":
        return _prod(sub["out"])
    return 0  # concat


def _sub_io_elements(sub: dict) -> tuple[int, int]:
    op = sub["op"]
    if op in ("conv", "dsconv", "pool"):
        return _prod(sub["in"]), _prod(sub["out"])
    if op == "gru":
        h, d = sub["hidden"], sub["directions"]
        return sub["steps"] * sub["n_in"], sub["steps"] * h * d
    if op == "fc":
        return sub["n_in"], sub["n_out"]
    return sub["in1"] + sub["in2"], _prod(sub["out"])  # add / concat


def _sub_bytes(sub: dict) -> int:
    inp, out = _sub_io_elements(sub)
    return BYTES_PER_ELEMENT * (_sub_params(sub) + inp + out)


def count_params(graph: ArchGraph) -> tuple[int, list[int]]:
    """Total trainable parameters and the per-layer breakdown."""
    per = [sum(_sub_params(s) for s in subs) for subs in layer_sub_ops(graph)]
    return sum(per), per


def count_flops(graph: ArchGraph) -> tuple[int, list[int]]:
    """Total inference FLOPs (batch 1) and the per-layer breakdown."""
    per = [sum(_sub_flops(s) for s in subs) for subs in layer_sub_ops(graph)]
    return sum(per), per


def count_bytes_accessed(graph: ArchGraph) -> tuple[int, list[int]]:
    """Total slow-memory traffic in bytes and the per-layer breakdown."""
    per = [sum(_sub_bytes(s) for s in subs) for subs in layer_sub_ops(graph)]
    return sum(per), per


def report(graph: ArchGraph) -> ResourceReport:
    """Full resource profile. Pre: graph passes validate()."""
    per_layer = []
    for subs in layer_sub_ops(graph):
        p = sum(_sub_params(s) for s in subs)
        fl = sum(_sub_flops(s) for s in subs)
        by = sum(_sub_bytes(s) for s in subs)
        per_layer.append(LayerResources(p, BYTES_PER_ELEMENT * p, fl, by,
                                        fl / by if by else 0.0))
    params = sum(l.params for l in per_layer)
    flops = sum(l.flops for l in per_layer)
    total_bytes = sum(l.bytes_accessed for l in per_layer)
    return ResourceReport(
        params=params,
        model_size_bytes=BYTES_PER_ELEMENT * params,
        flops=flops,
        bytes_accessed=total_bytes,
        compute_intensity=flops / total_bytes if total_bytes else 0.0,
        per_layer=tuple(per_layer),
    )
