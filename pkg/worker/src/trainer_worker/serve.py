"""Evaluator process: newline-delimited JSON on stdin/stdout.

Emits {"type": "hello", "protocol": 1} on start, then answers every
evaluate request with exactly one result message. Per-request failures
(unparseable JSON, unknown layer kinds, shape underflow, dataset mismatch)
are reported in-band; nothing takes the stream down.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import torch

from .arch_schema import ArchError, ShapeError, UnsupportedLayer, parse_arch
from .datasets import UnknownDataset, dataset_spec
from .train import train_and_score

PROTOCOL = 1


def _emit(out, obj):
    out.write(json.dumps(obj) + "\n")
    out.flush()


def _failed(rid, reason):
    return {"type": "result", "request_id": rid, "status": "failed",
            "performance": 0.0, "wall_seconds": 0.0, "reason": reason}


def handle_request(msg, default_dataset, max_epochs, seed, device="cpu"):
    rid = msg.get("request_id")
    if msg.get("type") != "evaluate":
        return _failed(rid, f"unknown request type {msg.get('type')!r}")
    t0 = time.monotonic()
    budget = msg.get("budget") or {}
    dataset = budget.get("dataset") or default_dataset
    epochs = budget.get("epochs")
    epochs = max_epochs if epochs is None else min(int(epochs), max_epochs)
    try:
        arch = parse_arch(msg.get("arch"))
        shape, classes, _, _ = dataset_spec(dataset)
        if arch.input_shape != shape:
            return _failed(rid, f"input-shape-mismatch: arch {arch.input_shape} "
                                f"vs dataset {shape}")
        performance = train_and_score(arch, dataset, epochs, seed, device)
    except UnknownDataset as e:
        return _failed(rid, f"unknown-dataset: {e}")
    except UnsupportedLayer as e:
        return _failed(rid, f"unsupported-layer: {e}")
    except (ArchError, ShapeError) as e:
        return _failed(rid, f"parse: {e}")
    except Exception as e:  # keep the stream alive whatever the model did
        return _failed(rid, f"train: {type(e).__name__}: {e}")
    return {"type": "result", "request_id": rid, "status": "ok",
            "performance": performance,
            "wall_seconds": time.monotonic() - t0}


def serve(stdin=None, stdout=None, default_dataset="synthetic-2d",
          max_epochs=5, seed=0, device="cpu"):
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    _emit(stdout, {"type": "hello", "protocol": PROTOCOL})
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            _emit(stdout, _failed(None, "parse: not valid JSON"))
            continue
        if not isinstance(msg, dict):
            _emit(stdout, _failed(None, "parse: not an object"))
            continue
        _emit(stdout, handle_request(msg, default_dataset, max_epochs, seed,
                                     device))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="trainer-worker")
    ap.add_argument("--dataset", default="synthetic-2d",
                    choices=["synthetic-2d", "small-image-10class",
                             "small-audio-12class"],
                    help="dataset when a request has no budget.dataset")
    ap.add_argument("--max-epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--device", default="cpu",
                    help="torch device hint (cpu unless the host has more)")
    ap.add_argument("--threads", type=int, default=1,
                    help="torch CPU threads (1 keeps results reproducible)")
    args = ap.parse_args(argv)
    torch.set_num_threads(args.threads)
    serve(default_dataset=args.dataset, max_epochs=args.max_epochs,
          seed=args.seed, device=args.device)
    return 0


if __name__ == "__main__":
    sys.exit(main())
