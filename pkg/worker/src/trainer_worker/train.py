"""Desk-scale child training: a few Adam epochs on a small synthetic
dataset, scored by validation accuracy."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .arch_schema import Arch
from .datasets import dataset_spec, make_dataset
from .models import build_model

BATCH_SIZE = 64
LEARNING_RATE = 1e-2  # few-epoch budgets need the aggressive end of Adam's range


def train_and_score(arch: Arch, dataset: str, epochs: int, seed: int,
                    device: str = "cpu") -> float:
    """Train the architecture for the requested number of epochs and return
    validation accuracy in [0, 1]. Deterministic for a fixed seed (on CPU;
    the device argument is a hint for hosts with accelerators)."""
    _, classes, _, _ = dataset_spec(dataset)
    torch.manual_seed(seed)
    dev = torch.device(device)
    tx, ty, vx, vy = (t.to(dev) for t in make_dataset(dataset, seed))
    model = build_model(arch, classes).to(dev)
    opt = torch.optim.Adam(model.parameters(), lr=LEARNING_RATE)

    model.train()
    n = tx.shape[0]
    for _ in range(max(0, epochs)):
        perm = torch.randperm(n)
        for start in range(0, n, BATCH_SIZE):
            idx = perm[start:start + BATCH_SIZE]
            opt.zero_grad()
            loss = F.cross_entropy(model(tx[idx]), ty[idx])
            loss.backward()
            opt.step()

    model.eval()
    with torch.no_grad():
        correct = 0
        for start in range(0, vx.shape[0], BATCH_SIZE):
            logits = model(vx[start:start + BATCH_SIZE])
            correct += (logits.argmax(dim=1) == vy[start:start + BATCH_SIZE]).sum().item()
    return correct / vx.shape[0]
