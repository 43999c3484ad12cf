"""Small synthetic datasets, generated on the fly (nothing to download).

Each dataset is deterministic for a given seed and returns channels-first
float tensors shaped like the matching audio/image task.
"""

from __future__ import annotations

import numpy as np
import torch

SPECS = {
    # name: (time, freq, channels), classes, train size, val size
    "synthetic-2d": ((4, 4, 1), 2, 512, 256),
    "small-image-10class": ((32, 32, 3), 10, 600, 300),
    "small-audio-12class": ((49, 40, 1), 12, 600, 300),
}


class UnknownDataset(Exception):
    pass


def dataset_spec(name):
    if name not in SPECS:
        raise UnknownDataset(name)
    return SPECS[name]


def _to_torch(x, y):
    # (N, T, F, C) -> (N, C, T, F)
    xt = torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2))).float()
    return xt, torch.from_numpy(y).long()


def make_dataset(name: str, seed: int):
    """(train_x, train_y, val_x, val_y) for the named task."""
    shape, classes, n_train, n_val = dataset_spec(name)
    rng = np.random.default_rng([seed, hash(name) & 0xFFFF])
    n = n_train + n_val

    if name == "synthetic-2d":
        # linearly separable with a real margin: label = sign of a fixed
        # random projection, every point pushed 0.5 units off the boundary
        w = rng.standard_normal(int(np.prod(shape)))
        w /= np.linalg.norm(w)
        x = rng.standard_normal((n, *shape))
        s = x.reshape(n, -1) @ w
        y = (s > 0).astype(np.int64)
        x += (0.5 * np.sign(s))[:, None, None, None] * w.reshape(shape)
    else:
        # class-conditional templates plus noise
        templates = 1.5 * rng.standard_normal((classes, *shape))
        y = rng.integers(0, classes, size=n).astype(np.int64)
        x = templates[y] + 0.8 * rng.standard_normal((n, *shape))

    tx, ty = _to_torch(x[:n_train], y[:n_train])
    vx, vy = _to_torch(x[n_train:], y[n_train:])
    return tx, ty, vx, vy
