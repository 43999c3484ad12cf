"""Recurrent controller with trainable architecture embeddings.

Pipeline: each layer (or branch) of the current architecture maps to a
trainable embedding (a kind row plus one row per applicable feature, summed);
an encoder LSTM folds the embeddings, in a canonical (depth, descriptor)
order, into a fixed-length network embedding. That embedding initializes two
controller LSTMs: the scale controller runs one step per (unit, feature) and
emits logits through that feature's output table; the insert/remove
controller runs one step per insert feature plus a final structural step
carrying the 3-way insert/keep/remove head and the removal-target head.

Everything is float64 and the log-likelihood gradient is exact (hand
backprop through the softmax heads, both controllers, the encoder, and the
embedding tables) so it can be checked against central finite differences.

Candidate heads for source features are masked to the indices that exist in
the current architecture (-inf before the softmax); a head with no valid
slot degenerates to probability 1 on slot 0 and contributes no gradient.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .actions import Action, SearchSpace


class UnknownDescriptor(Exception):
    """A unit kind outside the search space's vocabulary."""


class NonFiniteGradient(Exception):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    embed_dim: int = 16
    encoder_hidden: int = 32
    controller_hidden: int = 128
    init_range: float = 0.1


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_step(W, U, b, x, h, c):
    H = h.shape[0]
    z = W @ x + U @ h + b
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    o = _sigmoid(z[2 * H:3 * H])
    g = np.tanh(z[3 * H:])
    c2 = f * c + i * g
    tc2 = np.tanh(c2)
    return o * tc2, c2, (x, h, c, i, f, o, g, tc2)


def _lstm_back(W, U, cache, dh, dc, gW, gU, gb):
    x, h, c, i, f, o, g, tc2 = cache
    do = dh * tc2
    dct = dc + dh * o * (1.0 - tc2 * tc2)
    di = dct * g
    df = dct * c
    dg = dct * i
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                         do * o * (1 - o), dg * (1 - g * g)])
    gW += np.outer(dz, x)
    gU += np.outer(dz, h)
    gb += dz
    return W.T @ dz, U.T @ dz, dct * f  # dx, dh_prev, dc_prev


def _masked_softmax(logits, mask):
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            p = np.zeros_like(logits)
            p[0] = 1.0
            return p
        z = np.where(mask, logits, -np.inf)
    else:
        z = logits
    z = z - z[np.isfinite(z)].max()
    e = np.where(np.isfinite(z), np.exp(z), 0.0)
    return e / e.sum()


def init_params(space: SearchSpace, cfg: PolicyConfig | None = None,
                seed: int = 0) -> dict[str, np.ndarray]:
    """All tables and cells, uniformly initialized in [-init_range, init_range]."""
    cfg = cfg or PolicyConfig()
    rng = np.random.default_rng([int(seed), 0x9E11])
    E, H1, H2 = cfg.embed_dim, cfg.encoder_hidden, cfg.controller_hidden

    shapes: dict[str, tuple] = {
        "embed/kind": (len(space.kinds), E),
        "enc/W": (4 * H1, E), "enc/U": (4 * H1, H1), "enc/b": (4 * H1,),
        "scale/init_W": (H2, H1), "scale/init_b": (H2,),
        "scale/W": (4 * H2, E), "scale/U": (4 * H2, H2), "scale/b": (4 * H2,),
        "scale/tok": (len(space.scale_features), E),
        "ins/init_W": (H2, H1), "ins/init_b": (H2,),
        "ins/W": (4 * H2, E), "ins/U": (4 * H2, H2), "ins/b": (4 * H2,),
        "ins/tok": (len(space.insert_features) + 1, E),
        "head/struct/W": (3, H2), "head/struct/b": (3,),
        "head/rmsrc/W": (len(space.src_feature.values), H2),
        "head/rmsrc/b": (len(space.src_feature.values),),
    }
    for feat in space.features[1:]:
        shapes[f"embed/feat/{feat.name}"] = (len(feat.values), E)
    for feat in space.scale_features:
        shapes[f"head/scale/{feat.name}/W"] = (len(feat.values), H2)
        shapes[f"head/scale/{feat.name}/b"] = (len(feat.values),)
    for feat in space.insert_features:
        shapes[f"head/ins/{feat.name}/W"] = (len(feat.values), H2)
        shapes[f"head/ins/{feat.name}/b"] = (len(feat.values),)

    r = cfg.init_range
    return {k: rng.uniform(-r, r, size=s) for k, s in sorted(shapes.items())}


# ---------------------------------------------------------------------------
# forward pass


def _descriptor(space: SearchSpace, unit):
    kind = unit.kind if space.mode == "layers" else unit.branch_type
    try:
        kidx = space.kinds.index(kind)
    except ValueError:
        raise UnknownDescriptor(kind) from None
    buckets = []
    for feat in space.features[1:]:
        if feat.applies(kind):
            v = getattr(unit, feat.fields[0])
            if feat.name == "propagate":
                v = int(v)
            buckets.append(-1 if v is None else feat.index_of(v))
        else:
            buckets.append(-1)
    return kidx, tuple(buckets)


def _unit_depths(space: SearchSpace, state) -> list[int]:
    units = state.layers if space.mode == "layers" else state.module.branches
    depth = [0]
    for unit in units:
        if space.mode == "layers":
            srcs = [unit.src1] + ([unit.src2] if unit.kind == "Add" else [])
        else:
            srcs = [unit.src1, unit.src2]
        depth.append(1 + max(depth[s] for s in srcs))
    return depth[1:]


class _Forward:
    """Everything the backward pass needs, plus the head probabilities."""

    def __init__(self):
        self.descs = []
        self.emb = []
        self.order = []
        self.enc_caches = []
        self.net = None
        self.scale_steps = []   # dicts: unit, feat, cache, probs
        self.ins_steps = []     # dicts: feat, cache, probs, mask
        self.final = None       # dict: cache, struct_probs, rm_probs, rm_mask


def _forward(params, space: SearchSpace, state, cfg: PolicyConfig) -> _Forward:
    fw = _Forward()
    units = state.layers if space.mode == "layers" else state.module.branches
    H1 = cfg.encoder_hidden

    for unit in units:
        kidx, buckets = _descriptor(space, unit)
        vec = params["embed/kind"][kidx].copy()
        for feat, b in zip(space.features[1:], buckets):
            if b >= 0:
                vec += params[f"embed/feat/{feat.name}"][b]
        fw.descs.append((kidx, buckets))
        fw.emb.append(vec)

    depths = _unit_depths(space, state)
    fw.order = sorted(range(len(units)),
                      key=lambda u: (depths[u], fw.descs[u][0], fw.descs[u][1]))

    h = np.zeros(H1)
    c = np.zeros(H1)
    for u in fw.order:
        h, c, cache = _lstm_step(params["enc/W"], params["enc/U"],
                                 params["enc/b"], fw.emb[u], h, c)
        fw.enc_caches.append(cache)
    fw.net = h

    # scale controller: one step per (unit, feature)
    h = params["scale/init_W"] @ fw.net + params["scale/init_b"]
    c = np.zeros_like(h)
    for u in range(len(units)):
        for fi, feat in enumerate(space.scale_features):
            x = fw.emb[u] + params["scale/tok"][fi]
            h, c, cache = _lstm_step(params["scale/W"], params["scale/U"],
                                     params["scale/b"], x, h, c)
            logits = params[f"head/scale/{feat.name}/W"] @ h + \
                params[f"head/scale/{feat.name}/b"]
            fw.scale_steps.append({"unit": u, "feat": feat.name, "cache": cache,
                                   "h": h, "probs": _masked_softmax(logits, None)})

    # insert/remove controller: one step per insert feature + a structural step
    src_mask = space.src_valid(state)
    h = params["ins/init_W"] @ fw.net + params["ins/init_b"]
    c = np.zeros_like(h)
    for fi, feat in enumerate(space.insert_features):
        x = params["ins/tok"][fi]
        h, c, cache = _lstm_step(params["ins/W"], params["ins/U"],
                                 params["ins/b"], x, h, c)
        logits = params[f"head/ins/{feat.name}/W"] @ h + \
            params[f"head/ins/{feat.name}/b"]
        mask = src_mask if feat.is_src else None
        fw.ins_steps.append({"feat": feat.name, "cache": cache, "h": h,
                             "mask": mask,
                             "probs": _masked_softmax(logits, mask)})
    x = params["ins/tok"][len(space.insert_features)]
    h, c, cache = _lstm_step(params["ins/W"], params["ins/U"], params["ins/b"],
                             x, h, c)
    rm_mask = space.remove_valid(state)
    fw.final = {
        "cache": cache, "h": h,
        "struct_probs": _masked_softmax(
            params["head/struct/W"] @ h + params["head/struct/b"], None),
        "rm_probs": _masked_softmax(
            params["head/rmsrc/W"] @ h + params["head/rmsrc/b"], rm_mask),
        "rm_mask": rm_mask,
    }
    return fw


@dataclass(frozen=True)
class ActionDistribution:
    """Per-head categorical probabilities for the current architecture."""
    scale: tuple[tuple[np.ndarray, ...], ...]
    insert: tuple[np.ndarray, ...]
    structural: np.ndarray
    remove_src: np.ndarray


def embed_network(params, space: SearchSpace, state,
                  cfg: PolicyConfig | None = None) -> np.ndarray:
    """Deterministic fixed-length summary of an architecture: the encoder's
    final hidden state (zeros for an empty architecture)."""
    return _forward(params, space, state, cfg or PolicyConfig()).net.copy()


def action_distribution(params, space: SearchSpace, state,
                        cfg: PolicyConfig | None = None) -> ActionDistribution:
    fw = _forward(params, space, state, cfg or PolicyConfig())
    n_feats = len(space.scale_features)
    units = space.unit_count(state)
    scale = tuple(
        tuple(fw.scale_steps[u * n_feats + fi]["probs"].copy()
              for fi in range(n_feats))
        for u in range(units))
    return ActionDistribution(
        scale=scale,
        insert=tuple(s["probs"].copy() for s in fw.ins_steps),
        structural=fw.final["struct_probs"].copy(),
        remove_src=fw.final["rm_probs"].copy(),
    )


def _draw(probs: np.ndarray, rng) -> int:
    r = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), r, side="right"))
    return min(idx, len(probs) - 1)


def _gather(fw: _Forward, space: SearchSpace, action: Action) -> float:
    n_feats = len(space.scale_features)
    lp = 0.0
    for u, row in enumerate(action.scale):
        for fi, choice in enumerate(row):
            lp += np.log(fw.scale_steps[u * n_feats + fi]["probs"][choice])
    for step, choice in zip(fw.ins_steps, action.insert):
        lp += np.log(step["probs"][choice])
    lp += np.log(fw.final["struct_probs"][action.structural])
    lp += np.log(fw.final["rm_probs"][action.remove_slot])
    return float(lp)


def sample(params, space: SearchSpace, state, rng,
           cfg: PolicyConfig | None = None) -> Action:
    """Draw one action; reproducible for a fixed rng / seed. The log
    probability sums every sampled choice (scale for each unit and feature,
    every insert feature, the structural decision, and the removal slot)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    fw = _forward(params, space, state, cfg or PolicyConfig())
    n_feats = len(space.scale_features)
    units = space.unit_count(state)

    lp = 0.0

    def take(probs):
        nonlocal lp
        i = _draw(probs, rng)
        lp += np.log(probs[i])
        return i

    scale = tuple(
        tuple(take(fw.scale_steps[u * n_feats + fi]["probs"])
              for fi in range(n_feats))
        for u in range(units))
    insert = tuple(take(s["probs"]) for s in fw.ins_steps)
    structural = take(fw.final["struct_probs"])
    remove_slot = take(fw.final["rm_probs"])
    return Action(scale, insert, structural, remove_slot, float(lp))


def log_prob(params, space: SearchSpace, state, action: Action,
             cfg: PolicyConfig | None = None) -> float:
    return _gather(_forward(params, space, state, cfg or PolicyConfig()),
                   space, action)


def grad_log_prob(params, space: SearchSpace, state, action: Action,
                  cfg: PolicyConfig | None = None) -> dict[str, np.ndarray]:
    """Exact d log pi(action | state) / d params via backpropagation.
    Pre: the action has nonzero probability under the current parameters."""
    cfg = cfg or PolicyConfig()
    fw = _forward(params, space, state, cfg)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    n_feats = len(space.scale_features)
    d_emb = [np.zeros(cfg.embed_dim) for _ in fw.emb]
    d_net = np.zeros(cfg.encoder_hidden)

    def head_back(name, probs, choice, h):
        # d log p[choice] / d logits = onehot - probs
        dlog = -probs
        dlog[choice] += 1.0
        grads[f"head/{name}/W"] += np.outer(dlog, h)
        grads[f"head/{name}/b"] += dlog
        return params[f"head/{name}/W"].T @ dlog

    # --- insert/remove controller (reverse: structural step first)
    H2 = cfg.controller_hidden
    dh = np.zeros(H2)
    dc = np.zeros(H2)
    fin = fw.final
    dh += head_back("struct", fin["struct_probs"].copy(), action.structural, fin["h"])
    dh += head_back("rmsrc", fin["rm_probs"].copy(), action.remove_slot, fin["h"])
    dx, dh, dc = _lstm_back(params["ins/W"], params["ins/U"], fin["cache"],
                            dh, dc, grads["ins/W"], grads["ins/U"], grads["ins/b"])
    grads["ins/tok"][len(space.insert_features)] += dx
    for fi in range(len(fw.ins_steps) - 1, -1, -1):
        step = fw.ins_steps[fi]
        dh += head_back(f"ins/{step['feat']}", step["probs"].copy(),
                        action.insert[fi], step["h"])
        dx, dh, dc = _lstm_back(params["ins/W"], params["ins/U"], step["cache"],
                                dh, dc, grads["ins/W"], grads["ins/U"],
                                grads["ins/b"])
        grads["ins/tok"][fi] += dx
    grads["ins/init_W"] += np.outer(dh, fw.net)
    grads["ins/init_b"] += dh
    d_net += params["ins/init_W"].T @ dh

    # --- scale controller
    dh = np.zeros(H2)
    dc = np.zeros(H2)
    for si in range(len(fw.scale_steps) - 1, -1, -1):
        step = fw.scale_steps[si]
        u, fi = step["unit"], si % n_feats
        dh += head_back(f"scale/{step['feat']}", step["probs"].copy(),
                        action.scale[u][fi], step["h"])
        dx, dh, dc = _lstm_back(params["scale/W"], params["scale/U"],
                                step["cache"], dh, dc, grads["scale/W"],
                                grads["scale/U"], grads["scale/b"])
        grads["scale/tok"][fi] += dx
        d_emb[u] += dx
    grads["scale/init_W"] += np.outer(dh, fw.net)
    grads["scale/init_b"] += dh
    d_net += params["scale/init_W"].T @ dh

    # --- encoder
    dh = d_net
    dc = np.zeros(cfg.encoder_hidden)
    for pos in range(len(fw.order) - 1, -1, -1):
        dx, dh, dc = _lstm_back(params["enc/W"], params["enc/U"],
                                fw.enc_caches[pos], dh, dc, grads["enc/W"],
                                grads["enc/U"], grads["enc/b"])
        d_emb[fw.order[pos]] += dx

    # --- scatter embedding gradients into the lookup tables
    for u, (kidx, buckets) in enumerate(fw.descs):
        grads["embed/kind"][kidx] += d_emb[u]
        for feat, b in zip(space.features[1:], buckets):
            if b >= 0:
                grads[f"embed/feat/{feat.name}"][b] += d_emb[u]
    return grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @staticmethod
    def for_params(params) -> "AdamState":
        return AdamState(m={k: np.zeros_like(p) for k, p in params.items()},
                         v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState | None = None, lr: float = 0.0006,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One Adam update in the ASCENT direction, in place on ``params``.
    Raises NonFiniteGradient (before touching anything) on NaN/inf grads."""
    for k in sorted(grads):
        if not np.all(np.isfinite(grads[k])):
            raise NonFiniteGradient(k)
    if state is None:
        state = AdamState.for_params(params)
    state.t += 1
    t = state.t
    for k in sorted(params):
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(params[k])
        m = state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        mh = m / (1 - beta1 ** t)
        vh = v / (1 - beta2 ** t)
        params[k] += lr * mh / (np.sqrt(vh) + eps)
    return state


# ---------------------------------------------------------------------------
# parameter checkpoints: versioned header + little-endian float64 blobs

_MAGIC = b"ASPC"
_VERSION = 1


def params_to_bytes(params: dict[str, np.ndarray]) -> bytes:
    header = json.dumps({k: list(params[k].shape) for k in sorted(params)},
                        sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(params[k], dtype="<f8").tobytes()
                    for k in sorted(params))
    return _MAGIC + struct.pack("<II", _VERSION, len(header)) + header + blob


def params_from_bytes(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != _MAGIC:
        raise ValueError("not a parameter checkpoint")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    shapes = json.loads(data[12:12 + hlen].decode())
    out = {}
    off = 12 + hlen
    for k in sorted(shapes):
        shape = tuple(shapes[k])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data[off:off + 8 * n], dtype="<f8").reshape(shape)
        out[k] = arr.astype(np.float64).copy()
        off += 8 * n
    if off != len(data):
        raise ValueError("trailing bytes in parameter checkpoint")
    return out


def save_params(params, path):
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return params_from_bytes(f.read())


class Policy:
    """Convenience bundle of (space, config, parameters)."""

    def __init__(self, space: SearchSpace, cfg: PolicyConfig | None = None,
                 params: dict | None = None, seed: int = 0):
        self.space = space
        self.cfg = cfg or PolicyConfig()
        self.params = params if params is not None else init_params(space, self.cfg, seed)

    def sample(self, state, rng) -> Action:
        return sample(self.params, self.space, state, rng, self.cfg)

    def distribution(self, state) -> ActionDistribution:
        return action_distribution(self.params, self.space, state, self.cfg)

    def log_prob(self, state, action) -> float:
        return log_prob(self.params, self.space, state, action, self.cfg)

    def grad_log_prob(self, state, action) -> dict[str, np.ndarray]:
        return grad_log_prob(self.params, self.space, state, action, self.cfg)
