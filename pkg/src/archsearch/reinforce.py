"""Episode-return accumulation, a per-timestep EMA baseline, and the batched
log-likelihood-ratio gradient estimator g = (1/N) sum_n sum_t grad log pi *
(R_{t,n} - b_t), where R is the suffix sum of immediate rewards."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import NonFiniteGradient


@dataclass
class Trajectory:
    """N rollouts of T steps: the state each action was sampled from, the
    action, and the immediate reward of the child it produced."""
    states: list       # [n][t] -> architecture
    actions: list      # [n][t] -> Action
    rewards: np.ndarray  # (N, T)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        n, t = self.rewards.shape
        if len(self.states) != n or len(self.actions) != n:
            raise ValueError("ragged trajectory")
        if any(len(row) != t for row in self.states + self.actions):
            raise ValueError("ragged trajectory")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("non-finite rewards")
        if self.rewards.size and (self.rewards.min() < 0 or self.rewards.max() > 1):
            raise ValueError("rewards must lie in [0, 1]")


def returns(rewards) -> np.ndarray:
    """Suffix sums over time: R[t] = sum of rewards from t to the end."""
    r = np.asarray(rewards, dtype=float)
    return r[..., ::-1].cumsum(axis=-1)[..., ::-1]


@dataclass(frozen=True)
class BaselineState:
    """Per-timestep running mean of batch-mean returns; the first update
    initializes directly to the batch mean."""
    values: np.ndarray | None = None
    decay: float = 0.9


def update_baseline(state: BaselineState, rets: np.ndarray) -> BaselineState:
    mean_t = np.asarray(rets, dtype=float).mean(axis=0)
    if state.values is None:
        return BaselineState(mean_t.copy(), state.decay)
    vals = state.decay * state.values + (1.0 - state.decay) * mean_t
    return BaselineState(vals, state.decay)


def policy_gradient(traj: Trajectory, baseline_values, grad_fn):
    """Aggregate gradient over the episode; ``grad_fn(state, action)`` must
    return a dict of arrays. Returns None when every advantage is zero
    (the gradient is exactly zero). Raises NonFiniteGradient."""
    rets = returns(traj.rewards)
    b = np.zeros(rets.shape[1]) if baseline_values is None \
        else np.asarray(baseline_values, dtype=float)
    adv = rets - b[None, :]
    n = rets.shape[0]
    total = None
    for ni in range(rets.shape[0]):
        for t in range(rets.shape[1]):
            a = adv[ni, t]
            if a == 0.0:
                continue
            g = grad_fn(traj.states[ni][t], traj.actions[ni][t])
            w = a / n
            if total is None:
                total = {k: w * v for k, v in g.items()}
            else:
                for k, v in g.items():
                    total[k] += w * v
    if total is not None:
        for k, v in total.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteGradient(k)
    return total


def clip_gradient(grads, max_norm: float = 5.0):
    """Scale the whole gradient down to the given global L2 norm if it
    exceeds it. Returns (grads, original norm)."""
    norm = float(np.sqrt(sum(float(np.sum(v * v)) for v in grads.values())))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        grads = {k: v * scale for k, v in grads.items()}
    return grads, norm
