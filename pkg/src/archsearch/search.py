"""Search loop: episodes of T adaptation steps across N parallel rollouts,
resource-penalized rewards, one policy update per episode, progressive
top-k re-baselining, JSON-lines run logs, and checkpoint/resume.

A single parameter set drives all N rollouts; rollout randomness derives
from (seed, episode, rollout) so runs are reproducible and resumable at
episode boundaries. Random search is the identical loop with uniform action
sampling and no updates.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, asdict

import numpy as np

from . import actions as A
from . import policy as P
from . import reinforce as R
from .arch import (ArchGraph, ModuleArch, ShapeMismatch, ShapeUnderflow,
                   arch_from_doc, canonical_parse, canonical_serialize,
                   stack_module, validate)
from .evaluators import CachedEvaluator, SurrogateEvaluator, WorkerClient
from .reward import Constraint, RewardConfig, reward as shaped_reward, violations

MAX_RESAMPLES = 10


class ConfigError(Exception):
    pass


class ChecksumMismatch(Exception):
    pass


@dataclass
class SearchConfig:
    mode: str = "layers"
    search_space: str = "kws"
    constraints: list = field(default_factory=list)
    base_penalty: float = 0.9
    episode_size: int = 5
    batch_size: int = 10
    episodes: int = 8
    evaluator: str = "surrogate"
    seed: int = 0
    top_k: int | None = None
    baseline_arch: dict | None = None
    reset_baseline_each_episode: bool = False
    policy_lr: float = 0.0006
    baseline_decay: float = 0.9
    grad_clip: float = 5.0
    max_layers: int = 20
    module_repeats: int = 6
    worker_cmd: list | None = None
    worker_timeout: float = 120.0
    budget_epochs: int = 3
    budget_dataset: str = "synthetic-2d"
    cache_path: str | None = None
    log_path: str | None = None
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "SearchConfig":
        known = {f for f in SearchConfig.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = SearchConfig(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None
        cfg.check()
        return cfg

    @staticmethod
    def from_file(path: str) -> "SearchConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return SearchConfig.from_dict(doc)

    def check(self):
        if self.mode not in ("layers", "module"):
            raise ConfigError(f"mode must be 'layers' or 'module', got {self.mode!r}")
        if self.search_space not in A.SPACES:
            raise ConfigError(f"unknown search_space {self.search_space!r}")
        if min(self.episode_size, self.batch_size, self.episodes) < 1:
            raise ConfigError("episode_size, batch_size and episodes must be >= 1")
        if self.top_k is not None and not (1 <= self.top_k <= self.batch_size):
            raise ConfigError("top_k must lie in [1, batch_size]")
        if self.evaluator not in ("surrogate", "external"):
            raise ConfigError(f"unknown evaluator {self.evaluator!r}")
        if self.evaluator == "external" and not self.worker_cmd:
            raise ConfigError("external evaluator requires worker_cmd")
        if self.baseline_arch is None:
            raise ConfigError("baseline_arch is required")
        if not (0 < self.base_penalty <= 1):
            raise ConfigError("base_penalty must be in (0, 1]")
        space = self.build_space()
        if space.mode != self.mode:
            raise ConfigError(f"search_space {self.search_space!r} is "
                              f"{space.mode}-mode, config says {self.mode!r}")
        try:
            state = arch_from_doc(self.baseline_arch)
        except Exception as e:
            raise ConfigError(f"baseline_arch: {e}") from None
        wanted = ArchGraph if self.mode == "layers" else ModuleArch
        if not isinstance(state, wanted):
            raise ConfigError("baseline_arch mode does not match config mode")
        bad = validate(state)
        if bad:
            raise ConfigError(f"baseline_arch invalid: {bad[0].code}@{bad[0].where}")
        units = state.layers if self.mode == "layers" else state.module.branches
        for unit in units:
            kind = unit.kind if self.mode == "layers" else unit.branch_type
            if kind not in space.kinds:
                raise ConfigError(f"baseline_arch kind {kind!r} is outside "
                                  f"the {self.search_space!r} space")
        try:
            self.realize(state)
        except Exception as e:
            raise ConfigError(f"baseline_arch cannot be realized: {e}") from None
        try:
            RewardConfig(self.base_penalty,
                         tuple(Constraint.from_dict(c) for c in self.constraints))
        except (ValueError, KeyError) as e:
            raise ConfigError(f"constraints: {e}") from None

    def build_space(self) -> A.SearchSpace:
        factory = A.SPACES[self.search_space]
        if self.search_space == "image-module":
            return factory()
        return factory(self.max_layers)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(self.base_penalty,
                            tuple(Constraint.from_dict(c) for c in self.constraints))

    def baseline_state(self):
        return arch_from_doc(self.baseline_arch)

    def realize(self, state) -> ArchGraph:
        """The trainable graph for a rollout state (stacks module cells)."""
        if isinstance(state, ArchGraph):
            return state
        graph = stack_module(state.module, self.module_repeats,
                             state.input_shape, state.output_classes)
        bad = validate(graph)
        if bad:
            raise A.InvalidMutation(bad)
        return graph


@dataclass
class SearchOutcome:
    episodes: int = 0
    models_searched: int = 0
    feasible_count: int = 0
    best_reward: float = -1.0
    best_arch: str | None = None
    best_feasible_reward: float = -1.0
    best_feasible_arch: str | None = None
    records: list = field(default_factory=list)
    log_path: str | None = None


def _rollout_rng(seed: int, episode: int, rollout: int):
    return np.random.default_rng([int(seed), int(episode), int(rollout)])


def _sample_apply(config, space, state, rng, sampler):
    """Draw actions until one applies (scale, then the structural mutation on
    top, then module stacking); after MAX_RESAMPLES invalid draws the action
    degrades to keep-everything and the state is returned unchanged."""
    action = None
    for _ in range(MAX_RESAMPLES):
        action = sampler(state, rng)
        try:
            new_state = A.apply_action(state, action, space)
            stacked = config.realize(new_state)
            return action, new_state, stacked, False
        except (A.ActionError, ShapeUnderflow, ShapeMismatch):
            continue
    return action, state, config.realize(state), True


def _uses(rep) -> dict:
    return {"params": rep.params, "model_size_bytes": rep.model_size_bytes,
            "flops": rep.flops, "compute_intensity": rep.compute_intensity}


def _build_evaluator(config: SearchConfig):
    if config.evaluator == "surrogate":
        inner = SurrogateEvaluator()
    else:
        inner = WorkerClient(config.worker_cmd, timeout=config.worker_timeout,
                             budget=(config.budget_epochs, config.budget_dataset))
    return CachedEvaluator(inner, config.cache_path)


def run_search(config: SearchConfig, resume_from: str | None = None) -> SearchOutcome:
    """Policy-gradient search; emits one JSON-lines record per evaluated
    child and returns the best models found."""
    return _run(config, learn=True, resume_from=resume_from)


def run_random_search(config: SearchConfig, resume_from: str | None = None) -> SearchOutcome:
    """Control arm: identical loop, uniform action sampling, no updates."""
    return _run(config, learn=False, resume_from=resume_from)


def _run(config: SearchConfig, learn: bool, resume_from: str | None) -> SearchOutcome:
    config.check()
    space = config.build_space()
    rcfg = config.reward_config()
    baseline_arch = config.baseline_state()

    pcfg = P.PolicyConfig()
    params = P.init_params(space, pcfg, seed=config.seed) if learn else None
    adam = P.AdamState.for_params(params) if learn else None
    ema = R.BaselineState(None, config.baseline_decay)
    baselines = [baseline_arch] * config.batch_size
    out = SearchOutcome(log_path=config.log_path)
    episode_start = 0

    ck = _load_checkpoint(resume_from) if resume_from is not None else None
    if ck is not None:
        _check_config_match(config, ck["config"])
        episode_start = ck["episode_next"]
        out.models_searched = ck["models_searched"]
        out.feasible_count = ck["feasible_count"]
        best = ck["best"]
        out.best_reward = best["reward"]
        out.best_arch = best["arch"]
        out.best_feasible_reward = best["feasible_reward"]
        out.best_feasible_arch = best["feasible_arch"]
        baselines = [canonical_parse(t) for t in ck["baselines"]]
        bs = ck["baseline_state"]
        ema = R.BaselineState(None if bs["values"] is None else np.array(bs["values"]),
                              bs["decay"])
        if learn:
            if ck["params_b64"] is None:
                raise ChecksumMismatch("checkpoint has no policy parameters")
            params = P.params_from_bytes(base64.b64decode(ck["params_b64"]))
            adam = P.AdamState(
                m=P.params_from_bytes(base64.b64decode(ck["adam"]["m_b64"])),
                v=P.params_from_bytes(base64.b64decode(ck["adam"]["v_b64"])),
                t=ck["adam"]["t"])

    evaluator = _build_evaluator(config)
    if ck is not None:
        evaluator.restore(ck["cache"])

    if learn:
        def sampler(state, rng):
            return P.sample(params, space, state, rng, pcfg)
    else:
        def sampler(state, rng):
            return A.random_action(space, state, rng)

    log_file = None
    if config.log_path:
        log_file = open(config.log_path, "a" if resume_from else "w")

    try:
        for ep in range(episode_start, config.episodes):
            states = [[None] * config.episode_size for _ in range(config.batch_size)]
            acts = [[None] * config.episode_size for _ in range(config.batch_size)]
            rewards = np.zeros((config.batch_size, config.episode_size))
            children = {}  # canonical text -> (reward, state)

            for n in range(config.batch_size):
                state = baselines[n]
                rng = _rollout_rng(config.seed, ep, n)
                for t in range(config.episode_size):
                    action, new_state, stacked, degraded = _sample_apply(
                        config, space, state, rng, sampler)
                    result, hit = evaluator.evaluate(stacked)
                    rep = result.resource
                    viol = violations(_uses(rep), rcfg)
                    if result.status == "ok":
                        r = shaped_reward(result.performance, _uses(rep), rcfg)
                    else:
                        r = 0.0
                    feasible = result.status == "ok" and all(v == 0.0 for v in viol)
                    out.models_searched += 1
                    text = canonical_serialize(new_state)
                    record = {
                        "episode": ep, "step": t, "rollout": n,
                        "arch_hash": hashlib.sha256(text.encode()).hexdigest(),
                        "params": rep.params,
                        "model_size_bytes": rep.model_size_bytes,
                        "flops": rep.flops,
                        "bytes_accessed": rep.bytes_accessed,
                        "compute_intensity": rep.compute_intensity,
                        "performance": result.performance,
                        "violations": viol,
                        "reward": r,
                        "feasible": feasible,
                        "cache_hit": hit,
                        "degraded": degraded,
                        "status": result.status,
                        "models_searched": out.models_searched,
                    }
                    out.records.append(record)
                    if log_file:
                        log_file.write(json.dumps(record, sort_keys=True) + "\n")
                    if feasible:
                        out.feasible_count += 1
                        if r > out.best_feasible_reward:
                            out.best_feasible_reward = r
                            out.best_feasible_arch = text
                    if r > out.best_reward:
                        out.best_reward = r
                        out.best_arch = text
                    prev = children.get(text)
                    if prev is None or r > prev[0]:
                        children[text] = (r, new_state)
                    states[n][t] = state
                    acts[n][t] = action
                    rewards[n, t] = r
                    state = new_state

            if learn:
                traj = R.Trajectory(states, acts, rewards)
                rets = R.returns(rewards)
                first = ema.values is None
                if first:
                    ema = R.update_baseline(ema, rets)
                b = ema.values
                grads = R.policy_gradient(
                    traj, b, lambda s, a: P.grad_log_prob(params, space, s, a, pcfg))
                if not first:
                    ema = R.update_baseline(ema, rets)
                if grads is not None:
                    grads, _ = R.clip_gradient(grads, config.grad_clip)
                    try:
                        P.adam_step(params, grads, adam, lr=config.policy_lr)
                    except P.NonFiniteGradient as e:
                        print(f"skipping non-finite update: {e}", file=sys.stderr)

            if config.mode == "module" and config.reset_baseline_each_episode:
                baselines = [baseline_arch] * config.batch_size
            else:
                k = config.top_k or config.batch_size
                pool = sorted(children.items(), key=lambda kv: (-kv[1][0], kv[0]))[:k]
                baselines = [pool[n % len(pool)][1][1]
                             for n in range(config.batch_size)]

            out.episodes = ep + 1
            if log_file:
                log_file.flush()
            if config.checkpoint_path:
                _write_checkpoint(config, ep + 1, out, baselines, ema, params,
                                  adam, evaluator, learn)
    finally:
        if log_file:
            log_file.close()
        evaluator.close()

    if config.log_path:
        _write_best_artifacts(config.log_path, out)
    return out


def _write_best_artifacts(log_path: str, out: SearchOutcome):
    if out.best_arch is not None:
        with open(log_path + ".best.json", "w") as f:
            f.write(out.best_arch + "\n")
    if out.best_feasible_arch is not None:
        with open(log_path + ".best_feasible.json", "w") as f:
            f.write(out.best_feasible_arch + "\n")


def _checkpoint_doc(config, episode_next, out, baselines, ema, params, adam, learn):
    return {
        "version": 1,
        "config": config.to_dict(),
        "episode_next": episode_next,
        "models_searched": out.models_searched,
        "feasible_count": out.feasible_count,
        "best": {"reward": out.best_reward, "arch": out.best_arch,
                 "feasible_reward": out.best_feasible_reward,
                 "feasible_arch": out.best_feasible_arch},
        "baselines": [canonical_serialize(b) for b in baselines],
        "baseline_state": {
            "decay": ema.decay,
            "values": None if ema.values is None else [float(v) for v in ema.values]},
        "params_b64": base64.b64encode(P.params_to_bytes(params)).decode()
                      if learn else None,
        "adam": {"t": adam.t,
                 "m_b64": base64.b64encode(P.params_to_bytes(adam.m)).decode(),
                 "v_b64": base64.b64encode(P.params_to_bytes(adam.v)).decode()}
                if learn else None,
    }


def _write_checkpoint(config, episode_next, out, baselines, ema, params, adam,
                      evaluator, learn):
    doc = _checkpoint_doc(config, episode_next, out, baselines, ema, params,
                          adam, learn)
    doc["cache"] = evaluator.snapshot()
    payload = json.dumps(doc, sort_keys=True)
    doc["checksum"] = hashlib.sha256(payload.encode()).hexdigest()
    tmp = config.checkpoint_path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f, sort_keys=True)
    os.replace(tmp, config.checkpoint_path)


def _load_checkpoint(path: str) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ChecksumMismatch(f"cannot read checkpoint: {e}") from None
    stored = doc.pop("checksum", None)
    payload = json.dumps(doc, sort_keys=True)
    if stored != hashlib.sha256(payload.encode()).hexdigest():
        raise ChecksumMismatch("checkpoint checksum does not match contents")
    return doc


def _check_config_match(config: SearchConfig, stored: dict):
    a = config.to_dict()
    b = dict(stored)
    for key in ("episodes", "checkpoint_path", "log_path", "cache_path"):
        a.pop(key, None)
        b.pop(key, None)
    if a != b:
        diff = [k for k in a if a.get(k) != b.get(k)]
        raise ConfigError(f"resume config differs from checkpoint: {diff}")


def best_so_far_rows(records) -> list[dict]:
    """Per-record running best reward / feasibility counters (the report
    CLI's CSV body)."""
    rows = []
    best = 0.0
    best_feasible = 0.0
    feasible = 0
    for rec in records:
        best = max(best, rec["reward"])
        if rec["feasible"]:
            feasible += 1
            best_feasible = max(best_feasible, rec["reward"])
        rows.append({
            "models_searched": rec["models_searched"],
            "episode": rec["episode"],
            "step": rec["step"],
            "rollout": rec["rollout"],
            "reward": rec["reward"],
            "best_reward": best,
            "performance": rec["performance"],
            "feasible": int(rec["feasible"]),
            "feasible_count": feasible,
            "best_feasible_reward": best_feasible,
        })
    return rows
