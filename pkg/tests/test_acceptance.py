"""Acceptance suite: one test per headline criterion, each printing a
PASS/FAIL line (run with -s to watch). Tolerances are pinned here, not
calibrated elsewhere."""

import json
import statistics

import numpy as np
import pytest

from archsearch import actions as A
from archsearch import policy as P
from archsearch.arch import (ArchGraph, BranchSpec, LayerSpec, ModuleArch,
                             ModuleSpec, ShapeUnderflow, TensorShape,
                             canonical_serialize, validate)
from archsearch.resources import count_flops, count_params
from archsearch.reward import Constraint, RewardConfig, reward
from archsearch.search import SearchConfig, run_random_search, run_search
from conftest import baseline_doc
from flop_oracle import oracle_counts
from graph_gen import random_small_graph
from test_policy import TINY, finite_difference_check, random_tiny_instance
from test_reinforce import run_bandit
from test_reward import CASES


def report_line(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def kws_graph(*layers):
    return ArchGraph(tuple(layers), TensorShape(49, 40, 1), 12)


def test_parameter_count_oracles():
    """GRU(2,64,1)+FC(12) -> 0.047M +-5%; GRU(1,154,1)+FC(12) -> 0.093M +-5%."""
    g1 = kws_graph(LayerSpec("GRU", 64, repeat=2),
                   LayerSpec("FC", 12, activation="relu", src1=1))
    g2 = kws_graph(LayerSpec("GRU", 154),
                   LayerSpec("FC", 12, activation="relu", src1=1))
    p1 = count_params(g1)[0]
    p2 = count_params(g2)[0]
    ok = abs(p1 - 47_000) <= 0.05 * 47_000 and abs(p2 - 93_000) <= 0.05 * 93_000
    report_line("parameter-count-oracles", ok,
                f"GRU(2,64,1)+FC(12)={p1} (target 47000+-5%), "
                f"GRU(1,154,1)+FC(12)={p2} (target 93000+-5%)")


def test_flop_and_param_oracle_equivalence():
    """count_flops/count_params equal the element-walking oracle exactly on
    200 random graphs with <= 4 layers and dims <= 8."""
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(200):
        g = random_small_graph(rng, max_layers=4, dim=8)
        p_o, f_o = oracle_counts(g)
        if count_params(g)[0] != p_o or count_flops(g)[0] != f_o:
            mismatches += 1
    report_line("flop-oracle-equivalence", mismatches == 0,
                f"{200 - mismatches}/200 graphs exact")


def test_reward_algebra_exact():
    """Penalized-reward values exact to 1e-12 on the 20-case hand table."""
    worst = 0.0
    for p_perf, base, pairs, expected in CASES:
        cfg = RewardConfig(base, tuple(c for c, _ in pairs))
        uses = {c.metric: u for c, u in pairs}
        worst = max(worst, abs(reward(p_perf, uses, cfg) - expected))
    report_line("reward-algebra", len(CASES) == 20 and worst <= 1e-12,
                f"{len(CASES)} cases, max abs error {worst:.2e}")


def test_policy_gradient_correctness():
    """grad_log_prob vs central finite differences: relative error < 1e-4
    on 20 random small instances (float64)."""
    worst = 0.0
    for seed in range(20):
        params, space, state, action = random_tiny_instance(seed)
        worst = max(worst, finite_difference_check(params, space, state,
                                                   action, TINY))
    report_line("policy-gradient-correctness", worst < 1e-4,
                f"20 instances, worst relative error {worst:.2e}")


def test_bandit_convergence():
    """REINFORCE + EMA baseline pushes the better arm above 0.95 within 200
    updates on 5/5 seeds."""
    wins = sum(run_bandit(seed) for seed in range(5))
    report_line("bandit-convergence", wins == 5, f"{wins}/5 seeds")


def constrained_config(seed):
    return SearchConfig.from_dict(dict(
        baseline_arch=baseline_doc(),
        episode_size=2, batch_size=10, episodes=20,   # 400 children
        seed=seed, policy_lr=0.02, base_penalty=0.2, top_k=5,
        constraints=[{"metric": "params", "op": "<", "value": 1e5},
                     {"metric": "compute_intensity", "op": ">", "value": 10}]))


def test_constrained_search_beats_random():
    """Desk-scale resource-constrained comparison: the learned search finds
    >= 1 feasible model within 400 children on >= 4/5 seeds AND its median
    feasible count and best feasible reward dominate random search."""
    pol_feas, pol_best, rnd_feas, rnd_best = [], [], [], []
    for seed in range(5):
        out = run_search(constrained_config(seed))
        rnd = run_random_search(constrained_config(seed))
        pol_feas.append(out.feasible_count)
        pol_best.append(max(0.0, out.best_feasible_reward))
        rnd_feas.append(rnd.feasible_count)
        rnd_best.append(max(0.0, rnd.best_feasible_reward))
        assert out.models_searched == 400 and rnd.models_searched == 400
    seeds_with_feasible = sum(1 for f in pol_feas if f >= 1)
    med_pf, med_rf = statistics.median(pol_feas), statistics.median(rnd_feas)
    med_pb, med_rb = statistics.median(pol_best), statistics.median(rnd_best)
    ok = (seeds_with_feasible >= 4 and med_pf > med_rf and med_pb > med_rb)
    report_line(
        "constrained-search-beats-random", ok,
        f"feasible on {seeds_with_feasible}/5 seeds; median feasible count "
        f"{med_pf} vs {med_rf}; median best feasible reward "
        f"{med_pb:.4f} vs {med_rb:.4f}")


def test_mutation_closure_fuzz_10k():
    """10,000 random actions on an evolving population produce only valid
    states or typed rejections; insert-remove identity on canonical form."""
    spaces = {"layers": A.kws_layer_space(), "module": A.image_module_space()}
    base_graph = kws_graph(LayerSpec("FC", 12, activation="relu"))
    base_module = ModuleArch(
        ModuleSpec((BranchSpec("conv-none", 3, 2, 8, 0, 0, True),)),
        TensorShape(32, 32, 3), 10)
    pool = [(base_graph, spaces["layers"]), (base_module, spaces["module"])]
    rng = np.random.default_rng(31337)
    applied = rejected = invalid_results = 0
    for i in range(10_000):
        state, sp = pool[int(rng.integers(len(pool)))]
        act = A.random_action(sp, state, rng)
        try:
            new = A.apply_action(state, act, sp)
        except (A.ActionError, ShapeUnderflow):
            rejected += 1
            continue
        if validate(new, sp):  # structural AND candidate-list membership
            invalid_results += 1
            continue
        applied += 1
        if len(pool) < 80:
            pool.append((new, sp))
        else:
            pool[int(rng.integers(len(pool)))] = (new, sp)

    identity_fail = 0
    space = spaces["layers"]
    done = 0
    while done < 150:
        g = random_small_graph(rng, max_layers=4)
        act = A.random_action(space, g, rng)
        unit = A.build_unit(space, act.insert)
        try:
            grown = A.apply_insert_layer(g, unit, space.max_layers)
        except (A.ActionError, ShapeUnderflow):
            continue
        attach = max(unit.src1, unit.src2) if unit.kind == "Add" else unit.src1
        if canonical_serialize(A.apply_remove(grown, attach + 1)) != \
                canonical_serialize(g):
            identity_fail += 1
        done += 1
    ok = invalid_results == 0 and identity_fail == 0 and applied > 2000
    report_line("mutation-closure-fuzz", ok,
                f"10000 actions: {applied} applied, {rejected} rejected, "
                f"{invalid_results} invalid results; insert-remove identity "
                f"{150 - identity_fail}/150")


def test_determinism_and_resume(tmp_path):
    """Identical seeds give byte-identical run logs; a checkpointed split run
    equals the uninterrupted run."""
    def cfg(**over):
        base = dict(baseline_arch=baseline_doc(), episode_size=2, batch_size=4,
                    episodes=4, seed=11, policy_lr=0.02,
                    constraints=[{"metric": "params", "op": "<", "value": 1e5}])
        base.update(over)
        return SearchConfig.from_dict(base)

    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run_search(cfg(log_path=str(a)))
    run_search(cfg(log_path=str(b)))
    identical = a.read_bytes() == b.read_bytes()

    full = tmp_path / "full.jsonl"
    run_search(cfg(log_path=str(full)))
    split = tmp_path / "split.jsonl"
    ck = tmp_path / "ck.json"
    run_search(cfg(episodes=2, log_path=str(split), checkpoint_path=str(ck)))
    run_search(cfg(episodes=4, log_path=str(split), checkpoint_path=str(ck)),
               resume_from=str(ck))
    resumed = split.read_bytes() == full.read_bytes()
    report_line("determinism-and-resume", identical and resumed,
                f"identical-logs={identical}, split-run-equal={resumed}")
