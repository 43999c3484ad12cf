#!/usr/bin/env python3
"""Resource-constrained search vs. uniform-random control on the surrogate.

Runs both arms for 5 seeds at a 400-child budget under the joint constraint
(params < 1e5, compute intensity > 10 FLOPs/byte) and prints per-seed and
median feasibility/reward summaries. Writes per-arm run logs next to --out.

Usage: python scripts/constrained_search_comparison.py [--out runs/cmp]
"""

import argparse
import json
import statistics
from pathlib import Path

from archsearch.search import SearchConfig, run_random_search, run_search

BASELINE = {"mode": "layers", "input_shape": [49, 40, 1], "classes": 12,
            "layers": [{"kind": "FC", "channels_or_hidden": 12,
                        "activation": "relu", "src1": 0}]}


def config(seed, log_path=None):
    return SearchConfig.from_dict(dict(
        baseline_arch=BASELINE,
        episode_size=2, batch_size=10, episodes=20,
        seed=seed, policy_lr=0.02, base_penalty=0.2, top_k=5,
        log_path=log_path,
        constraints=[{"metric": "params", "op": "<", "value": 1e5},
                     {"metric": "compute_intensity", "op": ">", "value": 10}]))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=None, help="log path prefix")
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    rows = []
    for seed in range(args.seeds):
        logs = {}
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            logs = {"policy": f"{args.out}.policy.{seed}.jsonl",
                    "random": f"{args.out}.random.{seed}.jsonl"}
        pol = run_search(config(seed, logs.get("policy")))
        rnd = run_random_search(config(seed, logs.get("random")))
        rows.append((seed, pol, rnd))
        print(f"seed {seed}: policy feasible={pol.feasible_count:4d} "
              f"best_feasible={max(0, pol.best_feasible_reward):.4f} | "
              f"random feasible={rnd.feasible_count:4d} "
              f"best_feasible={max(0, rnd.best_feasible_reward):.4f}")

    med = lambda xs: statistics.median(xs)
    print("\nmedians over seeds:")
    print(f"  policy: feasible={med([p.feasible_count for _, p, _ in rows])} "
          f"best_feasible={med([max(0, p.best_feasible_reward) for _, p, _ in rows]):.4f}")
    print(f"  random: feasible={med([r.feasible_count for _, _, r in rows])} "
          f"best_feasible={med([max(0, r.best_feasible_reward) for _, _, r in rows]):.4f}")
    best = max((p for _, p, _ in rows), key=lambda p: p.best_feasible_reward)
    if best.best_feasible_arch:
        print("\nbest feasible architecture found by the policy arm:")
        print(json.dumps(json.loads(best.best_feasible_arch), indent=2))


if __name__ == "__main__":
    main()
