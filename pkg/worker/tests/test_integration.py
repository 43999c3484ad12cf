"""End-to-end: the search engine drives the live worker through its own
client, including the fault-injection timeout path."""

import sys

import pytest

from archsearch.arch import ArchGraph, LayerSpec, TensorShape
from archsearch.evaluators import WorkerClient
from archsearch.search import SearchConfig, run_search

WORKER_CMD = [sys.executable, "-m", "trainer_worker",
              "--dataset", "synthetic-2d", "--max-epochs", "2", "--seed", "0"]

FC_BASELINE = {"mode": "layers", "input_shape": [4, 4, 1], "classes": 12,
               "layers": [{"kind": "FC", "channels_or_hidden": 12,
                           "activation": "relu", "src1": 0}]}


def fc_graph(hidden=12):
    return ArchGraph((LayerSpec("FC", hidden, activation="relu"),),
                     TensorShape(4, 4, 1), 12)


def test_client_evaluates_against_live_worker():
    with WorkerClient(WORKER_CMD, timeout=120,
                      budget=(1, "synthetic-2d")) as client:
        res = client.evaluate(fc_graph())
        assert res.status == "ok", res.reason
        assert 0.0 <= res.performance <= 1.0
        assert res.resource.params == 17 * 12  # profile computed locally


def test_client_timeout_fault_injection():
    # a sub-second deadline cannot cover dataset generation plus training:
    # the client must fail the request itself, promptly and in-band
    with WorkerClient(WORKER_CMD, timeout=0.05,
                      budget=(2, "synthetic-2d")) as client:
        res = client.evaluate(fc_graph(64))
        assert res.status == "failed" and res.reason == "timeout"


def test_search_loop_over_external_evaluator(tmp_path):
    cfg = SearchConfig.from_dict(dict(
        baseline_arch=FC_BASELINE,
        episode_size=1, batch_size=2, episodes=1, seed=0,
        evaluator="external", worker_cmd=WORKER_CMD, worker_timeout=300,
        budget_epochs=1, budget_dataset="synthetic-2d",
        log_path=str(tmp_path / "run.jsonl"),
        constraints=[{"metric": "params", "op": "<", "value": 1e6}]))
    out = run_search(cfg)
    assert out.models_searched == 2
    assert all(r["status"] == "ok" for r in out.records)
    assert out.best_reward > 0
