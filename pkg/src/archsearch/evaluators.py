"""Performance backends: a pure deterministic surrogate for desk-scale
experiments, a line-delimited-JSON subprocess client for real trainer
workers, and a persistent memo cache keyed on canonical architecture text.
"""

from __future__ import annotations

import json
import os
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np

from .arch import ArchGraph, canonical_serialize
from .resources import ResourceReport, count_params, report

PROTOCOL_VERSION = 1

# surrogate landscape constants: diminishing returns in size and depth so
# resource constraints create a real performance/resource trade-off
PARAM_SCALE = 2e5
DEPTH_SCALE = 8
DEGENERATE_PENALTY = 0.15


@dataclass(frozen=True)
class EvalRequest:
    arch_text: str
    task: str = "surrogate"
    budget: tuple[int, str] | None = None  # (epochs, dataset id)
    request_id: str = ""


@dataclass(frozen=True)
class EvalResult:
    performance: float
    resource: ResourceReport | None
    wall_seconds: float
    status: str  # "ok" | "failed"
    reason: str | None = None

    def to_dict(self) -> dict:
        return {"performance": self.performance,
                "resource": self.resource.to_dict() if self.resource else None,
                "wall_seconds": self.wall_seconds,
                "status": self.status, "reason": self.reason}

    @staticmethod
    def from_dict(d: dict) -> "EvalResult":
        res = d.get("resource")
        return EvalResult(d["performance"],
                          ResourceReport.from_dict(res) if res else None,
                          d["wall_seconds"], d["status"], d.get("reason"))


def surrogate_evaluate(graph: ArchGraph) -> float:
    """Deterministic stand-in for child training, clamped to [0, 1]:

        P = 0.98 * (1 - exp(-params / 2e5))
                 * (0.7 + 0.3 * min(1, depth / 8))
                 * (1 - 0.15 * [no nonlinearity anywhere])

    Bigger and deeper scores higher with diminishing returns; a purely
    linear network is penalized.
    """
    params, _ = count_params(graph)
    depth = sum(l.repeat for l in graph.layers)
    nonlinear = any(
        l.kind == "GRU" or
        (l.kind in ("Conv2d", "DepSepConv2d", "DilatedConv2d", "FC")
         and l.activation != "none")
        for l in graph.layers)
    p = 0.98 * (1.0 - np.exp(-params / PARAM_SCALE)) \
        * (0.7 + 0.3 * min(1.0, depth / DEPTH_SCALE)) \
        * (1.0 - (0.0 if nonlinear else DEGENERATE_PENALTY))
    return float(min(1.0, max(0.0, p)))


class SurrogateEvaluator:
    def evaluate(self, graph: ArchGraph) -> EvalResult:
        t0 = time.monotonic()
        p = surrogate_evaluate(graph)
        return EvalResult(p, report(graph), time.monotonic() - t0, "ok")

    def close(self):
        pass


class WorkerError(Exception):
    pass


class WorkerTimeout(WorkerError):
    pass


class WorkerProtocolError(WorkerError):
    pass


class WorkerCrashed(WorkerError):
    pass


class WorkerClient:
    """Client for an external trainer process speaking newline-delimited JSON
    over stdin/stdout. Requests may be pipelined from several threads;
    responses are matched back by request_id. Worker failures never raise out
    of evaluate(): they map to a failed EvalResult with a reason.
    """

    def __init__(self, cmd: list[str], timeout: float = 120.0,
                 start_timeout: float = 60.0, budget: tuple[int, str] | None = None):
        self.timeout = timeout
        self.budget = budget
        self._wlock = threading.Lock()
        self._plock = threading.Lock()
        self._pending: dict[str, dict] = {}
        self._counter = 0
        self._poisoned: str | None = None
        self._hello = threading.Event()
        self._hello_ok = False
        try:
            self._proc = subprocess.Popen(
                cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, text=True, bufsize=1)
        except OSError as e:
            raise WorkerCrashed(f"cannot start worker: {e}") from None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        if not self._hello.wait(start_timeout) or not self._hello_ok:
            self.close()
            raise WorkerProtocolError("no valid handshake from worker")

    def _read_loop(self):
        try:
            for line in self._proc.stdout:
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    self._poison("unparseable worker output")
                    return
                mtype = msg.get("type")
                if not self._hello.is_set():
                    self._hello_ok = (mtype == "hello"
                                      and msg.get("protocol") == PROTOCOL_VERSION)
                    self._hello.set()
                    if not self._hello_ok:
                        return
                    continue
                if mtype == "result":
                    self._dispatch(msg)
                elif mtype == "hello":
                    continue  # redundant handshakes are harmless
                else:
                    self._poison(f"unknown message type {mtype!r}")
                    return
        finally:
            self._poison("worker stream closed")
            self._hello.set()

    def _dispatch(self, msg):
        rid = msg.get("request_id")
        with self._plock:
            slot = self._pending.get(rid)
        if slot is None:
            return  # stale or unknown id; ignore
        slot["msg"] = msg
        slot["event"].set()

    def _poison(self, reason: str):
        with self._plock:
            if self._poisoned is None:
                self._poisoned = reason
            pending = list(self._pending.values())
        for slot in pending:
            slot["event"].set()

    def evaluate(self, graph: ArchGraph) -> EvalResult:
        t0 = time.monotonic()
        rep = report(graph)

        def failed(reason):
            return EvalResult(0.0, rep, time.monotonic() - t0, "failed", reason)

        if self._poisoned:
            return failed(f"worker: {self._poisoned}")
        with self._plock:
            self._counter += 1
            rid = f"req-{os.getpid()}-{self._counter}"
            slot = {"event": threading.Event(), "msg": None}
            self._pending[rid] = slot
        request = EvalRequest(canonical_serialize(graph), "external",
                              self.budget, rid)
        req = {"type": "evaluate", "request_id": request.request_id,
               "arch": json.loads(request.arch_text)}
        if request.budget:
            req["budget"] = {"epochs": request.budget[0],
                             "dataset": request.budget[1]}
        try:
            with self._wlock:
                self._proc.stdin.write(json.dumps(req) + "\n")
                self._proc.stdin.flush()
        except (OSError, ValueError):
            self._drop(rid)
            return failed("worker: broken pipe")

        ok = slot["event"].wait(self.timeout)
        self._drop(rid)
        if not ok:
            return failed("timeout")
        if slot["msg"] is None:
            return failed(f"worker: {self._poisoned or 'stream closed'}")
        msg = slot["msg"]
        if msg.get("status") == "failed":
            return failed(str(msg.get("reason", "worker failure")))
        p = msg.get("performance")
        if not isinstance(p, (int, float)) or not np.isfinite(p) or not (0.0 <= p <= 1.0):
            return failed(f"protocol: performance out of range ({p!r})")
        wall = msg.get("wall_seconds")
        if not isinstance(wall, (int, float)):
            wall = time.monotonic() - t0
        return EvalResult(float(p), rep, float(wall), "ok")

    def _drop(self, rid):
        with self._plock:
            self._pending.pop(rid, None)

    def close(self):
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.terminate()
            self._proc.wait(timeout=5)
        except Exception:
            self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CachedEvaluator:
    """Memoizes results by canonical architecture text. Concurrent inserts of
    distinct keys are safe; a duplicate-key race keeps the first write and
    discards the loser's result. Optionally persists to a JSON file."""

    def __init__(self, inner, path: str | None = None):
        self.inner = inner
        self.path = path
        self._lock = threading.Lock()
        self._cache: dict[str, dict] = {}
        if path and os.path.exists(path):
            with open(path) as f:
                self._cache = json.load(f)

    def evaluate(self, graph: ArchGraph) -> tuple[EvalResult, bool]:
        key = canonical_serialize(graph)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return EvalResult.from_dict(hit), True
        result = self.inner.evaluate(graph)
        with self._lock:
            prior = self._cache.get(key)
            if prior is not None:
                return EvalResult.from_dict(prior), False  # lost the race
            self._cache[key] = result.to_dict()
        return result, False

    def snapshot(self) -> dict:
        with self._lock:
            return dict(self._cache)

    def restore(self, snapshot: dict):
        with self._lock:
            self._cache = dict(snapshot)

    def save(self):
        if not self.path:
            return
        with self._lock:
            data = json.dumps(self._cache, sort_keys=True)
        tmp = self.path + ".tmp"
        with open(tmp, "w") as f:
            f.write(data)
        os.replace(tmp, self.path)

    def close(self):
        self.save()
        self.inner.close()
