#!/usr/bin/env python3
"""Scriptable protocol test double. Modes (argv[1], default "echo"):

echo       respond ok, performance 0.5
counter    performance = (request counter % 7) / 10, distinct per request
badrange   performance 1.3 (out of range)
badtype    respond with an unknown message type
reverse2   buffer pairs of requests, answer them in reverse order
slow       sleep 5s before each response
nohello    skip the handshake entirely
badhello   handshake with the wrong protocol number
extras     ok response padded with unknown fields (must be ignored)
"""

import json
import sys
import time

mode = sys.argv[1] if len(sys.argv) > 1 else "echo"


def emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


if mode == "badhello":
    emit({"type": "hello", "protocol": 99})
elif mode != "nohello":
    emit({"type": "hello", "protocol": 1})

count = 0
held = []
for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    req = json.loads(line)
    rid = req.get("request_id", "unknown")
    count += 1
    if mode == "slow":
        time.sleep(5)
    if mode == "badrange":
        emit({"type": "result", "request_id": rid, "status": "ok",
              "performance": 1.3, "wall_seconds": 0.0})
    elif mode == "badtype":
        emit({"type": "telemetry", "request_id": rid})
    elif mode == "counter":
        emit({"type": "result", "request_id": rid, "status": "ok",
              "performance": (count % 7) / 10, "wall_seconds": 0.0})
    elif mode == "reverse2":
        held.append(rid)
        if len(held) == 2:
            for h in reversed(held):
                emit({"type": "result", "request_id": h, "status": "ok",
                      "performance": (int(h.rsplit("-", 1)[1]) % 7) / 10,
                      "wall_seconds": 0.0})
            held = []
    elif mode == "extras":
        emit({"type": "result", "request_id": rid, "status": "ok",
              "performance": 0.5, "wall_seconds": 0.0,
              "debug": {"loss": 1.0}, "vendor": "x"})
    else:
        emit({"type": "result", "request_id": rid, "status": "ok",
              "performance": 0.5, "wall_seconds": 0.0})
