#!/usr/bin/env python3
"""Standalone NDJSON worker stub used by the protocol tests.

Speaks the evaluate/ping wire protocol on stdin/stdout and answers every
evaluate request with the same deterministic canned manifolds. No package
imports, so it exercises the client against an independent peer.
"""

import argparse
import json
import sys
import time

import numpy as np


def canned_manifolds(n_classes=3, rows=2, cols=2, h=8, w=8, seed=20240817):
    rng = np.random.default_rng(seed)
    out = []
    for c in range(n_classes):
        pixels = rng.random(rows * cols * h * w)
        out.append({"class_id": c, "rows": rows, "cols": cols, "h": h, "w": w,
                    "pixels": [float(v) for v in pixels]})
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--fail-first", type=int, default=0,
                    help="answer the first N evaluate requests with an error")
    ap.add_argument("--sleep", type=float, default=0.0,
                    help="delay before answering evaluate requests")
    args = ap.parse_args()
    failures_left = args.fail_first
    manifolds = canned_manifolds()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            print(json.dumps({"id": None, "ok": False, "error": "malformed json"}), flush=True)
            continue
        rid = req.get("id")
        op = req.get("op")
        if op == "ping":
            print(json.dumps({"id": rid, "ok": True}), flush=True)
        elif op == "evaluate":
            if args.sleep:
                time.sleep(args.sleep)
            if failures_left > 0:
                failures_left -= 1
                print(json.dumps({"id": rid, "ok": False, "error": "synthetic failure"}),
                      flush=True)
            else:
                print(json.dumps({"id": rid, "ok": True, "dynamic_range": 1.0,
                                  "manifolds": manifolds}), flush=True)
        else:
            print(json.dumps({"id": rid, "ok": False, "error": f"unknown op {op!r}"}),
                  flush=True)


if __name__ == "__main__":
    main()
