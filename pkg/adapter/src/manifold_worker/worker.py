"""Request loop: newline-delimited JSON over stdio or a TCP socket.

One request is handled at a time, in arrival order, so response ids never
reorder within a connection. Malformed requests and training failures
produce error responses; the worker stays alive.
"""

from __future__ import annotations

import json
import socketserver
import sys

import numpy as np

from .config import WorkerConfig, merged
from .datasets import load_dataset
from .jointvae import manifold_grids, train_joint_vae

DYNAMIC_RANGE = 1.0


def mock_manifolds(config: WorkerConfig) -> list[dict]:
    """Deterministic canned manifolds (seeded by config.seed), used to test
    the protocol without paying for training."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 424242]))
    entries = []
    for class_id in range(config.n_classes):
        pixels = rng.random(config.grid_rows * config.grid_cols
                            * config.image_size * config.image_size)
        entries.append({
            "class_id": class_id, "rows": config.grid_rows, "cols": config.grid_cols,
            "h": config.image_size, "w": config.image_size,
            "pixels": [float(v) for v in pixels],
        })
    return entries


def evaluate_request(req: dict, base_config: WorkerConfig, mock: bool) -> dict:
    trajectory = req.get("trajectory")
    if not isinstance(trajectory, list) or not trajectory:
        return {"ok": False, "error": "evaluate needs a non-empty trajectory list"}
    try:
        schedule = np.asarray(trajectory, dtype=np.float64)
    except (TypeError, ValueError):
        return {"ok": False, "error": "trajectory must be a list of numbers"}
    if not np.all(np.isfinite(schedule)):
        return {"ok": False, "error": "trajectory values must be finite"}
    try:
        config = merged(base_config, req.get("config_override") or {})
    except (TypeError, ValueError) as exc:
        return {"ok": False, "error": f"bad config_override: {exc}"}
    if mock:
        return {"ok": True, "dynamic_range": DYNAMIC_RANGE,
                "manifolds": mock_manifolds(config)}
    if schedule.shape[0] != config.cycles:
        return {"ok": False,
                "error": f"trajectory length {schedule.shape[0]} must equal "
                         f"configured cycles {config.cycles}"}
    try:
        images, _ = load_dataset(config.dataset, config.n_classes,
                                 config.subset_size, config.image_size, config.seed)
        model = train_joint_vae(schedule, config, images)
        manifolds = manifold_grids(model, config)
    except Exception as exc:  # training failure -> error response, stay alive
        return {"ok": False, "error": f"training failed: {exc}"}
    return {"ok": True, "dynamic_range": DYNAMIC_RANGE, "manifolds": manifolds}


def handle_line(line: str, config: WorkerConfig, mock: bool) -> str:
    try:
        req = json.loads(line)
    except json.JSONDecodeError:
        return json.dumps({"id": None, "ok": False, "error": "malformed JSON"})
    if not isinstance(req, dict):
        return json.dumps({"id": None, "ok": False, "error": "request must be an object"})
    rid = req.get("id")
    op = req.get("op")
    if op == "ping":
        return json.dumps({"id": rid, "ok": True})
    if op == "evaluate":
        resp = evaluate_request(req, config, mock)
        return json.dumps({"id": rid, **resp})
    return json.dumps({"id": rid, "ok": False, "error": f"unknown op {op!r}"})


def serve_stdio(config: WorkerConfig, mock: bool = False,
                stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        stdout.write(handle_line(line, config, mock) + "\n")
        stdout.flush()


def serve_tcp(config: WorkerConfig, port: int, mock: bool = False,
              host: str = "127.0.0.1", ready_callback=None):
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode().strip()
                if not line:
                    continue
                out = handle_line(line, config, mock) + "\n"
                self.wfile.write(out.encode())
                self.wfile.flush()

    with socketserver.TCPServer((host, port), Handler) as server:
        if ready_callback is not None:
            ready_callback(server.server_address[1])
        server.serve_forever()
