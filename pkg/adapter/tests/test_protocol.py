import io
import json
import socket
import threading

import numpy as np
import pytest

from manifold_worker import WorkerConfig, handle_line, mock_manifolds, serve_stdio, serve_tcp
from manifold_worker.config import from_dict, merged

CFG = WorkerConfig()


def call(payload, mock=True, cfg=CFG):
    return json.loads(handle_line(json.dumps(payload), cfg, mock))


class TestFraming:
    def test_ping_echoes_id(self):
        assert call({"id": 41, "op": "ping"}) == {"id": 41, "ok": True}

    def test_ping_without_id(self):
        resp = call({"op": "ping"})
        assert resp["ok"] is True and resp["id"] is None

    def test_malformed_json_keeps_worker_alive(self):
        resp = json.loads(handle_line("{not json", CFG, True))
        assert resp["ok"] is False and resp["id"] is None
        # a following request still works
        assert call({"id": 1, "op": "ping"})["ok"] is True

    def test_non_object_request(self):
        resp = json.loads(handle_line("[1,2,3]", CFG, True))
        assert resp["ok"] is False

    def test_unknown_op(self):
        resp = call({"id": 9, "op": "train?"})
        assert resp["ok"] is False and resp["id"] == 9


class TestEvaluateValidation:
    def test_missing_trajectory(self):
        resp = call({"id": 1, "op": "evaluate"})
        assert resp["ok"] is False and "trajectory" in resp["error"]

    def test_non_numeric_trajectory(self):
        resp = call({"id": 1, "op": "evaluate", "trajectory": ["a", "b"]})
        assert resp["ok"] is False

    def test_non_finite_trajectory(self):
        resp = call({"id": 1, "op": "evaluate", "trajectory": [1.0, float("nan")]})
        assert resp["ok"] is False and "finite" in resp["error"]

    def test_length_must_match_cycles(self):
        cfg = from_dict({"cycles": 5, "dataset": "blobs", "subset_size": 20,
                         "n_classes": 2})
        resp = json.loads(handle_line(
            json.dumps({"id": 2, "op": "evaluate", "trajectory": [1.0] * 4}),
            cfg, False))
        assert resp["ok"] is False and "cycles" in resp["error"]

    def test_bad_config_override(self):
        resp = call({"id": 3, "op": "evaluate", "trajectory": [1.0] * 120,
                     "config_override": {"cycels": 10}})
        assert resp["ok"] is False and "config_override" in resp["error"]

    def test_config_override_applies(self):
        resp = call({"id": 4, "op": "evaluate", "trajectory": [1.0] * 120,
                     "config_override": {"grid_rows": 2, "grid_cols": 3}})
        assert resp["ok"] is True
        assert resp["manifolds"][0]["rows"] == 2
        assert resp["manifolds"][0]["cols"] == 3


class TestMock:
    def test_deterministic(self):
        a = mock_manifolds(CFG)
        b = mock_manifolds(CFG)
        for ma, mb in zip(a, b):
            assert ma["pixels"] == mb["pixels"]

    def test_schema_fields(self):
        resp = call({"id": 5, "op": "evaluate", "trajectory": [1.0] * 120})
        assert resp["dynamic_range"] == 1.0
        assert len(resp["manifolds"]) == CFG.n_classes
        for m in resp["manifolds"]:
            assert set(m) == {"class_id", "rows", "cols", "h", "w", "pixels"}
            assert len(m["pixels"]) == m["rows"] * m["cols"] * m["h"] * m["w"]
            arr = np.asarray(m["pixels"])
            assert np.all(np.isfinite(arr))


class TestTransports:
    def test_stdio_loop_in_order(self):
        lines = "\n".join(json.dumps({"id": i, "op": "ping"}) for i in range(5))
        out = io.StringIO()
        serve_stdio(CFG, mock=True, stdin=io.StringIO(lines + "\n"), stdout=out)
        ids = [json.loads(ln)["id"] for ln in out.getvalue().strip().splitlines()]
        assert ids == list(range(5))

    @staticmethod
    def start_tcp_server():
        ready = threading.Event()
        port_box = {}

        def note_port(port):
            port_box["port"] = port
            ready.set()

        thread = threading.Thread(
            target=serve_tcp, args=(CFG, 0), kwargs={"mock": True,
                                                     "ready_callback": note_port},
            daemon=True)
        thread.start()
        assert ready.wait(timeout=10)
        return port_box["port"]

    def test_tcp_round_trip(self):
        port = self.start_tcp_server()
        with socket.create_connection(("127.0.0.1", port), timeout=10) as sock:
            sock.sendall(json.dumps({"id": 77, "op": "ping"}).encode() + b"\n")
            buf = b""
            while not buf.endswith(b"\n"):
                buf += sock.recv(4096)
        assert json.loads(buf) == {"id": 77, "ok": True}

    def test_tcp_serves_optimizer_client(self):
        from latentbo.worker_client import WorkerClient

        port = self.start_tcp_server()
        client = WorkerClient.open(address=("127.0.0.1", port), timeout_s=30)
        try:
            assert client.ping()
            manifolds = client.evaluate(np.linspace(3.0, 0.1, CFG.cycles), {})
        finally:
            client.close()
        assert len(manifolds) == CFG.n_classes
        assert manifolds[0].cells.shape == (CFG.grid_rows, CFG.grid_cols,
                                            CFG.image_size, CFG.image_size)


def test_merged_rejects_unknown_keys():
    with pytest.raises(ValueError):
        merged(CFG, {"nonsense": 1})
