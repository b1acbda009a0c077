"""Client side of the external-objective wire protocol.

Newline-delimited JSON requests/responses over a worker subprocess's
stdin/stdout or a TCP socket. Requests carry a monotonically increasing
id; a response must echo the id of the request it answers. All errors
(timeouts, malformed frames, worker-reported failures) surface as
EvaluationFailedError with diagnostics.
"""

from __future__ import annotations

import json
import os
import select
import socket
import subprocess
import time

import numpy as np

from .errors import EvaluationFailedError
from .objective import ManifoldGrid


class _ProcTransport:
    def __init__(self, command):
        self.proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
        )
        self._fd = self.proc.stdout.fileno()

    def send(self, data: bytes) -> None:
        self.proc.stdin.write(data)
        self.proc.stdin.flush()

    def read_some(self, timeout: float) -> bytes:
        ready, _, _ = select.select([self._fd], [], [], timeout)
        if not ready:
            return b""
        return os.read(self._fd, 1 << 16)

    def alive(self) -> bool:
        return self.proc.poll() is None

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class _TcpTransport:
    def __init__(self, address):
        self.sock = socket.create_connection(address, timeout=30)
        self.sock.setblocking(False)

    def send(self, data: bytes) -> None:
        self.sock.setblocking(True)
        try:
            self.sock.sendall(data)
        finally:
            self.sock.setblocking(False)

    def read_some(self, timeout: float) -> bytes:
        ready, _, _ = select.select([self.sock], [], [], timeout)
        if not ready:
            return b""
        return self.sock.recv(1 << 16)

    def alive(self) -> bool:
        return self.sock.fileno() >= 0

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class WorkerClient:
    """Sequential request/response client; one outstanding request at a time."""

    def __init__(self, transport, timeout_s: float):
        self._transport = transport
        self._timeout = timeout_s
        self._buffer = bytearray()
        self._next_id = 1

    @classmethod
    def open(cls, command=None, address=None, timeout_s: float = 600.0) -> "WorkerClient":
        if (command is None) == (address is None):
            raise EvaluationFailedError("set exactly one of command or address")
        transport = _ProcTransport(command) if command is not None else _TcpTransport(address)
        return cls(transport, timeout_s)

    def _read_line(self, deadline: float) -> bytes:
        while True:
            nl = self._buffer.find(b"\n")
            if nl >= 0:
                line = bytes(self._buffer[:nl])
                del self._buffer[:nl + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise EvaluationFailedError(
                    f"worker response timed out after {self._timeout}s"
                )
            chunk = self._transport.read_some(min(remaining, 1.0))
            if chunk:
                self._buffer.extend(chunk)
            elif not self._transport.alive():
                raise EvaluationFailedError("worker exited before responding")

    def request(self, op: str, **fields) -> dict:
        req_id = self._next_id
        self._next_id += 1
        payload = {"id": req_id, "op": op, **fields}
        try:
            self._transport.send(json.dumps(payload).encode() + b"\n")
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise EvaluationFailedError(f"failed to send request: {exc}") from exc
        deadline = time.monotonic() + self._timeout
        line = self._read_line(deadline)
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvaluationFailedError(f"malformed worker response: {line[:200]!r}") from exc
        if resp.get("id") != req_id:
            raise EvaluationFailedError(
                f"response id {resp.get('id')!r} does not match request id {req_id}"
            )
        if not resp.get("ok", False):
            raise EvaluationFailedError(f"worker error: {resp.get('error', 'unspecified')}")
        return resp

    def ping(self) -> bool:
        return bool(self.request("ping").get("ok"))

    def evaluate(self, trajectory_values: np.ndarray, config_override: dict | None = None
                 ) -> list[ManifoldGrid]:
        resp = self.request(
            "evaluate",
            trajectory=[float(v) for v in trajectory_values],
            config_override=config_override or {},
        )
        return parse_manifolds(resp)

    def close(self) -> None:
        self._transport.close()


def parse_manifolds(resp: dict) -> list[ManifoldGrid]:
    """Validate and decode the manifold payload of an evaluate response."""
    if "manifolds" not in resp or not isinstance(resp["manifolds"], list):
        raise EvaluationFailedError("response is missing the manifolds list")
    dynamic_range = float(resp.get("dynamic_range", 1.0))
    manifolds = []
    for entry in resp["manifolds"]:
        try:
            rows, cols = int(entry["rows"]), int(entry["cols"])
            h, w = int(entry["h"]), int(entry["w"])
            pixels = np.asarray(entry["pixels"], dtype=np.float64)
            if pixels.shape != (rows * cols * h * w,):
                raise EvaluationFailedError(
                    f"manifold pixel count {pixels.shape} != rows*cols*h*w "
                    f"({rows}x{cols}x{h}x{w})"
                )
            manifolds.append(ManifoldGrid(
                class_id=int(entry["class_id"]),
                cells=pixels.reshape(rows, cols, h, w),
                dynamic_range=dynamic_range,
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise EvaluationFailedError(f"malformed manifold entry: {exc}") from exc
    if not manifolds:
        raise EvaluationFailedError("worker returned zero manifolds")
    return manifolds
