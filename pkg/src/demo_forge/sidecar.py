"""Client for the table-program execution sidecar.

The sidecar is a separate process speaking one JSON object per line over
stdio: a hello line on startup, then strictly sequential request/response
pairs. The client owns process lifecycle: it restarts the sidecar on
crash or protocol desync and retries the in-flight request once before
reporting an execution error. Use one client per worker thread.
"""
from __future__ import annotations

import json
import selectors
import subprocess
import threading
from typing import Sequence

from .core import DemoForgeError, Sample, Table

PROTOCOL = "table-exec/1"
DEFAULT_TIMEOUT_MS = 10000
_HANDSHAKE_TIMEOUT_S = 15.0
_GRACE_MS = 5000


class SidecarError(DemoForgeError):
    pass


class SidecarClient:
    def __init__(
        self,
        command: Sequence[str],
        *,
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        memory_cap_mb: int = 512,
    ):
        self.command = list(command)
        self.timeout_ms = timeout_ms
        self.memory_cap_mb = memory_cap_mb
        self._proc: subprocess.Popen | None = None
        self._next_id = 0
        self._lock = threading.Lock()
        self.restarts = 0

    # -- process management

    def _start(self) -> None:
        self._stop()
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        hello = self._read_line(_HANDSHAKE_TIMEOUT_S)
        if hello is None:
            raise SidecarError("sidecar produced no handshake line")
        try:
            doc = json.loads(hello)
        except json.JSONDecodeError as exc:
            raise SidecarError(f"bad handshake line: {hello!r}") from exc
        if doc.get("type") != "hello" or doc.get("protocol") != PROTOCOL:
            raise SidecarError(f"unexpected handshake: {doc}")

    def _stop(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def _ensure(self) -> None:
        if self._proc is None or self._proc.poll() is not None:
            self._start()

    def _read_line(self, timeout_s: float) -> str | None:
        assert self._proc is not None and self._proc.stdout is not None
        sel = selectors.DefaultSelector()
        sel.register(self._proc.stdout, selectors.EVENT_READ)
        try:
            if not sel.select(timeout_s):
                return None
        finally:
            sel.close()
        line = self._proc.stdout.readline()
        return line if line else None

    # -- protocol

    def execute(
        self,
        program: str,
        table: Table | None,
        *,
        timeout_ms: int | None = None,
    ) -> dict:
        """One request/response cycle; restarts and retries once on failure."""
        if not program:
            raise SidecarError("program must be non-empty")
        timeout_ms = timeout_ms or self.timeout_ms
        with self._lock:
            last = "sidecar failure"
            for round_ in range(2):
                try:
                    self._ensure()
                    return self._roundtrip(program, table, timeout_ms)
                except SidecarError as exc:
                    last = str(exc)
                    self.restarts += 1
                    self._stop()
            return {
                "status": "error",
                "error_kind": "sidecar_crash",
                "message": last,
            }

    def _roundtrip(self, program: str, table: Table | None, timeout_ms: int) -> dict:
        assert self._proc is not None and self._proc.stdin is not None
        self._next_id += 1
        req_id = self._next_id
        request = {
            "id": req_id,
            "program": program,
            "table": table.to_json() if table is not None else None,
            "timeout_ms": timeout_ms,
            "memory_cap_mb": self.memory_cap_mb,
        }
        try:
            self._proc.stdin.write(json.dumps(request, ensure_ascii=False) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SidecarError(f"sidecar stdin closed: {exc}") from exc
        deadline_s = (timeout_ms + _GRACE_MS) / 1000.0
        line = self._read_line(deadline_s)
        if line is None:
            raise SidecarError("sidecar stopped responding (crash or hang)")
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SidecarError(f"protocol desync, unparseable line: {line!r}") from exc
        if doc.get("id") != req_id:
            raise SidecarError(f"protocol desync: expected id {req_id}, got {doc.get('id')}")
        if doc.get("status") not in ("ok", "error", "timeout"):
            raise SidecarError(f"unknown response status: {doc}")
        return doc

    # -- engine.ProgramRunner interface

    def run(self, program: str, sample: Sample) -> tuple[str, str | None, str, str]:
        doc = self.execute(program, sample.table)
        status = doc["status"]
        if status == "ok":
            return "ok", str(doc.get("answer", "")), "", ""
        if status == "timeout":
            return "timeout", None, "timeout", doc.get("message", "timed out")
        return "error", None, doc.get("error_kind", "exception"), doc.get("message", "")

    def close(self) -> None:
        with self._lock:
            self._stop()

    def __enter__(self) -> "SidecarClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
