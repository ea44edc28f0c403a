from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import threading
from typing import Any, Sequence

from .asi import ScoreVector
from .audio import AudioBuffer
from .run_log import RunLog, log_event

PROTOCOL = "asi-adapter/1"
DEFAULT_TIMEOUT_S = 30.0


class AdapterError(RuntimeError):
    pass


class AdapterTimeoutError(AdapterError, TimeoutError):
    pass


def _reject_constant(token: str) -> Any:
    raise ValueError(f"Non-finite number {token} is not allowed.")


def parse_line(line: str) -> dict[str, Any] | None:
    """Decode one protocol line; comments and blank lines yield ``None``."""

    text = line.strip()
    if not text or text.startswith("#"):
        return None
    payload = json.loads(text, parse_constant=_reject_constant)
    if not isinstance(payload, dict):
        raise ValueError("Protocol messages must be JSON objects.")
    return payload


class AdapterClient:
    """Client for an external speaker-identification adapter process.

    The adapter speaks newline-delimited JSON on its stdin/stdout: it announces
    its labels once, then answers each ``{"id", "sample_rate", "samples"}``
    request with ``{"id", "scores"}``. Requests may be in flight from several
    threads at once; replies are routed back by id.
    """

    def __init__(
        self,
        command: str | Sequence[str],
        *,
        timeout: float = DEFAULT_TIMEOUT_S,
        handshake_timeout: float | None = None,
        log: RunLog | None = None,
    ) -> None:
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self.handshake_timeout = handshake_timeout if handshake_timeout is not None else timeout
        self.log = log
        self._process: subprocess.Popen[str] | None = None
        self._reader_thread: threading.Thread | None = None
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._next_id = 1
        self._responses: dict[int, queue.Queue[Any]] = {}
        self._handshake: queue.Queue[Any] = queue.Queue(maxsize=1)
        self._labels: tuple[str, ...] = ()

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def start(self) -> "AdapterClient":
        if self._process:
            return self
        if not self.command:
            raise AdapterError("Adapter command is empty.")
        try:
            self._process = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except FileNotFoundError as exc:
            raise AdapterError(f"Adapter executable not found: {self.command[0]}") from exc

        self._reader_thread = threading.Thread(target=self._reader_loop, daemon=True)
        self._reader_thread.start()
        try:
            handshake = self._handshake.get(timeout=self.handshake_timeout)
        except queue.Empty:
            self.stop()
            raise AdapterTimeoutError("Adapter did not complete its handshake in time.") from None
        if isinstance(handshake, Exception):
            self.stop()
            raise handshake
        self._labels = handshake
        log_event(self.log, "adapter_started", {"command": self.command, "labels": list(handshake)})
        return self

    def stop(self) -> None:
        if not self._process:
            return
        process = self._process
        self._process = None
        if process.stdin:
            try:
                process.stdin.close()
            except OSError:
                pass
        process.terminate()
        try:
            process.wait(timeout=5)
        except subprocess.TimeoutExpired:
            process.kill()

    def __enter__(self) -> "AdapterClient":
        return self.start()

    def __exit__(self, *_exc: object) -> None:
        self.stop()

    def identify(self, buf: AudioBuffer) -> tuple[str, ScoreVector]:
        if not self._labels:
            raise AdapterError("Adapter handshake has not completed.")
        request_id = self._next_request_id()
        response_queue: queue.Queue[Any] = queue.Queue(maxsize=1)
        with self._lock:
            self._responses[request_id] = response_queue
        message = {
            "id": request_id,
            "sample_rate": buf.sample_rate,
            "samples": buf.samples.tolist(),
        }
        try:
            self._write(message)
        except AdapterError:
            with self._lock:
                self._responses.pop(request_id, None)
            raise
        try:
            response = response_queue.get(timeout=self.timeout)
        except queue.Empty:
            with self._lock:
                self._responses.pop(request_id, None)
            raise AdapterTimeoutError(
                f"Adapter did not answer request {request_id} within {self.timeout} s."
            ) from None
        if isinstance(response, Exception):
            raise response
        scores = self._normalize(response)
        label = scores.top(1)[0][0]
        return label, scores

    def _normalize(self, scores: Any) -> ScoreVector:
        if not isinstance(scores, dict):
            raise AdapterError("Adapter scores must be an object.")
        unknown = set(scores) - set(self._labels)
        if unknown:
            raise AdapterError(f"Adapter returned unknown labels: {sorted(unknown)}")
        values = []
        for label in self._labels:
            value = scores.get(label, 0.0)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise AdapterError(f"Score for {label!r} is not a number.")
            if not math.isfinite(value) or value < 0:
                raise AdapterError(f"Score for {label!r} must be finite and non-negative.")
            values.append(float(value))
        total = math.fsum(values)
        if total <= 0:
            raise AdapterError("Adapter scores sum to zero.")
        return ScoreVector(self._labels, [value / total for value in values])

    def _write(self, payload: dict[str, Any]) -> None:
        process = self._process
        if not process or not process.stdin or process.poll() is not None:
            raise AdapterError("Adapter process is not running.")
        line = json.dumps(payload, allow_nan=False) + "\n"
        try:
            with self._write_lock:
                process.stdin.write(line)
                process.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise AdapterError(f"Failed to write to adapter: {exc}") from exc

    def _next_request_id(self) -> int:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            return request_id

    def _fail_pending(self, error: AdapterError) -> None:
        log_event(self.log, "adapter_protocol_error", {"error": str(error)})
        with self._lock:
            pending = list(self._responses.values())
            self._responses.clear()
        for response_queue in pending:
            response_queue.put(error)

    def _reader_loop(self) -> None:
        process = self._process
        if not process or not process.stdout:
            return
        greeted = False
        for line in process.stdout:
            try:
                payload = parse_line(line)
            except ValueError as exc:
                error = AdapterError(f"Malformed adapter line: {exc}")
                if not greeted:
                    self._handshake.put(error)
                    return
                self._fail_pending(error)
                continue
            if payload is None:
                continue

            if not greeted:
                greeted = True
                self._handshake.put(self._parse_handshake(payload))
                continue

            request_id = payload.get("id")
            valid_id = isinstance(request_id, int) and not isinstance(request_id, bool)
            if not valid_id or "scores" not in payload:
                self._fail_pending(AdapterError(f"Malformed adapter response: {payload}"))
                continue
            with self._lock:
                response_queue = self._responses.pop(request_id, None)
            if response_queue is None:
                self._fail_pending(
                    AdapterError(f"Adapter response id {request_id} matches no request.")
                )
                continue
            response_queue.put(payload["scores"])

    @staticmethod
    def _parse_handshake(payload: dict[str, Any]) -> tuple[str, ...] | AdapterError:
        if payload.get("protocol") != PROTOCOL:
            return AdapterError(f"Unsupported adapter protocol: {payload.get('protocol')!r}")
        labels = payload.get("labels")
        if (
            not isinstance(labels, list)
            or not labels
            or not all(isinstance(label, str) for label in labels)
            or len(set(labels)) != len(labels)
        ):
            return AdapterError("Adapter handshake must list unique string labels.")
        return tuple(sorted(labels))


def external_identify(endpoint: AdapterClient, buf: AudioBuffer) -> tuple[str, ScoreVector]:
    return endpoint.identify(buf)
