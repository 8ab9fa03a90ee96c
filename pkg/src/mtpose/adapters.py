"""Black-box model adapters.

Three kinds are provided: an out-of-process adapter speaking newline-delimited
JSON over stdin/stdout, an oracle that echoes ground truth, and a seeded
degrader that drops detections and jitters keypoints.
"""

from __future__ import annotations

import collections
import hashlib
import json
import logging
import math
import queue
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from mtpose.dataset import NUM_KEYPOINTS, BoundingBox, HandLandmarks, tight_bbox
from mtpose.testgen import SuiteEntry, mr_of, tc1_level

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_MS = 30_000


class AdapterError(RuntimeError):
    """Adapter failure; carries whatever the child wrote to stderr."""

    def __init__(self, message: str, diagnostics: str = ""):
        self.diagnostics = diagnostics
        if diagnostics.strip():
            message = f"{message}\nadapter stderr:\n{diagnostics.rstrip()}"
        super().__init__(message)


class AdapterLaunchError(AdapterError):
    pass


class HandshakeTimeout(AdapterError):
    pass


class ProtocolVersionError(AdapterError):
    pass


class ProtocolError(AdapterError):
    pass


class AdapterTimeout(AdapterError):
    """A single request exceeded its deadline. The run continues."""

    def __init__(self, case_id: str, timeout_ms: int, diagnostics: str = ""):
        self.case_id = case_id
        super().__init__(f"no response for {case_id!r} within {timeout_ms} ms", diagnostics)


class AdapterConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    detected: bool
    bbox: BoundingBox | None = None
    keypoints: HandLandmarks | None = None
    confidence: float | None = None

    def __post_init__(self):
        if self.detected:
            if self.bbox is None or self.keypoints is None:
                raise ValueError("a detection needs a bbox and 21 keypoints")
        elif self.bbox is not None or self.keypoints is not None or self.confidence is not None:
            raise ValueError("a no-detection carries no geometry")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    @classmethod
    def none(cls) -> Prediction:
        return cls(False)

    def to_wire(self, case_id: str) -> dict[str, Any]:
        msg: dict[str, Any] = {"type": "result", "id": case_id, "detected": self.detected}
        if self.detected:
            msg["bbox"] = self.bbox.as_list()
            msg["keypoints"] = self.keypoints.to_list()
            if self.confidence is not None:
                msg["confidence"] = self.confidence
        return msg

    @classmethod
    def from_wire(cls, msg: Mapping[str, Any]) -> Prediction:
        """Parse a result message; raises ProtocolError on malformed content."""
        try:
            detected = msg["detected"]
            if not isinstance(detected, bool):
                raise ValueError("'detected' must be a boolean")
            if not detected:
                return cls.none()
            kps = msg["keypoints"]
            if not isinstance(kps, list) or len(kps) != NUM_KEYPOINTS:
                raise ValueError(f"'keypoints' must hold {NUM_KEYPOINTS} points")
            conf = msg.get("confidence")
            return cls(True, BoundingBox.from_list(msg["bbox"]), HandLandmarks.from_list(kps),
                       None if conf is None else float(conf))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed result for {msg.get('id')!r}: {exc}") from None


@dataclass(frozen=True)
class AdapterConfig:
    kind: str = "oracle"
    command: tuple[str, ...] = ()
    cwd: str | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    failure_table: Mapping[str, float] = field(default_factory=dict)
    occlusion_coef: float = 0.0
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("external", "oracle", "degrader"):
            raise AdapterConfigError(f"unknown adapter kind {self.kind!r}")
        if self.kind == "external" and not self.command:
            raise AdapterConfigError("external adapter needs a launch command")
        if self.timeout_ms <= 0:
            raise AdapterConfigError(f"timeout must be positive, got {self.timeout_ms}")
        if self.noise < 0:
            raise AdapterConfigError(f"noise magnitude must be >= 0, got {self.noise}")
        if self.occlusion_coef < 0:
            raise AdapterConfigError(f"occlusion coefficient must be >= 0, got {self.occlusion_coef}")
        for tc, p in self.failure_table.items():
            mr_of(tc)
            if not 0.0 <= p <= 1.0:
                raise AdapterConfigError(f"failure probability for {tc} outside [0, 1]: {p}")
        object.__setattr__(self, "command", tuple(self.command))
        object.__setattr__(self, "failure_table", dict(sorted(self.failure_table.items())))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == "external":
            d.update(command=list(self.command), cwd=self.cwd, timeout_ms=self.timeout_ms)
        if self.kind == "degrader":
            d.update(failure_table=dict(self.failure_table), occlusion_coef=self.occlusion_coef,
                     noise=self.noise, seed=self.seed)
        return d


class AdapterHandle:
    """Serves one prediction at a time; use as a context manager."""

    model_id = "unknown"

    def predict(self, case: SuiteEntry) -> Prediction:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class OracleAdapter(AdapterHandle):
    model_id = "oracle"

    def predict(self, case: SuiteEntry) -> Prediction:
        return Prediction(True, tight_bbox(case.landmarks), case.landmarks, 1.0)


class HashStream:
    """SHA-256 counter-mode stream of 64-bit integers.

    Keyed by (seed, label) so that draws for a case do not depend on request
    order or on which worker serves it.
    """

    def __init__(self, seed: int, label: str):
        self._key = f"{int(seed)}:{label}".encode()
        self._counter = 0

    def next_u64(self) -> int:
        digest = hashlib.sha256(self._key + b":" + str(self._counter).encode()).digest()
        self._counter += 1
        return int.from_bytes(digest[:8], "big")

    def uniform(self) -> float:
        # 53 bits, exactly representable
        return (self.next_u64() >> 11) / float(1 << 53)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] by rejection."""
        span = hi - lo + 1
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            v = self.next_u64()
            if v < limit:
                return lo + v % span


class DegraderAdapter(AdapterHandle):
    """Synthetic model: oracle output with injected misses and keypoint jitter.

    The miss decision for a case uses one uniform draw keyed by its *source
    sample*, compared against the failure probability of its test case. Draws
    are therefore shared across a sample's test cases, so a sample that is
    missed at some occlusion level is also missed at every level with a higher
    probability. Noise offsets are whole half-pixels inside a disc of radius
    ``noise``.
    """

    model_id = "degrader"

    def __init__(self, config: AdapterConfig):
        self.config = config

    def failure_probability(self, tc_id: str) -> float:
        if tc_id in self.config.failure_table:
            return float(self.config.failure_table[tc_id])
        if self.config.occlusion_coef and mr_of(tc_id) == "MR1":
            return min(1.0, self.config.occlusion_coef * tc1_level(tc_id))
        return 0.0

    def offsets(self, case_id: str) -> np.ndarray:
        half_units = int(math.floor(2 * self.config.noise))
        out = np.zeros((NUM_KEYPOINTS, 2), dtype=np.float64)
        if half_units == 0:
            return out
        stream = HashStream(self.config.seed, f"noise:{case_id}")
        r2 = half_units * half_units
        for i in range(NUM_KEYPOINTS):
            while True:
                dx = stream.randint(-half_units, half_units)
                dy = stream.randint(-half_units, half_units)
                if dx * dx + dy * dy <= r2:
                    break
            out[i] = (dx / 2.0, dy / 2.0)
        return out

    def predict(self, case: SuiteEntry) -> Prediction:
        p = self.failure_probability(case.tc_id)
        u = HashStream(self.config.seed, f"miss:{case.descriptor.source_id}").uniform()
        if u < p:
            return Prediction.none()
        kps = HandLandmarks(case.landmarks.points + self.offsets(case.case_id))
        return Prediction(True, tight_bbox(kps), kps, 1.0)


class ExternalAdapter(AdapterHandle):
    """Child process speaking the line protocol on stdin/stdout."""

    def __init__(self, config: AdapterConfig):
        self.config = config
        self.timeout_ms = config.timeout_ms
        self._stderr = collections.deque(maxlen=200)
        self._lines: queue.Queue = queue.Queue()
        self._abandoned: set[str] = set()
        try:
            self.proc = subprocess.Popen(
                list(config.command), cwd=config.cwd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True, encoding="utf-8", bufsize=1)
        except OSError as exc:
            raise AdapterLaunchError(f"cannot launch {list(config.command)!r}: {exc}") from None
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        self._stderr_pump = threading.Thread(target=self._pump_stderr, daemon=True)
        self._stderr_pump.start()
        try:
            self.model_id = self._handshake()
        except AdapterError:
            self.close()
            raise

    def _pump_stdout(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _pump_stderr(self):
        for line in self.proc.stderr:
            self._stderr.append(line)

    def diagnostics(self) -> str:
        # after a crash, let the stderr pump drain to EOF
        if self.proc.poll() is not None:
            self._stderr_pump.join(timeout=1.0)
        return "".join(self._stderr)

    def _send(self, msg: dict) -> None:
        try:
            self.proc.stdin.write(json.dumps(msg) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError):
            raise ProtocolError("adapter closed its input", self.diagnostics()) from None

    def _receive(self, deadline: float) -> dict | None:
        """Next JSON message, or None on timeout."""
        remaining = deadline - time.monotonic()
        try:
            line = self._lines.get(timeout=max(remaining, 0.0))
        except queue.Empty:
            return None
        if line is None:
            self._lines.put(None)
            raise ProtocolError(f"adapter exited (status {self._exit_status()})", self.diagnostics())
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError(f"adapter sent non-JSON line: {line.rstrip()[:200]!r}",
                                self.diagnostics()) from None
        if not isinstance(msg, dict):
            raise ProtocolError(f"adapter sent a non-object message: {line.rstrip()[:200]!r}",
                                self.diagnostics())
        return msg

    def _exit_status(self, grace: float = 2.0) -> int | None:
        # stdout can hit EOF a moment before the exit status is reapable
        try:
            return self.proc.wait(timeout=grace)
        except subprocess.TimeoutExpired:
            return None

    def _handshake(self) -> str:
        self._send({"type": "hello", "version": PROTOCOL_VERSION})
        deadline = time.monotonic() + self.timeout_ms / 1000.0
        try:
            msg = self._receive(deadline)
        except ProtocolError as exc:
            status = self._exit_status()
            if status is not None:
                raise AdapterLaunchError(f"adapter exited during handshake (status {status})",
                                         exc.diagnostics) from None
            raise
        if msg is None:
            raise HandshakeTimeout(f"no hello within {self.timeout_ms} ms", self.diagnostics())
        if msg.get("type") != "hello":
            raise ProtocolError(f"expected hello, got {msg!r}", self.diagnostics())
        if msg.get("version") != PROTOCOL_VERSION:
            raise ProtocolVersionError(
                f"adapter speaks protocol version {msg.get('version')!r}, harness speaks {PROTOCOL_VERSION}",
                self.diagnostics())
        model = msg.get("model")
        if not isinstance(model, str) or not model:
            raise ProtocolError("hello reply lacks a model name", self.diagnostics())
        return model

    def predict(self, case: SuiteEntry) -> Prediction:
        case_id = case.case_id
        self._send({"type": "predict", "id": case_id, "image": str(Path(case.image_path).resolve())})
        deadline = time.monotonic() + self.timeout_ms / 1000.0
        while True:
            msg = self._receive(deadline)
            if msg is None:
                # a late reply for this id will be discarded
                self._abandoned.add(case_id)
                raise AdapterTimeout(case_id, self.timeout_ms)
            if msg.get("type") != "result":
                raise ProtocolError(f"expected result, got {msg!r}", self.diagnostics())
            rid = msg.get("id")
            if rid in self._abandoned:
                self._abandoned.discard(rid)
                continue
            if rid != case_id:
                raise ProtocolError(f"response id {rid!r} does not match request {case_id!r}",
                                    self.diagnostics())
            return Prediction.from_wire(msg)

    def close(self) -> None:
        proc = getattr(self, "proc", None)
        if proc is None or proc.poll() is not None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


def spawn_adapter(config: AdapterConfig) -> AdapterHandle:
    if config.kind == "oracle":
        return OracleAdapter()
    if config.kind == "degrader":
        return DegraderAdapter(config)
    return ExternalAdapter(config)


def oracle_adapter(suite: Sequence[SuiteEntry] | None = None) -> AdapterHandle:
    return OracleAdapter()


def degrader_adapter(suite: Sequence[SuiteEntry] | None = None, config: AdapterConfig | None = None,
                     **kwargs) -> AdapterHandle:
    if config is None:
        config = AdapterConfig(kind="degrader", **kwargs)
    return DegraderAdapter(config)


def staircase_table(drops: Mapping[int, float]) -> dict[str, float]:
    """Per-level TC1 failure table that holds each probability until the next drop level.

    ``staircase_table({5: 0.3, 9: 0.5})`` fails nothing at levels 1-4, 30% at
    levels 5-8 and 50% from level 9 on.
    """
    table, p = {}, 0.0
    for n in range(1, NUM_KEYPOINTS + 1):
        p = drops.get(n, p)
        table[f"TC1_L{n}"] = p
    return table
