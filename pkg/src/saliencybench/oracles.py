"""Scoring oracles: in-process nets, a fixed linear probe, and the bridge client.

An oracle maps images to class-probability vectors. In-process oracles can
also expose input gradients; external bridge oracles never do, and
gradient-based consumers must check ``has_gradients`` first.
"""

from __future__ import annotations

import json
import queue
import shlex
import shutil
import subprocess
import tempfile
import threading
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BridgeTimeout,
    DimMismatch,
    NoGradient,
    NonStochasticVector,
    ProtocolViolation,
)
from .rng import Rng
from .tensorio import Tensor, save_tensor
from .toynet import ToyNet, softmax

PROTOCOL_VERSION = 1
PROB_SUM_TOL = 1e-4


class ScoringOracle:
    """Base interface: probability vectors per image, deterministic."""

    num_classes: int
    has_gradients: bool = False

    def score_batch(self, images: Sequence[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def score(self, image: np.ndarray) -> np.ndarray:
        return self.score_batch([image])[0]

    def confidence(self, image: np.ndarray, class_index: int) -> float:
        return float(self.score(image)[class_index])

    def confidence_gradient(self, image: np.ndarray, class_index: int) -> np.ndarray:
        raise NoGradient(f"{type(self).__name__} does not expose gradients")

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ToyNetOracle(ScoringOracle):
    """Wraps a ToyNet; supports confidence gradients for saliency methods."""

    has_gradients = True

    def __init__(self, net: ToyNet):
        self.net = net
        self.num_classes = net.num_classes

    def score_batch(self, images: Sequence[np.ndarray]) -> np.ndarray:
        if not len(images):
            return np.zeros((0, self.num_classes), dtype=np.float64)
        x = np.stack([np.asarray(im, dtype=np.float32).transpose(2, 0, 1) for im in images])
        return softmax(self.net.forward_batch(x)["logits"]).astype(np.float64)

    def confidence_gradient(self, image: np.ndarray, class_index: int) -> np.ndarray:
        x = np.asarray(image, dtype=np.float32).transpose(2, 0, 1)[None]
        cache = self.net.forward_batch(x)
        probs = softmax(cache["logits"])
        # d p_k / d z = p_k (e_k - p)
        g_logits = np.zeros_like(probs)
        g_logits[0] = probs[0, class_index] * (-probs[0])
        g_logits[0, class_index] += probs[0, class_index]
        g_in = self.net.backward_batch(cache, g_logits)["input"]
        return g_in[0].transpose(1, 2, 0)


class LinearSoftmaxOracle(ScoringOracle):
    """Fixed linear probe: logits_k = dot(w_k, flat(x)) with seeded weights.

    Weight i of class k is (u - 0.5) * 8 / D where u is draw i of the
    SplitMix64 child stream ``Rng(seed).child(k)`` and D is the flattened
    input size. The derivation is frozen so independent implementations
    can reproduce the exact same model.
    """

    def __init__(self, seed: int, num_classes: int, input_shape: tuple[int, int, int]):
        self.seed = seed
        self.num_classes = num_classes
        self.input_shape = input_shape
        d = int(np.prod(input_shape))
        base = Rng(seed)
        rows = []
        for k in range(num_classes):
            child = base.child(k)
            rows.append([(child.next_float() - 0.5) * 8.0 / d for _ in range(d)])
        self.weights = np.array(rows, dtype=np.float64)

    def score_batch(self, images: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros((len(images), self.num_classes), dtype=np.float64)
        for i, img in enumerate(images):
            if tuple(img.shape) != self.input_shape:
                raise DimMismatch(f"expected {self.input_shape}, got {img.shape}")
            logits = self.weights @ np.asarray(img, dtype=np.float64).reshape(-1)
            out[i] = softmax(logits)
        return out


class BridgeOracle(ScoringOracle):
    """Client for an external scoring process speaking the stdio protocol.

    Messages are newline-delimited JSON. The client writes images to TNSR
    files in a private temp directory and references them by path; response
    order is free, ids are matched. External oracles never offer gradients.
    """

    has_gradients = False

    def __init__(self, command: str | list[str], timeout: float = 30.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._timeout = timeout
        self._tmpdir = Path(tempfile.mkdtemp(prefix="sbench_bridge_"))
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 0
        try:
            self._send({"type": "hello", "version": PROTOCOL_VERSION})
            ready = self._recv()
            if ready.get("type") != "ready":
                raise ProtocolViolation(f"expected ready, got {ready!r}")
            try:
                self.num_classes = int(ready["classes"])
                self.input_dims = tuple(int(d) for d in ready["input"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolViolation(f"malformed ready message: {ready!r}") from exc
        except BaseException:
            self._proc.kill()
            shutil.rmtree(self._tmpdir, ignore_errors=True)
            raise

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _send(self, message: dict) -> None:
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolViolation(f"bridge pipe closed: {exc}") from exc

    def _recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self._timeout)
        except queue.Empty:
            raise BridgeTimeout(f"no response within {self._timeout}s") from None
        if line is None:
            raise ProtocolViolation("bridge closed its output stream")
        line = line.strip()
        if not line:
            return self._recv()
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(f"bad JSON from bridge: {line!r}") from exc
        if not isinstance(msg, dict):
            raise ProtocolViolation(f"expected object, got {line!r}")
        return msg

    def score_batch(self, images: Sequence[np.ndarray]) -> np.ndarray:
        if not len(images):
            return np.zeros((0, self.num_classes), dtype=np.float64)
        ids = []
        for img in images:
            rid = self._next_id
            self._next_id += 1
            path = self._tmpdir / f"score_{rid}.tnsr"
            save_tensor(Tensor.from_array(np.asarray(img, dtype=np.float32)), path)
            self._send({"type": "score", "id": rid, "tensor": str(path)})
            ids.append(rid)
        pending = set(ids)
        got: dict[int, np.ndarray] = {}
        while pending:
            msg = self._recv()
            if msg.get("type") == "error":
                raise ProtocolViolation(f"bridge error: {msg.get('msg')!r}")
            if msg.get("type") != "scores":
                raise ProtocolViolation(f"unexpected message: {msg!r}")
            rid = msg.get("id")
            if rid not in pending:
                raise ProtocolViolation(f"unknown or duplicate id {rid!r}")
            probs = np.asarray(msg.get("probs"), dtype=np.float64)
            if probs.ndim != 1 or len(probs) != self.num_classes:
                raise ProtocolViolation(f"probs wrong length for id {rid}")
            if not np.all(np.isfinite(probs)) or probs.min() < 0 \
                    or abs(float(probs.sum()) - 1.0) > PROB_SUM_TOL:
                raise NonStochasticVector(
                    f"id {rid}: probs sum {float(probs.sum()):.6f}"
                )
            got[rid] = probs
            pending.discard(rid)
        for rid in ids:
            (self._tmpdir / f"score_{rid}.tnsr").unlink(missing_ok=True)
        return np.stack([got[r] for r in ids])

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._send({"type": "bye"})
            except ProtocolViolation:
                pass
            try:
                self._proc.wait(timeout=self._timeout)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        shutil.rmtree(self._tmpdir, ignore_errors=True)


def external_score(bridge: BridgeOracle, images: Sequence[np.ndarray]) -> np.ndarray:
    """Score images through a connected bridge, preserving input order."""
    return bridge.score_batch(images)


def open_oracle(spec: str, checkpoint_loader=None) -> ScoringOracle:
    """Build an oracle from a CLI spec: ``toy`` or ``bridge:<command>``."""
    if spec == "toy":
        if checkpoint_loader is None:
            raise ValueError("toy oracle needs a checkpoint loader")
        return ToyNetOracle(checkpoint_loader())
    if spec.startswith("bridge:"):
        return BridgeOracle(spec[len("bridge:"):])
    raise ValueError(f"unknown oracle spec {spec!r}")
