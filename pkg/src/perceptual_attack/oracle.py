"""The black box: a query-counted logit oracle.

Every access to a model goes through :func:`predict_logits`, which charges the
caller's :class:`QueryCounter` before the forward pass runs. Oracles keep their
forward pass private (``_forward``).
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .image import ImageTensor, as_array

LAYER_TYPES = ("dense", "conv3x3", "avgpool2", "relu", "flatten")


class BudgetExhausted(RuntimeError):
    """The query budget is spent; no further oracle access is allowed."""


class OracleError(RuntimeError):
    """The oracle failed to produce logits."""


class OracleProtocolError(OracleError):
    """An external oracle answered with a malformed or mismatched message."""


class WeightsError(ValueError):
    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


@dataclass
class QueryCounter:
    budget: int
    used: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be at least 1")

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def charge(self) -> None:
        if self.used >= self.budget:
            raise BudgetExhausted(f"query budget of {self.budget} exhausted")
        self.used += 1


def predicted_class(logits) -> int:
    """argmax with ties resolved to the lowest index."""
    logits = np.asarray(logits)
    if logits.size == 0:
        raise ValueError("empty logit vector")
    return int(np.argmax(logits))


# --- model description -------------------------------------------------------


def _ro(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    type: str
    w: np.ndarray | None = None
    b: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, Layer):
            return NotImplemented
        if self.type != other.type:
            return False
        for a, b in ((self.w, other.w), (self.b, other.b)):
            if (a is None) != (b is None):
                return False
            if a is not None and not (a.shape == b.shape and np.array_equal(a, b)):
                return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class Model:
    """Immutable layer list; ``input_shape`` (H, W, C) is optional."""

    layers: tuple[Layer, ...]
    input_shape: tuple[int, int, int] | None = None

    @property
    def num_classes(self) -> int:
        for layer in reversed(self.layers):
            if layer.type == "dense":
                return layer.w.shape[0]
            if layer.type == "conv3x3":
                raise WeightsError("model must end in a dense layer to define classes")
        raise WeightsError("model has no dense layer")

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = {"type": layer.type}
            if layer.w is not None:
                d["w"] = layer.w.tolist()
                d["b"] = layer.b.tolist()
            layers.append(d)
        out = {"layers": layers}
        if self.input_shape is not None:
            out["input_shape"] = list(self.input_shape)
        return out


def _parse_layer(i: int, spec) -> Layer:
    if not isinstance(spec, dict) or spec.get("type") not in LAYER_TYPES:
        raise WeightsError(f"unknown layer {spec!r}", i)
    kind = spec["type"]
    if kind not in ("dense", "conv3x3"):
        return Layer(kind)
    try:
        w = np.array(spec["w"], dtype=np.float64)
        b = np.array(spec["b"], dtype=np.float64)
    except KeyError as exc:
        raise WeightsError(f"{kind} layer missing {exc.args[0]!r}", i) from None
    except ValueError as exc:
        raise WeightsError(f"ragged or non-numeric weights ({exc})", i) from None
    if kind == "dense":
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise WeightsError(
                f"dense weight shape {w.shape} incompatible with bias shape {b.shape}", i
            )
    elif w.ndim != 4 or w.shape[2:] != (3, 3) or b.shape != (w.shape[0],):
        raise WeightsError(
            f"conv3x3 weight shape {w.shape} incompatible with bias shape {b.shape}", i
        )
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise WeightsError("non-finite weights", i)
    return Layer(kind, _ro(w), _ro(b))


def _check_chain(layers, input_shape) -> None:
    """Propagate shapes through the layer list; raise naming the failing layer."""
    shape = tuple(input_shape) if input_shape is not None else None
    for i, layer in enumerate(layers):
        if layer.type == "dense":
            n_in = layer.w.shape[1]
            if shape is not None and int(np.prod(shape)) != n_in:
                raise WeightsError(f"dense expects {n_in} inputs, receives shape {shape}", i)
            shape = (layer.w.shape[0],)
        elif layer.type == "conv3x3":
            if shape is None:
                continue
            if len(shape) != 3 or shape[2] != layer.w.shape[1] or min(shape[:2]) < 3:
                raise WeightsError(
                    f"conv3x3 with {layer.w.shape[1]} input channels cannot take shape {shape}", i
                )
            shape = (shape[0] - 2, shape[1] - 2, layer.w.shape[0])
        elif layer.type == "avgpool2":
            if shape is None:
                continue
            if len(shape) != 3 or min(shape[:2]) < 2:
                raise WeightsError(f"avgpool2 cannot take shape {shape}", i)
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif layer.type == "flatten":
            if shape is not None:
                shape = (int(np.prod(shape)),)
    if shape is not None and len(shape) != 1:
        raise WeightsError(f"model output has shape {shape}, expected a logit vector")


def model_from_dict(data) -> Model:
    if not isinstance(data, dict) or not isinstance(data.get("layers"), list):
        raise WeightsError('weights must be an object with a "layers" list')
    if not data["layers"]:
        raise WeightsError("model has no layers")
    layers = tuple(_parse_layer(i, spec) for i, spec in enumerate(data["layers"]))
    input_shape = data.get("input_shape")
    if input_shape is not None:
        input_shape = tuple(int(v) for v in input_shape)
    _check_chain(layers, input_shape)
    model = Model(layers, input_shape)
    model.num_classes  # raises if the head is missing
    return model


def load_weights(path) -> Model:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise WeightsError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(data)


def save_weights(model: Model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def builtin_forward(model: Model, x) -> np.ndarray:
    a = as_array(x)
    for i, layer in enumerate(model.layers):
        kind = layer.type
        if kind == "dense":
            flat = a.reshape(-1)
            if flat.size != layer.w.shape[1]:
                raise WeightsError(
                    f"dense expects {layer.w.shape[1]} inputs, got {flat.size}", i
                )
            a = layer.w @ flat + layer.b
        elif kind == "conv3x3":
            if a.ndim != 3 or a.shape[2] != layer.w.shape[1]:
                raise WeightsError(f"conv3x3 cannot take activation shape {a.shape}", i)
            a = kernels.conv3x3_valid(a, layer.w, layer.b)
        elif kind == "avgpool2":
            h, w = a.shape[0] // 2 * 2, a.shape[1] // 2 * 2
            a = a[:h, :w].reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))
        elif kind == "relu":
            a = np.maximum(a, 0.0)
        else:
            a = a.reshape(-1)
    return np.asarray(a, dtype=np.float64).reshape(-1)


# --- oracles -------------------------------------------------------------------


class BuiltinOracle:
    """In-process model; the forward pass is reentrant."""

    def __init__(self, model: Model):
        self.model = model
        self.num_classes = model.num_classes

    @classmethod
    def from_file(cls, path) -> "BuiltinOracle":
        return cls(load_weights(path))

    def _forward(self, x) -> np.ndarray:
        return builtin_forward(self.model, x)

    def close(self):
        pass


class ExternalOracle:
    """Child process speaking line-delimited JSON over stdin/stdout.

    Request ``{"id": n, "shape": [H, W, C], "pixels": [...]}``; response
    ``{"id": n, "logits": [...]}``. One request is in flight at a time.
    """

    def __init__(self, command, num_classes: int | None = None):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.command = argv
        self.num_classes = num_classes
        self._lock = threading.Lock()
        self._next_id = 0
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def _forward(self, x) -> np.ndarray:
        a = as_array(x)
        with self._lock:
            rid = self._next_id
            self._next_id += 1
            msg = {"id": rid, "shape": list(a.shape), "pixels": a.reshape(-1).tolist()}
            try:
                self._proc.stdin.write(json.dumps(msg) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise OracleError(f"external oracle pipe failed: {exc}") from exc
            if not line:
                code = self._proc.poll()
                raise OracleError(f"external oracle exited (status {code})")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise OracleProtocolError(f"unparseable reply: {line[:80]!r}") from exc
        if not isinstance(reply, dict) or reply.get("id") != rid:
            raise OracleProtocolError(f"expected reply id {rid}, got {line[:80]!r}")
        logits = np.asarray(reply.get("logits"), dtype=np.float64)
        if logits.ndim != 1 or logits.size < 2 or not np.all(np.isfinite(logits)):
            raise OracleProtocolError("reply logits must be a finite list of length >= 2")
        if self.num_classes is None:
            self.num_classes = logits.size
        elif logits.size != self.num_classes:
            raise OracleProtocolError(
                f"expected {self.num_classes} logits, got {logits.size}"
            )
        return logits

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class OracleSpec:
    """Either ``weights`` (builtin model file) or ``command`` (external process)."""

    weights: Path | None = None
    command: str | None = None
    num_classes: int | None = None

    def __post_init__(self):
        if (self.weights is None) == (self.command is None):
            raise ValueError("give exactly one of weights or command")
        if self.num_classes is not None and self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    def open(self):
        if self.weights is not None:
            return BuiltinOracle.from_file(self.weights)
        return ExternalOracle(self.command, self.num_classes)


def predict_logits(oracle, x: ImageTensor, counter: QueryCounter) -> np.ndarray:
    """Query the black box once, charging ``counter`` before the call."""
    counter.charge()
    try:
        logits = oracle._forward(x)
    except (BudgetExhausted, OracleError, WeightsError):
        raise
    except Exception as exc:
        raise OracleError(f"oracle failed: {exc}") from exc
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size < 2 or not np.all(np.isfinite(logits)):
        raise OracleError("oracle returned an invalid logit vector")
    return logits
