"""Minimal dense / residual network engine on numpy.

A network is described by a :class:`ModelSpec` and all of its trainable
weights live in one flat :class:`ParameterVector`. Layer ``i`` owns the slice
``layout[i] = (offset, length)``: first its ``in_width x out_width`` weight
matrix (row-major), then its ``out_width`` biases. A dense layer computes
``act(x @ W + b)``, a residual layer ``x + act(x @ W + b)``.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from fed_dpgan.errors import ParameterError, StructuralError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")

# Residual layers need act(0) == 0 so that zero weights give the identity map.
_RESIDUAL_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "relu"
    residual: bool = False

    @property
    def n_params(self) -> int:
        return self.in_width * self.out_width + self.out_width


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise StructuralError("a model needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.in_width < 1 or layer.out_width < 1:
                raise StructuralError(f"layer {i} has a non-positive width")
            if layer.activation not in ACTIVATIONS:
                raise StructuralError(f"layer {i} has unknown activation {layer.activation!r}")
            if layer.residual:
                if layer.in_width != layer.out_width:
                    raise StructuralError(
                        f"residual layer {i} maps {layer.in_width} -> {layer.out_width}"
                    )
                if layer.activation not in _RESIDUAL_ACTIVATIONS:
                    raise StructuralError(
                        f"residual layer {i} cannot use {layer.activation!r}"
                    )
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_width != b.in_width:
                raise StructuralError(
                    f"layer {i} outputs {a.out_width} but layer {i + 1} expects {b.in_width}"
                )

    @property
    def input_width(self) -> int:
        return self.layers[0].in_width

    @property
    def output_width(self) -> int:
        return self.layers[-1].out_width

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def layout(self) -> tuple[tuple[int, int], ...]:
        offsets, offset = [], 0
        for layer in self.layers:
            offsets.append((offset, layer.n_params))
            offset += layer.n_params
        return tuple(offsets)

    @classmethod
    def mlp(
        cls,
        widths: list[int],
        activations: list[str],
        residual: Optional[list[bool]] = None,
        seed: int = 0,
    ) -> "ModelSpec":
        """Chain ``widths[0] -> widths[1] -> ... -> widths[-1]``."""
        if len(activations) != len(widths) - 1:
            raise StructuralError("need one activation per layer")
        residual = residual or [False] * len(activations)
        layers = tuple(
            LayerSpec(widths[i], widths[i + 1], activations[i], residual[i])
            for i in range(len(activations))
        )
        return cls(layers=layers, seed=seed)


@dataclass
class ParameterVector:
    values: np.ndarray
    layout: tuple[tuple[int, int], ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        self.layout = tuple((int(o), int(n)) for o, n in self.layout)
        expected = sum(n for _, n in self.layout)
        if expected != self.values.size:
            raise StructuralError(
                f"layout covers {expected} values but the vector holds {self.values.size}"
            )

    def __len__(self) -> int:
        return self.values.size

    def layer(self, index: int) -> np.ndarray:
        offset, length = self.layout[index]
        return self.values[offset : offset + length]

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(values, self.layout)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass
class Batch:
    inputs: np.ndarray
    targets: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise StructuralError("a batch needs at least one row")
        if self.targets is not None:
            self.targets = np.asarray(self.targets)
            if self.targets.shape[0] != self.inputs.shape[0]:
                raise StructuralError("targets and inputs disagree on the batch size")

    @property
    def m(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ActivationTrace:
    """Everything backward needs: per-layer inputs and pre-activations."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    outputs: Optional[np.ndarray] = None


ScalarLoss = Callable[[np.ndarray, Batch], float]


# ─────────────────────────────────────────────────────────────────────────────
# Layout helpers
# ─────────────────────────────────────────────────────────────────────────────


def check_layout(a: ParameterVector, b: ParameterVector) -> None:
    if a.layout != b.layout:
        raise StructuralError("parameter vectors have different layouts")


def _check_params(spec: ModelSpec, params: ParameterVector) -> None:
    if params.layout != spec.layout():
        raise StructuralError("parameter layout does not match the model spec")


def layer_weights(spec: ModelSpec, params: ParameterVector, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Views ``(W, b)`` of layer ``index``; W has shape (in_width, out_width)."""
    layer = spec.layers[index]
    chunk = params.layer(index)
    n_w = layer.in_width * layer.out_width
    return chunk[:n_w].reshape(layer.in_width, layer.out_width), chunk[n_w:]


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _activation_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    return np.ones_like(z)


# ─────────────────────────────────────────────────────────────────────────────
# Operations
# ─────────────────────────────────────────────────────────────────────────────


def init_params(spec: ModelSpec, seed: Optional[int] = None) -> ParameterVector:
    """Glorot-uniform weights, zero biases. ``seed`` defaults to ``spec.seed``."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    chunks = []
    for layer in spec.layers:
        limit = np.sqrt(6.0 / (layer.in_width + layer.out_width))
        chunks.append(rng.uniform(-limit, limit, size=layer.in_width * layer.out_width))
        chunks.append(np.zeros(layer.out_width))
    return ParameterVector(np.concatenate(chunks), spec.layout())


def zeros_like_spec(spec: ModelSpec) -> ParameterVector:
    return ParameterVector(np.zeros(spec.n_params), spec.layout())


def forward(spec: ModelSpec, params: ParameterVector, batch: Batch) -> ActivationTrace:
    _check_params(spec, params)
    x = batch.inputs
    if x.shape[1] != spec.input_width:
        raise StructuralError(
            f"batch rows have width {x.shape[1]}, the model expects {spec.input_width}"
        )
    trace = ActivationTrace()
    for i, layer in enumerate(spec.layers):
        w, b = layer_weights(spec, params, i)
        z = x @ w + b
        trace.inputs.append(x)
        trace.pre_activations.append(z)
        a = _activate(layer.activation, z)
        x = x + a if layer.residual else a
    trace.outputs = x
    return trace


def predict(spec: ModelSpec, params: ParameterVector, inputs: np.ndarray) -> np.ndarray:
    return forward(spec, params, Batch(inputs)).outputs


def backward_full(
    spec: ModelSpec,
    params: ParameterVector,
    trace: ActivationTrace,
    loss_grad: np.ndarray,
) -> tuple[ParameterVector, np.ndarray]:
    """Parameter gradient plus the gradient w.r.t. the network input."""
    _check_params(spec, params)
    if len(trace.inputs) != len(spec.layers) or trace.outputs is None:
        raise StructuralError("activation trace does not belong to this model")
    upstream = np.asarray(loss_grad, dtype=np.float64)
    if upstream.size != trace.outputs.size:
        raise StructuralError(
            f"loss gradient has {upstream.size} entries, outputs have {trace.outputs.size}"
        )
    upstream = upstream.reshape(trace.outputs.shape)

    grad = np.zeros(len(params))
    for i in reversed(range(len(spec.layers))):
        layer = spec.layers[i]
        w, _ = layer_weights(spec, params, i)
        x, z = trace.inputs[i], trace.pre_activations[i]
        dz = upstream * _activation_grad(layer.activation, z)
        offset, length = params.layout[i]
        n_w = layer.in_width * layer.out_width
        grad[offset : offset + n_w] = (x.T @ dz).reshape(-1)
        grad[offset + n_w : offset + length] = dz.sum(axis=0)
        dx = dz @ w.T
        upstream = dx + upstream if layer.residual else dx
    return ParameterVector(grad, params.layout), upstream


def backward(
    spec: ModelSpec,
    params: ParameterVector,
    trace: ActivationTrace,
    loss_grad: np.ndarray,
) -> ParameterVector:
    return backward_full(spec, params, trace, loss_grad)[0]


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences ``(fn(x + h e_i) - fn(x - h e_i)) / 2h``."""
    if h <= 0:
        raise ParameterError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        original = x.flat[i]
        x.flat[i] = original + h
        plus = fn(x)
        x.flat[i] = original - h
        minus = fn(x)
        x.flat[i] = original
        grad.flat[i] = (plus - minus) / (2.0 * h)
    return grad


def finite_diff_grad(
    spec: ModelSpec,
    params: ParameterVector,
    batch: Batch,
    loss: ScalarLoss,
    h: float = 1e-4,
) -> ParameterVector:
    _check_params(spec, params)

    def objective(values: np.ndarray) -> float:
        outputs = forward(spec, params.with_values(values), batch).outputs
        return float(loss(outputs, batch))

    return params.with_values(numeric_gradient(objective, params.values, h))


def sgd_step(params: ParameterVector, grad: ParameterVector, alpha: float) -> ParameterVector:
    check_layout(params, grad)
    if alpha < 0:
        raise ParameterError(f"learning rate must be non-negative, got {alpha}")
    return params.with_values(params.values - alpha * grad.values)


# ─────────────────────────────────────────────────────────────────────────────
# Checkpoint format: u64 layer count, (u64 offset, u64 length) per layer,
# then the values as little-endian float64.
# ─────────────────────────────────────────────────────────────────────────────


def encode_params(params: ParameterVector) -> bytes:
    table = np.array([len(params.layout)] + [v for pair in params.layout for v in pair], dtype="<u8")
    return table.tobytes() + params.values.astype("<f8").tobytes()


def decode_params(data: Union[bytes, memoryview], offset: int = 0) -> tuple[ParameterVector, int]:
    """Decode one vector starting at ``offset``; returns it and the end offset."""
    data = memoryview(data)
    try:
        (n_layers,) = struct.unpack_from("<Q", data, offset)
    except struct.error as e:
        raise StructuralError(f"truncated parameter vector: {e}") from e
    pos = offset + 8
    if n_layers > (len(data) - pos) // 16:
        raise StructuralError(f"layout table of {n_layers} layers runs past the end of the data")
    table = np.frombuffer(data, dtype="<u8", count=2 * n_layers, offset=pos)
    pos += 16 * n_layers
    layout = tuple((int(table[2 * i]), int(table[2 * i + 1])) for i in range(n_layers))

    total = 0
    for layer_offset, length in layout:
        if layer_offset != total:
            raise StructuralError(f"layer at offset {layer_offset}, expected {total}")
        total += length
    if total > (len(data) - pos) // 8:
        raise StructuralError(f"truncated parameter vector: {total} values announced")
    values = np.frombuffer(data, dtype="<f8", count=total, offset=pos).astype(np.float64)
    return ParameterVector(values, layout), pos + 8 * total


def save_params(params: ParameterVector, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_params(params))


def load_params(path: Union[str, Path]) -> ParameterVector:
    params, _ = decode_params(Path(path).read_bytes())
    return params
