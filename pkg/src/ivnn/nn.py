"""Feedforward parametrization: delay line, fixed basis transform and a small MLP.

Parameters are flattened layer by layer, each layer contributing its weight
matrix in row-major order followed by its bias vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, LengthMismatch
from .signals import Signal, delay_matrix

FORMAT_NAME = "ivnn-mlp"
FORMAT_VERSION = 1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    "sigmoid": (_sigmoid, lambda a, h: h * (1.0 - h)),
}


@dataclass(frozen=True)
class MlpShape:
    """Layer sizes ``(n_0, ..., n_L)`` plus the fixed input transform."""

    sizes: tuple
    activation: str = "tanh"
    basis: np.ndarray | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        basis = np.eye(sizes[0]) if self.basis is None else np.array(self.basis, dtype=float)
        if basis.shape != (sizes[0], sizes[0]):
            raise DimensionMismatch(f"basis must be {sizes[0]}x{sizes[0]}, got {basis.shape}")
        basis.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "basis", basis)

    @property
    def input_delay(self) -> int:
        return self.sizes[0] - 1

    @property
    def n_phi(self) -> int:
        return sum(n * m + n for m, n in zip(self.sizes[:-1], self.sizes[1:]))

    def layer_slices(self):
        """Yield ``(weight_slice, bias_slice, (rows, cols))`` for each layer."""
        offset = 0
        for m, n in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(offset, offset + n * m)
            b = slice(offset + n * m, offset + n * m + n)
            offset += n * m + n
            yield w, b, (n, m)

    def weight_index(self, layer: int, row: int, col: int) -> int:
        """Flat index of ``W^layer[row, col]`` (all indices 0-based)."""
        w, _, (n, m) = list(self.layer_slices())[layer]
        if not (0 <= row < n and 0 <= col < m):
            raise IndexError(f"({row}, {col}) outside layer {layer} weight of shape {(n, m)}")
        return w.start + row * m + col


@dataclass(frozen=True)
class MlpParams:
    shape: MlpShape
    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws, bs = [], []
        for (_, _, (n, m)), W, b in zip(self.shape.layer_slices(), self.weights, self.biases, strict=True):
            W = np.array(W, dtype=float)
            b = np.array(b, dtype=float).reshape(-1)
            if W.shape != (n, m) or b.shape != (n,):
                raise DimensionMismatch(f"layer expects W {(n, m)} and b {(n,)}, got {W.shape} and {b.shape}")
            W.setflags(write=False)
            b.setflags(write=False)
            ws.append(W)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def n_phi(self) -> int:
        return self.shape.n_phi

    @property
    def basis(self) -> np.ndarray:
        return self.shape.basis

    def flatten(self) -> np.ndarray:
        return flatten(self)

    def with_flat(self, vector) -> "MlpParams":
        return unflatten(vector, self.shape)


def flatten(phi: MlpParams) -> np.ndarray:
    parts = []
    for W, b in zip(phi.weights, phi.biases):
        parts += [W.ravel(), b]
    return np.concatenate(parts)


def unflatten(vector, shape: MlpShape) -> MlpParams:
    v = np.asarray(vector, dtype=float).reshape(-1)
    if v.size != shape.n_phi:
        raise LengthMismatch(f"expected {shape.n_phi} parameters, got {v.size}")
    ws, bs = [], []
    for w, b, dims in shape.layer_slices():
        ws.append(v[w].reshape(dims))
        bs.append(v[b])
    return MlpParams(shape, tuple(ws), tuple(bs))


def init_params(shape: MlpShape, seed: int) -> MlpParams:
    """Gaussian weights with std ``fan_in**-0.5`` and zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for _, _, (n, m) in shape.layer_slices():
        ws.append(rng.standard_normal((n, m)) / np.sqrt(m))
        bs.append(np.zeros(n))
    return MlpParams(shape, tuple(ws), tuple(bs))


def _inputs(phi: MlpParams, windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 1:
        windows = windows[None, :]
    if windows.shape[1] != phi.shape.sizes[0]:
        raise DimensionMismatch(f"window length {windows.shape[1]} != {phi.shape.sizes[0]}")
    return windows @ phi.basis.T


def _forward_layers(phi: MlpParams, x: np.ndarray):
    """Hidden activations ``[h^0, ..., h^{L-1}]`` and the output column."""
    act, _ = ACTIVATIONS[phi.shape.activation]
    hs = [x]
    h = x
    last = len(phi.weights) - 1
    for i, (W, b) in enumerate(zip(phi.weights, phi.biases)):
        a = h @ W.T + b
        if i == last:
            return hs, a[:, 0] if a.shape[1] == 1 else a
        h = act(a)
        hs.append(h)
    raise AssertionError("unreachable")


def forward_windows(phi: MlpParams, windows) -> np.ndarray:
    """Network output for each row of ``windows`` (delay-line vectors)."""
    _, out = _forward_layers(phi, _inputs(phi, windows))
    return out


def forward(phi: MlpParams, window) -> float:
    window = np.asarray(window, dtype=float)
    if window.ndim != 1:
        raise DimensionMismatch("window must be a vector")
    return float(forward_windows(phi, window)[0])


def forward_signal(phi: MlpParams, s: Signal) -> Signal:
    return Signal(forward_windows(phi, delay_matrix(s, phi.shape.input_delay)), s.ts)


def jacobian_windows(phi: MlpParams, windows) -> tuple[np.ndarray, np.ndarray]:
    """Per-window output and gradient w.r.t. the flat parameters (reverse mode)."""
    if phi.shape.sizes[-1] != 1:
        raise DimensionMismatch("parameter Jacobian is defined for scalar-output networks")
    _, dact = ACTIVATIONS[phi.shape.activation]
    hs, out = _forward_layers(phi, _inputs(phi, windows))
    n = hs[0].shape[0]
    J = np.empty((n, phi.n_phi))
    slices = list(phi.shape.layer_slices())
    delta = np.ones((n, 1))
    for l in range(len(phi.weights) - 1, -1, -1):
        w, b, (rows, cols) = slices[l]
        h_in = hs[l]
        J[:, w] = (delta[:, :, None] * h_in[:, None, :]).reshape(n, rows * cols)
        J[:, b] = delta
        if l > 0:
            delta = (delta @ phi.weights[l]) * dact(None, h_in)
    return out, J


def param_jacobian(phi: MlpParams, s: Signal) -> np.ndarray:
    """``N x n_phi`` matrix whose row k is the gradient of ``F_phi`` at window k."""
    _, J = jacobian_windows(phi, delay_matrix(s, phi.shape.input_delay))
    return J


def save_params(phi: MlpParams, path, extra: dict | None = None):
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "sizes": list(phi.shape.sizes),
        "activation": phi.shape.activation,
        "input_delay": phi.shape.input_delay,
        "basis": phi.basis.tolist(),
        "n_phi": phi.n_phi,
        "flat": flatten(phi).tolist(),
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_params(path) -> MlpParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"{path} is not a parameter file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported parameter file version {doc.get('version')}")
    shape = MlpShape(tuple(doc["sizes"]), doc["activation"], np.array(doc["basis"]))
    return unflatten(np.array(doc["flat"], dtype=float), shape)
