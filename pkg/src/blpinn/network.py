"""Dense feed-forward networks.

Parameters live in float64 numpy arrays. The same network can be evaluated
on a :class:`~blpinn.autodiff.ScalarTape` (one point at a time, used for
exact derivative checks) or as a batch through torch (used for training).
Torch views share memory with the numpy arrays, so optimizer updates made
through them are visible on the :class:`DenseNet` without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import autodiff as ad
from .errors import ConfigError

ACTIVATIONS = ("tanh", "sigmoid")

DEFAULT_HIDDEN = (20,) * 8


@dataclass(frozen=True)
class NetSpec:
    input_dim: int = 2
    layer_widths: tuple[int, ...] = DEFAULT_HIDDEN + (1,)
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.input_dim <= 0:
            raise ConfigError("input_dim must be positive")
        if not self.layer_widths:
            raise ConfigError("layer_widths must be nonempty")
        if any(w <= 0 for w in self.layer_widths):
            raise ConfigError(f"layer widths must be positive, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    def shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim,) + self.layer_widths
        return [(dims[i + 1], dims[i]) for i in range(len(self.layer_widths))]

    def n_params(self) -> int:
        return sum(r * c + r for r, c in self.shapes())


@dataclass
class DenseNet:
    spec: NetSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    frozen: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.frozen:
            self.frozen = [False] * len(self.weights)
        for (r, c), w, b in zip(self.spec.shapes(), self.weights, self.biases):
            if w.shape != (r, c) or b.shape != (r,):
                raise ConfigError(f"parameter shapes {w.shape}/{b.shape} do not match spec {(r, c)}")

    @property
    def depth(self) -> int:
        """Number of hidden layers (the freezable ones)."""
        return self.spec.n_hidden

    def copy(self) -> DenseNet:
        return DenseNet(self.spec, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], list(self.frozen))

    def n_trainable(self) -> int:
        return sum(w.size + b.size for w, b, f in
                   zip(self.weights, self.biases, self.frozen) if not f)

    def torch_layers(self) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """Torch views of (W, b) per layer; trainable ones require grad."""
        layers = []
        for w, b, f in zip(self.weights, self.biases, self.frozen):
            tw, tb = torch.from_numpy(w), torch.from_numpy(b)
            if not f:
                tw.requires_grad_(True)
                tb.requires_grad_(True)
            layers.append((tw, tb))
        return layers


def init_xavier(spec: NetSpec) -> DenseNet:
    """Glorot-uniform weights, zero biases, reproducible from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for rows, cols in spec.shapes():
        limit = np.sqrt(6.0 / (cols + rows))
        weights.append(rng.uniform(-limit, limit, size=(rows, cols)))
        biases.append(np.zeros(rows))
    return DenseNet(spec, weights, biases)


def _activate(name, v):
    if name == "tanh":
        return ad.tanh(v)
    return ad.sigmoid(v)


def forward(net: DenseNet, inputs: Sequence[ad.TapeVar], params=None) -> list[ad.TapeVar]:
    """Evaluate the network on tape variables.

    ``params`` optionally replaces the numpy parameters with tape variables
    (as returned by :func:`tape_params`) so the output can be differentiated
    with respect to weights. Returns one variable per output unit.
    """
    if len(inputs) != net.spec.input_dim:
        raise ValueError(f"expected {net.spec.input_dim} inputs, got {len(inputs)}")
    layers = params if params is not None else list(zip(net.weights, net.biases))
    h = list(inputs)
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        rows = len(b)
        nxt = []
        for j in range(rows):
            acc = b[j]
            wj = w[j]
            for i, hi in enumerate(h):
                acc = hi * wj[i] + acc
            nxt.append(acc if k == last else _activate(net.spec.activation, acc))
        h = nxt
    return h


def tape_params(net: DenseNet, tape: ad.ScalarTape):
    """Lift every parameter onto ``tape`` as an input variable."""
    out = []
    for w, b in zip(net.weights, net.biases):
        tw = [[tape.var(float(v)) for v in row] for row in w]
        tb = [tape.var(float(v)) for v in b]
        out.append((tw, tb))
    return out


def torch_forward(layers, x: torch.Tensor, activation: str = "tanh") -> torch.Tensor:
    """Batch forward pass: ``x`` is (N, input_dim), result is (N, output_dim)."""
    act = torch.tanh if activation == "tanh" else torch.sigmoid
    h = x
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        h = torch.addmm(b, h, w.T)
        if k != last:
            h = act(h)
    return h


def predict(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Numpy convenience wrapper around :func:`torch_forward` (no grad)."""
    with torch.no_grad():
        layers = [(torch.from_numpy(w), torch.from_numpy(b))
                  for w, b in zip(net.weights, net.biases)]
        out = torch_forward(layers, torch.as_tensor(np.asarray(x, dtype=np.float64)),
                            net.spec.activation)
    return out.numpy()


def set_frozen(net: DenseNet, first_k_layers: int) -> DenseNet:
    """Return a copy whose first ``first_k_layers`` hidden layers are frozen.

    The output layer is never frozen.
    """
    if first_k_layers < 0 or first_k_layers > net.depth:
        raise ConfigError(f"cannot freeze {first_k_layers} layers of a {net.depth}-hidden-layer net")
    out = net.copy()
    out.frozen = [i < first_k_layers for i in range(len(net.weights))]
    return out


def flatten_params(net: DenseNet) -> np.ndarray:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def load_params(net: DenseNet, vec: np.ndarray) -> DenseNet:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (net.spec.n_params(),):
        raise ConfigError(f"parameter vector has length {vec.size}, expected {net.spec.n_params()}")
    out = net.copy()
    pos = 0
    for k, (rows, cols) in enumerate(net.spec.shapes()):
        out.weights[k] = vec[pos:pos + rows * cols].reshape(rows, cols).copy()
        pos += rows * cols
        out.biases[k] = vec[pos:pos + rows].copy()
        pos += rows
    return out


def assign_params(net: DenseNet, vec: np.ndarray) -> None:
    """In-place variant of :func:`load_params` (keeps torch views valid)."""
    src = load_params(net, vec)
    for w, b, sw, sb in zip(net.weights, net.biases, src.weights, src.biases):
        w[...] = sw
        b[...] = sb


def save_checkpoint(net: DenseNet, path) -> None:
    """Plain-text checkpoint: one header line, then one value per line."""
    spec = net.spec
    header = (
        f"densenet input_dim={spec.input_dim}"
        f" widths={','.join(map(str, spec.layer_widths))}"
        f" activation={spec.activation}"
        f" frozen={','.join('1' if f else '0' for f in net.frozen)}"
        f" seed={spec.seed}"
    )
    lines = [header] + [format(v, ".17g") for v in flatten_params(net)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> DenseNet:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("densenet "):
        raise ConfigError(f"{path}: not a network checkpoint")
    fields = dict(item.split("=", 1) for item in text[0].split()[1:])
    try:
        spec = NetSpec(
            input_dim=int(fields["input_dim"]),
            layer_widths=tuple(int(w) for w in fields["widths"].split(",")),
            activation=fields["activation"],
            seed=int(fields.get("seed", 0)),
        )
        frozen = [f == "1" for f in fields["frozen"].split(",")]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed checkpoint header") from exc
    vec = np.array([float(v) for v in text[1:] if v.strip()])
    net = load_params(init_xavier(spec), vec)
    net.frozen = frozen
    return net
