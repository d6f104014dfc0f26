"""Dense and TT fully connected networks with exact backpropagation.

A TT layer stores its weight as a :class:`~lrtt.tt.TTMatrix`; the forward
pass contracts the input one core at a time and the backward pass runs the
same contractions in reverse, giving exact gradients for every core entry.
Biases are plain vectors. Output layers use ``identity`` activation; for
cross-entropy the softmax lives in the loss.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, LabelMismatch, ShapeMismatch
from .tt import TTMatrix, check_factorization, check_ranks, param_count, tt_matrix_full

ACTIVATIONS = ("relu", "identity")
LOSSES = ("mae", "cross_entropy")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch(f"weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> list:
        return [self.weight, self.bias]

    def n_params(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class TTLayer:
    weight: TTMatrix
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.weight.n_rows,):
            raise ShapeMismatch(f"bias length {self.bias.shape} != {self.weight.n_rows}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.n_cols

    @property
    def out_dim(self) -> int:
        return self.weight.n_rows

    def parameters(self) -> list:
        return list(self.weight.cores) + [self.bias]

    def n_params(self) -> int:
        return param_count(self.weight) + self.bias.size


Layer = Union[DenseLayer, TTLayer]


@dataclass
class Network:
    layers: list
    loss_kind: str = "cross_entropy"

    def __post_init__(self):
        if self.loss_kind not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss_kind!r}")
        if not self.layers:
            raise ShapeMismatch("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeMismatch(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.parameters()]

    def parameter_names(self) -> list[str]:
        names = []
        for n, layer in enumerate(self.layers):
            if isinstance(layer, TTLayer):
                names += [f"layer{n}.core{k}" for k in range(layer.weight.order)]
            else:
                names.append(f"layer{n}.weight")
            names.append(f"layer{n}.bias")
        return names

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)

    def copy(self) -> "Network":
        return copy.deepcopy(self)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    kind: str = "classification"  # or "regression"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.kind == "classification":
            self.y = np.asarray(self.y, dtype=np.int64)
        elif self.kind == "regression":
            self.y = np.asarray(self.y, dtype=np.float64)
            if self.y.ndim == 1:
                self.y = self.y[:, None]
        else:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.x.ndim != 2 or len(self.x) != len(self.y) or len(self.x) == 0:
            raise ShapeMismatch("dataset needs a non-empty (n, d) input and n targets")

    def __len__(self):
        return len(self.x)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.kind)


# -- forward / backward -----------------------------------------------------

def _act(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else z


def _tt_forward(w: TTMatrix, x: np.ndarray):
    b = x.shape[0]
    t = x.reshape(b, 1, 1, -1)
    states = []
    for c in w.cores:
        j, i, rl, rr = c.shape
        t_in = t.reshape(b, t.shape[1], rl, i, -1)
        states.append(t_in)
        t = np.einsum("bpaiq,jiac->bpjcq", t_in, c, optimize=True)
        t = t.reshape(b, t_in.shape[1] * j, rr, -1)
    return t.reshape(b, -1), states


def _tt_backward(w: TTMatrix, states, dy: np.ndarray):
    b = dy.shape[0]
    grads = [None] * w.order
    d = None
    for k in range(w.order - 1, -1, -1):
        c = w.cores[k]
        j, i, rl, rr = c.shape
        t_in = states[k]
        out_shape = (b, t_in.shape[1], j, rr, t_in.shape[4])
        d = dy.reshape(out_shape) if d is None else d.reshape(out_shape)
        grads[k] = np.einsum("bpaiq,bpjcq->jiac", t_in, d, optimize=True)
        d = np.einsum("bpjcq,jiac->bpaiq", d, c, optimize=True)
    return grads, d.reshape(b, -1)


def _layer_forward(layer: Layer, x: np.ndarray):
    if isinstance(layer, TTLayer):
        z, states = _tt_forward(layer.weight, x)
    else:
        z, states = x @ layer.weight.T, None
    z = z + layer.bias
    return _act(z, layer.activation), (x, z, states)


def _check_input(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.in_dim:
        raise ShapeMismatch(f"input of shape {x.shape} does not match input dim {net.in_dim}")
    return xb, single


def layer_forward(layer: Layer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != layer.in_dim:
        raise ShapeMismatch(f"input length {xb.shape[1]} != {layer.in_dim}")
    y, _ = _layer_forward(layer, xb)
    return y[0] if single else y


tt_layer_forward = layer_forward


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def network_forward(net: Network, x, probabilities: bool = False) -> np.ndarray:
    xb, single = _check_input(net, x)
    for layer in net.layers:
        xb, _ = _layer_forward(layer, xb)
    if probabilities:
        if net.loss_kind != "cross_entropy":
            raise ConfigError("probabilities are only defined for cross-entropy networks")
        xb = softmax(xb)
    return xb[0] if single else xb


def _loss_and_output_grad(net: Network, out: np.ndarray, y: np.ndarray):
    b = out.shape[0]
    if net.loss_kind == "mae":
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None] if out.shape[1] == 1 else y[None, :]
        if y.shape != out.shape:
            raise LabelMismatch(f"targets {y.shape} do not match outputs {out.shape}")
        diff = out - y
        # np.sign(0) == 0 fixes the subgradient at the kink
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != b or not np.issubdtype(y.dtype, np.integer):
        raise LabelMismatch("cross-entropy needs one integer label per sample")
    if y.min() < 0 or y.max() >= out.shape[1]:
        raise LabelMismatch(f"labels must lie in [0, {out.shape[1]})")
    z = out - out.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=1))
    loss = float(np.mean(lse - z[np.arange(b), y]))
    grad = softmax(out)
    grad[np.arange(b), y] -= 1.0
    return loss, grad / b


def loss_and_gradients(net: Network, x, y):
    """Mean loss over the batch and its gradient for every parameter.

    Gradients are returned in the order of ``net.parameters()``.
    """
    xb, _ = _check_input(net, x)
    caches = []
    h = xb
    for layer in net.layers:
        h, cache = _layer_forward(layer, h)
        caches.append(cache)
    loss, d = _loss_and_output_grad(net, h, y)

    grads = []
    for layer, (x_in, z, states) in zip(reversed(net.layers), reversed(caches)):
        if layer.activation == "relu":
            d = d * (z > 0)
        db = d.sum(axis=0)
        if isinstance(layer, TTLayer):
            core_grads, d = _tt_backward(layer.weight, states, d)
            grads.append(core_grads + [db])
        else:
            grads.append([d.T @ x_in, db])
            d = d @ layer.weight
    return loss, [g for layer_grads in reversed(grads) for g in layer_grads]


def evaluate(net: Network, data: Dataset) -> dict:
    out = network_forward(net, data.x)
    loss, _ = _loss_and_output_grad(net, out, data.y)
    metrics = {"loss": loss}
    if net.loss_kind == "cross_entropy":
        metrics["accuracy"] = float(np.mean(np.argmax(out, axis=1) == data.y))
    return metrics


def densify(net: Network) -> Network:
    """Equivalent network with every TT weight reconstructed as a dense matrix."""
    layers = []
    for layer in net.layers:
        if isinstance(layer, TTLayer):
            layer = DenseLayer(tt_matrix_full(layer.weight), layer.bias.copy(), layer.activation)
        else:
            layer = copy.deepcopy(layer)
        layers.append(layer)
    return Network(layers, net.loss_kind)


# -- construction -----------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One layer of an architecture.

    For ``kind == "tt"`` the factorizations define the dims; for ``"dense"``
    ``in_dim``/``out_dim`` do.
    """
    kind: str
    activation: str = "relu"
    in_factors: tuple = ()
    out_factors: tuple = ()
    in_dim: int = 0
    out_dim: int = 0

    @property
    def dims(self) -> tuple[int, int]:
        if self.kind == "tt":
            return int(np.prod(self.in_factors)), int(np.prod(self.out_factors))
        return self.in_dim, self.out_dim


def tt_spec(in_factors, out_factors, activation="relu") -> LayerSpec:
    return LayerSpec("tt", activation, check_factorization(in_factors),
                     check_factorization(out_factors))


def dense_spec(in_dim, out_dim, activation="relu") -> LayerSpec:
    return LayerSpec("dense", activation, in_dim=int(in_dim), out_dim=int(out_dim))


@dataclass(frozen=True)
class Architecture:
    layers: tuple
    loss_kind: str = "cross_entropy"


def glorot_tt_cores(out_f, in_f, ranks, rng: np.random.Generator) -> TTMatrix:
    """Random TT weight whose dense entries have Glorot-uniform variance.

    Every core is uniform in ``±sqrt(3 v)`` with ``v`` chosen so that the
    product over cores and rank paths has variance ``2 / (fan_in + fan_out)``.
    """
    ranks = check_ranks(ranks, len(in_f))
    fan_in, fan_out = int(np.prod(in_f)), int(np.prod(out_f))
    target_var = 2.0 / (fan_in + fan_out)
    paths = float(np.prod(ranks[1:-1]))
    v = (target_var / paths) ** (1.0 / len(in_f))
    lim = math.sqrt(3.0 * v)
    cores = [rng.uniform(-lim, lim, size=(j, i, ranks[k], ranks[k + 1]))
             for k, (j, i) in enumerate(zip(out_f, in_f))]
    return TTMatrix(tuple(cores))


def build_network(arch: Architecture, ranks: Sequence[int], seed: int) -> Network:
    """Randomly initialised network; every TT layer gets the same rank profile."""
    rng = np.random.default_rng(seed)
    layers = []
    for spec in arch.layers:
        n_in, n_out = spec.dims
        if spec.kind == "tt":
            w = glorot_tt_cores(spec.out_factors, spec.in_factors, ranks, rng)
            layers.append(TTLayer(w, np.zeros(n_out), spec.activation))
        elif spec.kind == "dense":
            lim = math.sqrt(6.0 / (n_in + n_out))
            layers.append(DenseLayer(rng.uniform(-lim, lim, size=(n_out, n_in)), np.zeros(n_out),
                                     spec.activation))
        else:
            raise ConfigError(f"unknown layer kind {spec.kind!r}")
    return Network(layers, arch.loss_kind)


def dense_to_tt_layer(layer: DenseLayer, in_f, out_f, cap) -> TTLayer:
    from .tt import tt_matrix_from_dense

    w = tt_matrix_from_dense(layer.weight, in_f, out_f, cap)
    return TTLayer(w, layer.bias.copy(), layer.activation)


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    freeze_non_tt: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float | None = None
    val_loss: float | None = None
    val_accuracy: float | None = None

    def line(self) -> str:
        parts = [f"epoch={self.epoch}", f"train_loss={self.train_loss!r}"]
        for key in ("train_accuracy", "val_loss", "val_accuracy"):
            val = getattr(self, key)
            if val is not None:
                parts.append(f"{key}={val!r}")
        return " ".join(parts)


def _trainable(net: Network, freeze_non_tt: bool) -> list[bool]:
    flags = []
    for layer in net.layers:
        is_tt = isinstance(layer, TTLayer)
        for p in layer.parameters():
            flags.append(is_tt and p is not layer.bias or not freeze_non_tt)
    return flags


def _record(net: Network, epoch: int, train: Dataset, val: Dataset | None) -> EpochRecord:
    m = evaluate(net, train)
    rec = EpochRecord(epoch, m["loss"], m.get("accuracy"))
    if val is not None:
        mv = evaluate(net, val)
        rec.val_loss, rec.val_accuracy = mv["loss"], mv.get("accuracy")
    return rec


def train(net: Network, data: Dataset, cfg: TrainConfig, val: Dataset | None = None):
    """Minibatch SGD or Adam; returns ``(trained_copy, history)``.

    ``history`` holds one :class:`EpochRecord` per epoch with metrics over
    the full training (and validation) set after that epoch's updates.
    All randomness comes from ``cfg.seed``.
    """
    cfg.validate()
    if data.x.shape[1] != net.in_dim:
        raise ShapeMismatch(f"data dim {data.x.shape[1]} != network input {net.in_dim}")
    net = net.copy()
    params = net.parameters()
    trainable = _trainable(net, cfg.freeze_non_tt)
    rng = np.random.default_rng(cfg.seed)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    history = []
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads = loss_and_gradients(net, data.x[idx], data.y[idx])
            step += 1
            for p, g, mk, vk, on in zip(params, grads, m, v, trainable):
                if not on:
                    continue
                if cfg.optimizer == "sgd":
                    p -= cfg.learning_rate * g
                else:
                    mk *= cfg.beta1
                    mk += (1 - cfg.beta1) * g
                    vk *= cfg.beta2
                    vk += (1 - cfg.beta2) * g * g
                    mhat = mk / (1 - cfg.beta1 ** step)
                    vhat = vk / (1 - cfg.beta2 ** step)
                    p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        history.append(_record(net, epoch, data, val))
    return net, history
