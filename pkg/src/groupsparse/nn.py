"""Dense feed-forward networks with explicit reverse-mode gradients.

All numerics are 64-bit floats. The first layer is always bias-free so
that zeroing a group's weight rows disconnects the group completely;
the output layer is linear (losses apply their own link function).

A Network is single-writer: one training loop mutates it at a time.
It can be handed between threads when not being mutated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grouping import GroupPartition, SparsityMask

__all__ = [
    "ACTIVATIONS",
    "DenseLayer",
    "Network",
    "Gradients",
    "ForwardPass",
    "init_network",
    "forward",
    "backward",
    "apply_update",
    "masked_forward",
    "save_snapshot",
    "load_snapshot",
    "SNAPSHOT_FORMAT",
]

ACTIVATIONS = ("relu", "sigmoid", "identity")

SNAPSHOT_FORMAT = "groupsparse-net/1"


def _apply_activation(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        # stable in both tails
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if kind == "identity":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _activation_backward(kind: str, pre: np.ndarray, post: np.ndarray, grad_post: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return grad_post * (pre > 0)
    if kind == "sigmoid":
        return grad_post * post * (1.0 - post)
    if kind == "identity":
        return grad_post
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray | None  # (fan_out,) or None
    activation: str

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]


@dataclass
class Network:
    layers: list[DenseLayer]
    sparse: SparsityMask | None = None  # shared with the training loop

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def first_hidden_dim(self) -> int:
        return self.layers[0].fan_out

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [layer.fan_out for layer in self.layers]

    @property
    def partition(self) -> GroupPartition | None:
        return self.sparse.partition if self.sparse is not None else None

    def num_params(self) -> int:
        return sum(
            layer.weights.size + (layer.bias.size if layer.bias is not None else 0)
            for layer in self.layers
        )

    def attach_partition(self, part: GroupPartition) -> SparsityMask:
        """Bind a group partition (fresh, all-live mask) or return the bound one."""
        if part.p != self.input_dim:
            raise ValueError(f"partition width {part.p} != network input dim {self.input_dim}")
        if self.sparse is None:
            self.sparse = SparsityMask(part)
        elif self.sparse.partition != part:
            raise ValueError("network already carries a different partition")
        return self.sparse


@dataclass
class Gradients:
    """Per-layer gradients, shaped exactly like the network parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray | None] = field(default_factory=list)


@dataclass
class ForwardPass:
    """Everything backward() needs: the batch plus per-layer pre/post activations."""

    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def outputs(self) -> np.ndarray:
        return self.post[-1]


def init_network(
    layer_dims,
    activation: str = "relu",
    seed: int = 0,
    partition: GroupPartition | None = None,
) -> Network:
    """Build a network with the given layer widths.

    ``layer_dims`` runs input -> hidden... -> output, so it needs at least
    two entries. Weights are drawn uniformly from [-1/sqrt(fan_in),
    +1/sqrt(fan_in)] per layer, deterministically for a fixed seed. Hidden
    layers use ``activation``; the output layer is linear. The first layer
    has no bias; later biases start at zero.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError("layer_dims needs an input and an output width")
    if any(d < 1 for d in dims):
        raise ValueError(f"layer dimensions must be >= 1, got {dims}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    rng = np.random.default_rng(seed)
    layers: list[DenseLayer] = []
    n_layers = len(dims) - 1
    for j in range(n_layers):
        fan_in, fan_out = dims[j], dims[j + 1]
        scale = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-scale, scale, size=(fan_in, fan_out))
        bias = None if j == 0 else np.zeros(fan_out)
        act = "identity" if j == n_layers - 1 else activation
        layers.append(DenseLayer(weights=w, bias=bias, activation=act))
    net = Network(layers=layers)
    if partition is not None:
        net.attach_partition(partition)
    return net


def _check_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ValueError(
            f"batch shape {batch.shape} does not match network input dim {net.input_dim}"
        )
    return batch


def forward(net: Network, batch: np.ndarray) -> ForwardPass:
    """Run the network, keeping every intermediate needed by backward()."""
    a = _check_batch(net, batch)
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = []
    for layer in net.layers:
        z = a @ layer.weights
        if layer.bias is not None:
            z = z + layer.bias
        a = _apply_activation(layer.activation, z)
        pre.append(z)
        post.append(a)
    return ForwardPass(inputs=np.asarray(batch, dtype=np.float64), pre=pre, post=post)


def _run_from_first_preact(net: Network, z1: np.ndarray) -> np.ndarray:
    """Finish a forward pass given the first layer's pre-activation."""
    a = _apply_activation(net.layers[0].activation, z1)
    for layer in net.layers[1:]:
        z = a @ layer.weights
        if layer.bias is not None:
            z = z + layer.bias
        a = _apply_activation(layer.activation, z)
    return a


def masked_forward(
    net: Network,
    part: GroupPartition,
    i: int,
    batch: np.ndarray,
    first_preact: np.ndarray | None = None,
) -> np.ndarray:
    """Final scores with group i disconnected from the first layer.

    Because the first layer is linear and bias-free, this equals a full
    forward pass with group i's weight rows zeroed (or, equivalently, with
    the group's input columns zeroed); the network itself is never copied.
    The default path zeroes the batch columns, which reproduces the
    zeroed-rows clone bit-for-bit. ``first_preact`` optionally supplies a
    precomputed ``batch @ W0`` so training loops can share it with
    forward(); that path subtracts the group's contribution instead and
    may differ from the clone by one unit in the last place.
    """
    cols = part.columns(i)
    if first_preact is None:
        batch = _check_batch(net, batch)
        masked = batch.copy()
        masked[:, cols] = 0.0
        z1 = masked @ net.layers[0].weights
    else:
        batch = np.asarray(batch, dtype=np.float64)
        z1 = first_preact - batch[:, cols] @ net.layers[0].weights[cols, :]
    return _run_from_first_preact(net, z1)


def backward(
    net: Network,
    fwd: ForwardPass,
    output_grad: np.ndarray,
    first_layer_rows: np.ndarray | None = None,
) -> Gradients:
    """Exact reverse-mode gradients of the scalar whose output gradient is given.

    ``output_grad`` is d(loss)/d(final scores) and already carries the
    batch-mean convention, so the returned gradients are those of the
    batch-mean loss. When ``first_layer_rows`` is set, only those rows of
    the first-layer weight gradient are computed (the rest stay zero);
    useful when the update will be masked to those rows anyway.
    """
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != fwd.post[-1].shape:
        raise ValueError(
            f"output_grad shape {output_grad.shape} != network output shape {fwd.post[-1].shape}"
        )
    n_layers = len(net.layers)
    w_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    b_grads: list[np.ndarray | None] = [None] * n_layers
    grad_post = output_grad
    for j in range(n_layers - 1, -1, -1):
        layer = net.layers[j]
        grad_pre = _activation_backward(layer.activation, fwd.pre[j], fwd.post[j], grad_post)
        a_prev = fwd.post[j - 1] if j > 0 else fwd.inputs
        if j == 0 and first_layer_rows is not None:
            gw = np.zeros_like(layer.weights)
            gw[first_layer_rows, :] = a_prev[:, first_layer_rows].T @ grad_pre
        else:
            gw = a_prev.T @ grad_pre
        w_grads[j] = gw
        b_grads[j] = grad_pre.sum(axis=0) if layer.bias is not None else None
        if j > 0:
            grad_post = grad_pre @ layer.weights.T
    return Gradients(weights=w_grads, biases=b_grads)


def apply_update(
    net: Network,
    grads: Gradients,
    lr: float,
    mask=None,
) -> None:
    """One gradient step: parameters <- parameters - lr * grad.

    ``mask``, when given, is the collection of group indices whose
    first-layer rows are allowed to move; rows of every other group are
    left bit-identical. Rows of pruned groups never move, mask or not, so
    they stay exactly zero. All non-first-layer parameters always update.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    for j, layer in enumerate(net.layers):
        gw = grads.weights[j]
        if gw.shape != layer.weights.shape:
            raise ValueError(f"gradient shape mismatch at layer {j}")
        if j == 0:
            first = net.layers[0]
            if mask is not None:
                if net.sparse is None:
                    raise ValueError("masked updates need a partition attached to the network")
                part = net.sparse.partition
                for i in mask:
                    if net.sparse.flags[i]:
                        continue
                    rows = part.columns(i)
                    first.weights[rows, :] -= lr * gw[rows, :]
            elif net.sparse is not None and net.sparse.flags.any():
                frozen = net.sparse.sparse_rows()
                live = np.setdiff1d(np.arange(first.fan_in), frozen, assume_unique=False)
                first.weights[live, :] -= lr * gw[live, :]
            else:
                first.weights -= lr * gw
        else:
            layer.weights -= lr * gw
            if layer.bias is not None:
                gb = grads.biases[j]
                if gb is None or gb.shape != layer.bias.shape:
                    raise ValueError(f"bias gradient shape mismatch at layer {j}")
                layer.bias -= lr * gb


def save_snapshot(net: Network, path) -> None:
    """Write the network to a versioned JSON document.

    Floats are serialized via repr and round-trip bit-exactly.
    """
    doc = {
        "format": SNAPSHOT_FORMAT,
        "layer_dims": net.layer_dims,
        "activations": [layer.activation for layer in net.layers],
        "weights": [layer.weights.ravel().tolist() for layer in net.layers],
        "biases": [
            layer.bias.tolist() if layer.bias is not None else None for layer in net.layers
        ],
    }
    if net.sparse is not None:
        part = net.sparse.partition
        doc["partition"] = {
            "groups": [
                {"name": part.name(i), "columns": [int(c) for c in part.groups[i]]}
                for i in range(part.k)
            ]
        }
        doc["sparse_flags"] = [bool(f) for f in net.sparse.flags]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_snapshot(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"unsupported snapshot format {doc.get('format')!r}")
    dims = doc["layer_dims"]
    layers = []
    for j, act in enumerate(doc["activations"]):
        fan_in, fan_out = dims[j], dims[j + 1]
        w = np.array(doc["weights"][j], dtype=np.float64).reshape(fan_in, fan_out)
        braw = doc["biases"][j]
        bias = np.array(braw, dtype=np.float64) if braw is not None else None
        layers.append(DenseLayer(weights=w, bias=bias, activation=act))
    net = Network(layers=layers)
    if doc.get("partition") is not None:
        part = GroupPartition(
            [entry["columns"] for entry in doc["partition"]["groups"]],
            [entry["name"] for entry in doc["partition"]["groups"]],
        )
        mask = net.attach_partition(part)
        mask.flags[:] = np.asarray(doc["sparse_flags"], dtype=bool)
    return net
