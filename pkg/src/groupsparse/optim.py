"""Training loops: plain SGD, penalized SGD, and the blockwise variants.

The blockwise algorithms visit input groups in a fresh random order each
epoch. For each live group they run the epoch's mini-batches, and on
every batch they record the clamped gap between the loss with the group
disconnected and the plain loss. The gradient step touches all
parameters above the first layer plus only the visited group's
first-layer rows, with the group's penalty term added. After a group's
batch loop, if the sample-weighted mean gap falls strictly below the
pruning threshold, the group's rows are zeroed for good.

Two thresholds are available: the flat regularization weight (the
default), and the weight times the group's current penalty value, which
matches the condition under which zeroing the group lowers the full
regularized objective. The mean gap is clamped per batch at zero, which
biases it upward; a group prunes only when disconnecting it costs
essentially nothing on every batch.

One trainer owns one network; there is no parallelism inside a step.
Independent (network, config) pairs may train concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .grouping import (
    GroupPartition,
    SparsityMask,
    group_regularizer,
    prune_group,
    regularizer_subgradient,
    total_regularizer,
)
from .losses import LossSpec, loss_and_grad, loss_value
from .nn import Network, apply_update, backward, forward, masked_forward
from .data import Dataset

__all__ = [
    "ALGORITHMS",
    "THRESHOLD_MODES",
    "TrainConfig",
    "EpochTrace",
    "baseline_schedule",
    "sgd_epoch",
    "sbcgd_epoch",
    "sbcgd_b_epoch",
    "train",
    "pruning_tests",
]

ALGORITHMS = ("sgd", "sgd_tau", "sbcgd", "sbcgd_b")
THRESHOLD_MODES = ("lambda", "lambda_tau")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    batch_size: int = 100
    lr: float = 0.1
    decay: float = 1.0
    epochs: int = 1
    algorithm: str = "sbcgd"
    seed: int = 0
    loss: LossSpec = field(default_factory=LossSpec)
    prune_threshold_mode: str = "lambda"
    decay_every: int = 1  # baselines stretch the decay to every k epochs

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.prune_threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"prune_threshold_mode must be one of {THRESHOLD_MODES}")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")


def baseline_schedule(cfg: TrainConfig, k: int) -> TrainConfig:
    """Stretch a blockwise config for a plain-SGD baseline with a matched
    back-propagation budget: k times the epochs, decay applied every k."""
    return replace(cfg, epochs=cfg.epochs * k, decay_every=cfg.decay_every * k)


@dataclass
class EpochTrace:
    epoch: int = 0
    algorithm: str = ""
    lr: float = 0.0
    train_loss: float = 0.0
    penalty: float = 0.0
    gap_values: dict[int, list[float]] = field(default_factory=dict)
    mean_gaps: dict[int, float] = field(default_factory=dict)
    pruned: list[int] = field(default_factory=list)
    update_steps: int = 0

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "algorithm": self.algorithm,
            "lr": self.lr,
            "train_loss": self.train_loss,
            "penalty": self.penalty,
            "mean_gaps": {str(i): g for i, g in self.mean_gaps.items()},
            "pruned": list(self.pruned),
            "update_steps": self.update_steps,
        }


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Seeded shuffle, then consecutive slices; the final short batch is
    used as-is."""
    idx = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def _check_data(data: Dataset, part: GroupPartition | None):
    if data.n == 0:
        raise ValueError("dataset is empty")
    if part is not None and part.p != data.p:
        raise ValueError(f"partition covers {part.p} columns, dataset has {data.p}")


def sgd_epoch(
    net: Network,
    data: Dataset,
    part: GroupPartition | None,
    cfg: TrainConfig,
    include_tau: bool,
    lr: float | None = None,
    rng: np.random.Generator | None = None,
) -> EpochTrace:
    """One epoch of plain mini-batch SGD; never prunes.

    With ``include_tau`` the group penalty over all groups joins the
    objective, its subgradient landing on the first-layer rows.
    """
    _check_data(data, part)
    if include_tau and part is None:
        raise ValueError("penalized SGD needs a partition")
    lr = cfg.lr if lr is None else lr
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    trace = EpochTrace(algorithm="sgd_tau" if include_tau else "sgd", lr=lr)
    loss_sum = 0.0
    for idx in _batches(data.n, cfg.batch_size, rng):
        xb, yb = data.X[idx], data.y[idx]
        fwd = forward(net, xb)
        loss, ograd = loss_and_grad(cfg.loss, fwd.outputs, yb)
        grads = backward(net, fwd, ograd)
        if include_tau and cfg.lam > 0:
            w0 = grads.weights[0]
            for i in range(part.k):
                cols = part.groups[i]
                w0[cols, :] += cfg.lam * regularizer_subgradient(net, part, i)
        apply_update(net, grads, lr)
        loss_sum += loss * idx.size
        trace.update_steps += 1
    trace.train_loss = loss_sum / data.n
    trace.penalty = total_regularizer(net, part) if part is not None else 0.0
    return trace


def _prune_threshold(net: Network, part: GroupPartition, i: int, cfg: TrainConfig) -> float:
    if cfg.prune_threshold_mode == "lambda":
        return cfg.lam
    # group penalty measured at the moment of the test, before any zeroing
    return cfg.lam * group_regularizer(net, part, i)


def _measure_gap(net, part, i, xb, yb, cfg, fwd=None) -> tuple[float, object]:
    """Clamped loss gap for one batch: disconnected-group loss minus plain."""
    if fwd is None:
        fwd = forward(net, xb)
    loss1 = loss_value(cfg.loss, fwd.outputs, yb)
    scores2 = masked_forward(net, part, i, xb, first_preact=fwd.pre[0])
    loss2 = loss_value(cfg.loss, scores2, yb)
    return max(loss2 - loss1, 0.0), fwd


def sbcgd_epoch(
    net: Network,
    data: Dataset,
    part: GroupPartition,
    mask: SparsityMask,
    cfg: TrainConfig,
    lr: float | None = None,
    rng: np.random.Generator | None = None,
) -> EpochTrace:
    """One epoch of stochastic blockwise coordinated gradient descent.

    Per live group, in shuffled order: for each mini-batch, measure the
    clamped gap between the group-disconnected loss and the plain loss,
    then step all parameters above the first layer plus the group's own
    first-layer rows against the plain loss plus the group's penalty.
    After the batch loop the group is pruned if the sample-weighted mean
    gap is strictly below the threshold.
    """
    _check_data(data, part)
    if mask.partition is not part and mask.partition != part:
        raise ValueError("mask does not belong to this partition")
    lr = cfg.lr if lr is None else lr
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    trace = EpochTrace(algorithm="sbcgd", lr=lr)
    loss_sum = 0.0
    loss_weight = 0
    for i in rng.permutation(part.k):
        i = int(i)
        if mask.flags[i]:
            continue
        cols = part.columns(i)
        gaps: list[float] = []
        gap_weighted = 0.0
        for idx in _batches(data.n, cfg.batch_size, rng):
            xb, yb = data.X[idx], data.y[idx]
            fwd = forward(net, xb)
            loss1, ograd = loss_and_grad(cfg.loss, fwd.outputs, yb)
            scores2 = masked_forward(net, part, i, xb, first_preact=fwd.pre[0])
            loss2 = loss_value(cfg.loss, scores2, yb)
            gap = max(loss2 - loss1, 0.0)
            gaps.append(gap)
            gap_weighted += gap * idx.size
            grads = backward(net, fwd, ograd, first_layer_rows=cols)
            if cfg.lam > 0:
                grads.weights[0][cols, :] += cfg.lam * regularizer_subgradient(net, part, i)
            apply_update(net, grads, lr, mask=(i,))
            loss_sum += loss1 * idx.size
            loss_weight += idx.size
            trace.update_steps += 1
        mean_gap = gap_weighted / data.n
        trace.gap_values[i] = gaps
        trace.mean_gaps[i] = mean_gap
        if mean_gap < _prune_threshold(net, part, i, cfg):
            prune_group(net, mask, i)
            trace.pruned.append(i)
    trace.train_loss = loss_sum / loss_weight if loss_weight else 0.0
    trace.penalty = total_regularizer(net, part)
    return trace


def sbcgd_b_epoch(
    net: Network,
    data: Dataset,
    part: GroupPartition,
    mask: SparsityMask,
    cfg: TrainConfig,
    lr: float | None = None,
    rng: np.random.Generator | None = None,
) -> EpochTrace:
    """Blockwise epoch, measure-after-optimize variant.

    Each live group gets a full pass of penalized mini-batch updates
    first, then a separate update-free pass that accumulates the clamped
    gaps, so the pruning test sees the group's post-optimization state.
    Costs two passes per live group per epoch instead of one.
    """
    _check_data(data, part)
    lr = cfg.lr if lr is None else lr
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    trace = EpochTrace(algorithm="sbcgd_b", lr=lr)
    loss_sum = 0.0
    loss_weight = 0
    for i in rng.permutation(part.k):
        i = int(i)
        if mask.flags[i]:
            continue
        cols = part.columns(i)
        for idx in _batches(data.n, cfg.batch_size, rng):
            xb, yb = data.X[idx], data.y[idx]
            fwd = forward(net, xb)
            loss, ograd = loss_and_grad(cfg.loss, fwd.outputs, yb)
            grads = backward(net, fwd, ograd, first_layer_rows=cols)
            if cfg.lam > 0:
                grads.weights[0][cols, :] += cfg.lam * regularizer_subgradient(net, part, i)
            apply_update(net, grads, lr, mask=(i,))
            loss_sum += loss * idx.size
            loss_weight += idx.size
            trace.update_steps += 1
        gaps = []
        gap_weighted = 0.0
        for idx in _batches(data.n, cfg.batch_size, rng):
            xb, yb = data.X[idx], data.y[idx]
            gap, _ = _measure_gap(net, part, i, xb, yb, cfg)
            gaps.append(gap)
            gap_weighted += gap * idx.size
        mean_gap = gap_weighted / data.n
        trace.gap_values[i] = gaps
        trace.mean_gaps[i] = mean_gap
        if mean_gap < _prune_threshold(net, part, i, cfg):
            prune_group(net, mask, i)
            trace.pruned.append(i)
    trace.train_loss = loss_sum / loss_weight if loss_weight else 0.0
    trace.penalty = total_regularizer(net, part)
    return trace


def train(
    net: Network,
    data: Dataset,
    part: GroupPartition | None,
    cfg: TrainConfig,
    trace_stream=None,
) -> tuple[Network, SparsityMask | None, list[EpochTrace]]:
    """Run cfg.epochs epochs of the configured algorithm.

    The learning rate is multiplied by cfg.decay after every
    cfg.decay_every epochs. Identical (network, data, config) inputs
    reproduce identical parameters, mask, and traces. When
    ``trace_stream`` is given, one JSON object per epoch is written to
    it, newline-delimited.
    """
    blockwise = cfg.algorithm in ("sbcgd", "sbcgd_b")
    if part is None:
        part = data.partition
    if blockwise and part is None:
        raise ValueError(f"{cfg.algorithm} needs a group partition")
    mask = net.attach_partition(part) if part is not None else None
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.lr
    traces: list[EpochTrace] = []
    for epoch in range(cfg.epochs):
        if cfg.algorithm == "sgd":
            trace = sgd_epoch(net, data, part, cfg, include_tau=False, lr=lr, rng=rng)
        elif cfg.algorithm == "sgd_tau":
            trace = sgd_epoch(net, data, part, cfg, include_tau=True, lr=lr, rng=rng)
        elif cfg.algorithm == "sbcgd":
            trace = sbcgd_epoch(net, data, part, mask, cfg, lr=lr, rng=rng)
        else:
            trace = sbcgd_b_epoch(net, data, part, mask, cfg, lr=lr, rng=rng)
        trace.epoch = epoch
        traces.append(trace)
        if trace_stream is not None:
            trace_stream.write(json.dumps(trace.to_json_dict()) + "\n")
        if (epoch + 1) % cfg.decay_every == 0:
            lr *= cfg.decay
    return net, mask, traces


def pruning_tests(
    net: Network,
    data: Dataset,
    part: GroupPartition,
    i: int,
    lam: float,
    loss: LossSpec | None = None,
) -> tuple[bool, bool]:
    """Full-batch comparison of the two group-pruning criteria.

    Returns (gap_test, objective_test): whether the mean loss increase
    from disconnecting group i stays below lam times the group's penalty,
    and whether zeroing the group strictly lowers the full regularized
    objective. The two are equivalent by construction; exposing both
    makes the equivalence directly checkable.
    """
    loss = loss if loss is not None else LossSpec()
    scores = forward(net, data.X).outputs
    plain = loss_value(loss, scores, data.y)
    masked = loss_value(loss, masked_forward(net, part, i, data.X), data.y)
    pen_i = group_regularizer(net, part, i)
    pen_total = total_regularizer(net, part)
    gap_test = (masked - plain) < lam * pen_i
    objective_test = (masked + lam * (pen_total - pen_i)) < (plain + lam * pen_total)
    return bool(gap_test), bool(objective_test)
