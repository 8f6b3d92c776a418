"""Dataset construction: file loaders, group assembly, synthetic generators.

Loaders only read local files; fetching data is the caller's job.
Datasets are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .grouping import GroupPartition, load_group_manifest
from . import wavelet

__all__ = [
    "Dataset",
    "load_mnist_idx",
    "rows_as_groups",
    "load_splice",
    "load_splice_pair",
    "load_csv_with_manifest",
    "gen_parity",
    "PARITY_NOISE_GROUP",
    "train_val_split",
    "downsample_balanced",
    "wavelet_dataset",
    "IDX_IMAGE_MAGIC",
    "IDX_LABEL_MAGIC",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# group index of the pure-noise feature pair in gen_parity output
PARITY_NOISE_GROUP = 4

_NUCLEOTIDES = "ACGT"


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (n, p) float64
    y: np.ndarray  # (n,) int64
    num_classes: int
    partition: GroupPartition | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64).ravel()
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        if y.size != X.shape[0]:
            raise ValueError(f"{y.size} labels for {X.shape[0]} samples")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.partition is not None and self.partition.p != X.shape[1]:
            raise ValueError(
                f"partition covers {self.partition.p} columns, X has {X.shape[1]}"
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_partition(self, part: GroupPartition) -> "Dataset":
        return replace(self, partition=part)

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx])


def _open_maybe_gzip(path):
    fh = open(path, "rb")
    magic = fh.read(2)
    fh.seek(0)
    if magic == b"\x1f\x8b":
        fh.close()
        return gzip.open(path, "rb")
    return fh


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        header = fh.read(4 * (1 + ndim))
        if len(header) < 4 * (1 + ndim):
            raise ValueError(f"{path}: truncated IDX header")
        magic = struct.unpack(">i", header[:4])[0]
        if magic != expected_magic:
            raise ValueError(
                f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
            )
        dims = struct.unpack(f">{ndim}i", header[4:])
        count = int(np.prod(dims))
        payload = fh.read(count)
        if len(payload) < count:
            raise ValueError(
                f"{path}: truncated IDX payload ({len(payload)} of {count} bytes)"
            )
        return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse IDX image/label files into a flat [0,1]-scaled dataset.

    The IDX container is big-endian: a 4-byte magic (0x00000803 for
    images, 0x00000801 for labels), one 4-byte size per dimension, then
    the unsigned-byte payload. Gzipped files are detected and accepted.
    No partition is attached; pick one with rows_as_groups() or the
    wavelet layout.
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image/label count mismatch: {images.shape[0]} images, {labels.shape[0]} labels"
        )
    n = images.shape[0]
    X = images.reshape(n, -1).astype(np.float64) / 255.0
    return Dataset(X=X, y=labels.astype(np.int64), num_classes=10)


def rows_as_groups(height: int = 28, width: int = 28) -> GroupPartition:
    """One group per image row: group r covers columns [r*width, (r+1)*width)."""
    names = [f"row{r + 1}" for r in range(height)]
    return GroupPartition.contiguous([width] * height, names)


def _encode_sequences(seqs: list[str], drop_positions) -> np.ndarray:
    drop = set(drop_positions or ())
    rows = []
    length = None
    for line_no, seq in seqs:
        s = seq.strip().upper()
        if len(s) == 9 and drop:
            s = "".join(ch for j, ch in enumerate(s, start=1) if j not in drop)
        if length is None:
            length = len(s)
            if length != 7:
                raise ValueError(
                    f"line {line_no}: expected 7-mers (or 9-mers with dropped "
                    f"positions), got length {len(seq.strip())}"
                )
        elif len(s) != length:
            raise ValueError(f"line {line_no}: inconsistent sequence length {len(s)}")
        onehot = np.zeros(4 * length)
        for j, ch in enumerate(s):
            slot = _NUCLEOTIDES.find(ch)
            if slot < 0:
                raise ValueError(f"line {line_no}: invalid nucleotide {ch!r}")
            onehot[4 * j + slot] = 1.0
        rows.append(onehot)
    return np.array(rows) if rows else np.empty((0, 28))


def load_splice(
    path,
    label: int | None = None,
    labels_path=None,
    inline_labels: bool = False,
    drop_positions=(4, 5),
) -> Dataset:
    """Load nucleotide 7-mers as one-hot features in 7 positional groups.

    Accepts 7-character lines over {A,C,G,T} directly, or 9-character
    donor-site lines whose consensus positions (``drop_positions``,
    1-based, default 4 and 5) are removed first. One-hot slot order is
    A, C, G, T per position, so every row sums to exactly 7.

    Labels come from exactly one of: a constant ``label`` for the whole
    file, a parallel ``labels_path`` with one integer per line, or a
    leading integer token on each line (``inline_labels``). Blank lines
    and '>'-prefixed headers are skipped.
    """
    sources = sum(x is not None and x is not False for x in (label, labels_path, inline_labels))
    if sources != 1:
        raise ValueError("pass exactly one of label, labels_path, inline_labels")
    seqs: list[tuple[int, str]] = []
    inline: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith(">"):
                continue
            if inline_labels:
                tok, _, rest = line.partition(" ")
                inline.append(int(tok))
                line = rest.strip()
            seqs.append((line_no, line))
    X = _encode_sequences(seqs, drop_positions)
    if label is not None:
        y = np.full(len(seqs), int(label))
    elif labels_path is not None:
        with open(labels_path, "r", encoding="utf-8") as fh:
            y = np.array([int(t) for t in fh.read().split()])
        if y.size != len(seqs):
            raise ValueError(f"{labels_path}: {y.size} labels for {len(seqs)} sequences")
    else:
        y = np.array(inline)
    part = GroupPartition.contiguous([4] * 7, [f"pos{j + 1}" for j in range(7)])
    return Dataset(X=X, y=y, num_classes=2, partition=part)


def load_splice_pair(true_path, false_path, drop_positions=(4, 5)) -> Dataset:
    """Convenience for corpora shipped as separate true/decoy files."""
    pos = load_splice(true_path, label=1, drop_positions=drop_positions)
    neg = load_splice(false_path, label=0, drop_positions=drop_positions)
    return Dataset(
        X=np.vstack([pos.X, neg.X]),
        y=np.concatenate([pos.y, neg.y]),
        num_classes=2,
        partition=pos.partition,
    )


def load_csv_with_manifest(data_path, manifest_path, impute_missing: bool = False) -> Dataset:
    """Numeric CSV plus a JSON manifest naming the label column and groups.

    The manifest extends the group-manifest schema with a "label" key
    holding the header name of the label column. Group columns are
    0-based indices into the feature matrix after the label column is
    removed. Empty cells are errors unless ``impute_missing`` fills them
    with their column mean.
    """
    with open(manifest_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "label" not in doc:
        raise ValueError(f"{manifest_path}: manifest must name the label column")
    label_col = doc["label"]

    with open(data_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{data_path}: empty file")
        rows = [row for row in reader if row]
    if label_col not in header:
        raise ValueError(f"{data_path}: label column {label_col!r} not in header")
    label_idx = header.index(label_col)
    feature_names = tuple(h for j, h in enumerate(header) if j != label_idx)

    n, p = len(rows), len(header) - 1
    X = np.empty((n, p))
    y = np.empty(n, dtype=np.int64)
    missing = []
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{data_path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        c = 0
        for j, cell in enumerate(row):
            if j == label_idx:
                y[r] = int(cell)
                continue
            cell = cell.strip()
            if cell == "":
                if not impute_missing:
                    raise ValueError(
                        f"{data_path}: empty cell at row {r + 2}, column {header[j]!r} "
                        "(enable imputation to fill with column means)"
                    )
                X[r, c] = np.nan
                missing.append((r, c))
            else:
                X[r, c] = float(cell)
            c += 1
    if missing:
        means = np.nanmean(X, axis=0)
        for r, c in missing:
            X[r, c] = means[c]

    part = load_group_manifest(manifest_path)
    if part.p != p:
        raise ValueError(f"{manifest_path}: groups cover {part.p} columns, CSV has {p} features")
    return Dataset(
        X=X,
        y=y,
        num_classes=int(y.max()) + 1 if n else 2,
        partition=part,
        feature_names=feature_names,
    )


def gen_parity(n: int, seed: int = 0) -> Dataset:
    """Parity task: 10 binary features in 5 pairs, one pair pure noise.

    The label is the XOR of the 8 informative bits (features 0..7);
    features 8 and 9 are independent coin flips. The noise pair is group
    index PARITY_NOISE_GROUP (the last group).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(n, 10))
    y = bits[:, :8].sum(axis=1) % 2
    part = GroupPartition.contiguous([2] * 5, ["pair1", "pair2", "pair3", "pair4", "noise"])
    return Dataset(X=bits.astype(np.float64), y=y, num_classes=2, partition=part)


def train_val_split(ds: Dataset, holdout: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded split into (train, validation); the pieces are disjoint and
    cover the input exactly."""
    if not 0 < holdout < ds.n:
        raise ValueError(f"holdout must be in (0, {ds.n})")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    return ds.subset(perm[holdout:]), ds.subset(perm[:holdout])


def downsample_balanced(ds: Dataset, per_class: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Sample ``per_class`` examples of every class without replacement.

    Returns (sampled, rest); the rest is handy as a validation set.
    """
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(ds.num_classes):
        pool = np.nonzero(ds.y == c)[0]
        if pool.size < per_class:
            raise ValueError(f"class {c} has only {pool.size} samples, need {per_class}")
        chosen.append(rng.choice(pool, size=per_class, replace=False))
    idx = np.sort(np.concatenate(chosen))
    rest = np.setdiff1d(np.arange(ds.n), idx, assume_unique=True)
    return ds.subset(idx), ds.subset(rest)


def wavelet_dataset(ds: Dataset, side: int = 28) -> Dataset:
    """Transform each row-image into its 799 wavelet coefficients."""
    if ds.p != side * side:
        raise ValueError(f"expected {side * side} pixel columns, got {ds.p}")
    coeffs = np.empty((ds.n, wavelet.NUM_COEFFS))
    for r in range(ds.n):
        coeffs[r] = wavelet.haar_forward(ds.X[r].reshape(side, side))
    return Dataset(
        X=coeffs,
        y=ds.y,
        num_classes=ds.num_classes,
        partition=wavelet.wavelet_partition(),
        feature_names=None,
    )
