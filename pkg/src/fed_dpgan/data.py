"""Synthetic chest-image stand-in, client partitioning and GAN augmentation.

Images are flattened grey-level grids in [0, 1]. Each class has a fixed
smooth template (two lung fields, plus a lower-lobe opacity for pneumonia or
bilateral peripheral opacities for covid); samples add per-pixel Gaussian
noise and a global brightness jitter.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from fed_dpgan import gan
from fed_dpgan.errors import DataError, ParameterError
from fed_dpgan.nn import ParameterVector

logger = logging.getLogger(__name__)

CLASS_NAMES = ("normal", "pneumonia", "covid")
N_CLASSES = len(CLASS_NAMES)
NORMAL, PNEUMONIA, COVID = range(N_CLASSES)


@dataclass
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.samples.ndim != 2:
            self.samples = self.samples.reshape(len(self.labels), -1)
        if self.samples.shape[0] != self.labels.size:
            raise DataError(
                f"{self.samples.shape[0]} samples but {self.labels.size} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise DataError(f"labels must lie in 0..{N_CLASSES - 1}")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @property
    def class_counts(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.bincount(self.labels, minlength=N_CLASSES))

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.samples[indices].reshape(-1, self.d), self.labels[indices])

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        return LabeledDataset(
            np.vstack([self.samples, other.samples]),
            np.concatenate([self.labels, other.labels]),
        )


@dataclass
class ClientShard:
    client_id: int
    dataset: LabeledDataset

    @property
    def n_k(self) -> int:
        return len(self.dataset)


@dataclass(frozen=True)
class PartitionPlan:
    mode: str
    K: int
    covid_holder_fraction: float = 0.1

    def __post_init__(self):
        if self.mode not in ("iid", "noniid"):
            raise ParameterError(f"unknown partition mode {self.mode!r}")
        if self.K < 1:
            raise ParameterError(f"need at least one client, got K={self.K}")
        if not 0 < self.covid_holder_fraction <= 1:
            raise ParameterError(
                f"covid_holder_fraction must lie in (0, 1], got {self.covid_holder_fraction}"
            )

    @property
    def holder_count(self) -> int:
        return max(1, math.ceil(self.covid_holder_fraction * self.K))


# ─────────────────────────────────────────────────────────────────────────────
# Synthetic corpus
# ─────────────────────────────────────────────────────────────────────────────


def _grid(d: int) -> tuple[np.ndarray, np.ndarray]:
    rows = int(math.isqrt(d))
    cols = math.ceil(d / rows)
    u, v = np.meshgrid(np.linspace(0, 1, rows), np.linspace(0, 1, cols), indexing="ij")
    return u.reshape(-1)[:d], v.reshape(-1)[:d]


def _blob(u: np.ndarray, v: np.ndarray, cu: float, cv: float, width: float) -> np.ndarray:
    return np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * width**2))


def class_templates(d: int) -> np.ndarray:
    """The three noiseless class images, shape (3, d)."""
    u, v = _grid(d)
    lungs = _blob(u, v, 0.5, 0.3, 0.18) + _blob(u, v, 0.5, 0.7, 0.18)
    normal = 0.2 + 0.5 * lungs
    pneumonia = normal + 0.5 * _blob(u, v, 0.72, 0.3, 0.15)
    covid = normal + 0.5 * (_blob(u, v, 0.65, 0.12, 0.12) + _blob(u, v, 0.65, 0.88, 0.12))
    return np.clip(np.stack([normal, pneumonia, covid]), 0.0, 1.0)


def synth_dataset(
    n_per_class: tuple[int, int, int],
    d: int = 64,
    seed: int = 0,
    noise: float = 0.25,
) -> LabeledDataset:
    if len(n_per_class) != N_CLASSES or any(c < 0 for c in n_per_class):
        raise ParameterError(f"need three non-negative class counts, got {n_per_class}")
    if d < 4:
        raise ParameterError(f"image dimension must be >= 4, got {d}")
    if sum(n_per_class) == 0:
        raise DataError("cannot synthesise an empty dataset")

    rng = np.random.default_rng(seed)
    templates = class_templates(d)
    labels = np.repeat(np.arange(N_CLASSES), n_per_class)
    n = labels.size
    brightness = rng.normal(0.0, 0.05, size=(n, 1))
    pixels = rng.normal(0.0, noise, size=(n, d))
    samples = np.clip(templates[labels] + brightness + pixels, 0.0, 1.0)
    return LabeledDataset(samples, labels)


def train_test_split(
    ds: LabeledDataset, test_fraction: float = 0.2, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; each class contributes round(test_fraction * n_c) test rows."""
    if not 0 < test_fraction < 1:
        raise ParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in range(N_CLASSES):
        members = rng.permutation(np.flatnonzero(ds.labels == label))
        n_test = int(round(test_fraction * members.size))
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    if train.size == 0 or test.size == 0:
        raise DataError("split leaves an empty train or test set")
    return ds.subset(train), ds.subset(test)


# ─────────────────────────────────────────────────────────────────────────────
# Partitioning
# ─────────────────────────────────────────────────────────────────────────────


def partition_iid(ds: LabeledDataset, K: int, seed: int = 0) -> list[ClientShard]:
    if not 1 <= K <= len(ds):
        raise ParameterError(f"cannot split {len(ds)} samples over {K} clients")
    order = np.random.default_rng(seed).permutation(len(ds))
    return [
        ClientShard(client_id=k, dataset=ds.subset(part))
        for k, part in enumerate(np.array_split(order, K))
    ]


def partition_noniid(ds: LabeledDataset, plan: PartitionPlan, seed: int = 0) -> list[ClientShard]:
    """Spread normal/pneumonia over every client, covid over a few random holders."""
    if plan.mode != "noniid":
        raise ParameterError(f"plan mode is {plan.mode!r}, expected 'noniid'")
    common = np.flatnonzero(ds.labels != COVID)
    covid = np.flatnonzero(ds.labels == COVID)
    if plan.K > common.size:
        raise ParameterError(
            f"cannot give {plan.K} clients a normal/pneumonia sample from {common.size}"
        )

    rng = np.random.default_rng(seed)
    holders = np.sort(rng.choice(plan.K, size=plan.holder_count, replace=False))
    assigned: list[list[np.ndarray]] = [[] for _ in range(plan.K)]
    for k, part in enumerate(np.array_split(rng.permutation(common), plan.K)):
        assigned[k].append(part)
    for k, part in zip(holders, np.array_split(rng.permutation(covid), holders.size)):
        assigned[k].append(part)

    if covid.size < holders.size:
        logger.warning(
            f"only {covid.size} covid samples for {holders.size} holders; "
            f"some holders receive none"
        )
    return [
        ClientShard(client_id=k, dataset=ds.subset(np.concatenate(parts)))
        for k, parts in enumerate(assigned)
    ]


def partition(ds: LabeledDataset, plan: PartitionPlan, seed: int = 0) -> list[ClientShard]:
    if plan.mode == "iid":
        return partition_iid(ds, plan.K, seed)
    return partition_noniid(ds, plan, seed)


def minority_shard(shard: ClientShard, label: int) -> ClientShard:
    """The part of ``shard`` labelled ``label`` (possibly empty)."""
    members = np.flatnonzero(shard.dataset.labels == label)
    return ClientShard(client_id=shard.client_id, dataset=shard.dataset.subset(members))


# ─────────────────────────────────────────────────────────────────────────────
# Augmentation
# ─────────────────────────────────────────────────────────────────────────────


def augment_with_fakes(
    shard: ClientShard,
    theta: ParameterVector,
    cfg: "gan.GanConfig",
    n_fake: int,
    label: int,
    rng: np.random.Generator,
) -> ClientShard:
    if n_fake < 0:
        raise ParameterError(f"n_fake must be non-negative, got {n_fake}")
    if not 0 <= label < N_CLASSES:
        raise ParameterError(f"label must lie in 0..{N_CLASSES - 1}, got {label}")
    if n_fake == 0:
        return shard
    fakes = gan.sample_generator(theta, cfg, n_fake, rng)
    extra = LabeledDataset(fakes.inputs, np.full(n_fake, label))
    return ClientShard(client_id=shard.client_id, dataset=shard.dataset.concat(extra))


# ─────────────────────────────────────────────────────────────────────────────
# CSV import / export: "# d=<d>; classes=a,b,c" header, then feature columns + label
# ─────────────────────────────────────────────────────────────────────────────


def write_dataset(ds: LabeledDataset, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# d={ds.d}; classes={','.join(CLASS_NAMES)}\n")
        writer = csv.writer(f, lineterminator="\n")
        for row, label in zip(ds.samples.tolist(), ds.labels.tolist()):
            writer.writerow([*row, label])


def read_dataset(path: Union[str, Path]) -> LabeledDataset:
    with open(path, newline="", encoding="utf-8") as f:
        header = f.readline().strip()
        try:
            fields = dict(part.strip().split("=", 1) for part in header.lstrip("#").split(";"))
            d = int(fields["d"])
            classes = tuple(fields["classes"].split(","))
        except (ValueError, KeyError) as e:
            raise DataError(f"{path}: malformed header {header!r}") from e
        if classes != CLASS_NAMES:
            raise DataError(f"{path}: expected classes {CLASS_NAMES}, found {classes}")
        rows = [row for row in csv.reader(f) if row]
    if not rows:
        raise DataError(f"{path}: no samples")
    if any(len(row) != d + 1 for row in rows):
        raise DataError(f"{path}: every row needs {d} features and a label")
    table = np.array(rows, dtype=np.float64)
    return LabeledDataset(table[:, :d], table[:, d].astype(np.int64))


def write_samples(samples: np.ndarray, label: int, path: Union[str, Path]) -> None:
    """Dump generated images under one label in the dataset CSV format."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    write_dataset(LabeledDataset(samples, np.full(samples.shape[0], label)), path)


def read_samples(path: Union[str, Path]) -> np.ndarray:
    return read_dataset(path).samples
