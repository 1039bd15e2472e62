"""CIFAR-100 ingestion, normalization, deterministic batching.

The on-disk format is the canonical CIFAR-100 binary layout: each record
is 3074 bytes, one coarse-label byte, one fine-label byte, then 3072
pixel bytes (red plane, green plane, blue plane, each 32x32 row-major).
The full distribution ships ``train.bin`` (50,000 records) and
``test.bin`` (10,000 records).

Pixels map byte -> float via x/255. Standardization uses per-channel
mean/std computed once over the train split and cached in a small JSON
sidecar next to the data files, so the test split is normalized with
train statistics. No augmentation of any kind is applied here: the
training recipes this lab studies are deliberately bare, and augmenting
would confound them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "RECORD_BYTES",
    "SPLIT_FILES",
    "STATS_FILE",
    "DATA_DIR_ENV",
    "Dataset",
    "BatchPlan",
    "read_cifar_records",
    "write_cifar_records",
    "load_cifar100",
    "ensure_channel_stats",
    "save_dataset",
    "subset",
    "batches",
    "write_synthetic_cifar100",
]

RECORD_BYTES = 3074  # 1 coarse + 1 fine + 3*32*32 pixels
SPLIT_FILES = {"train": "train.bin", "test": "test.bin"}
STATS_FILE = "channel_stats.json"
DATA_DIR_ENV = "ACTLAB_DATA_DIR"
PUBLIC_SOURCE = "https://www.cs.toronto.edu/~kriz/cifar.html (CIFAR-100 binary version)"


@dataclass
class Dataset:
    """In-memory split: images as float32 [N,3,32,32], integer labels."""

    images: np.ndarray
    fine_labels: np.ndarray
    split: str
    coarse_labels: np.ndarray | None = None
    normalized: bool = False

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.fine_labels.max()) + 1 if len(self) else 0


def read_cifar_records(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw record arrays: (coarse u8 [N], fine u8 [N], pixels u8 [N,3,32,32])."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; obtain the dataset from {PUBLIC_SOURCE}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD_BYTES != 0:
        expected = (raw.size // RECORD_BYTES + 1) * RECORD_BYTES
        raise ValueError(
            f"{path} has {raw.size} bytes, not a multiple of the {RECORD_BYTES}-byte record size "
            f"(nearest whole-record size would be {expected})"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    coarse = records[:, 0].copy()
    fine = records[:, 1].copy()
    pixels = records[:, 2:].reshape(-1, 3, 32, 32).copy()
    return coarse, fine, pixels


def write_cifar_records(path, coarse: np.ndarray, fine: np.ndarray, pixels: np.ndarray):
    """Serialize records back to the canonical binary layout."""
    n = fine.shape[0]
    if coarse.shape != (n,) or pixels.shape != (n, 3, 32, 32):
        raise ValueError(f"inconsistent record arrays: coarse {coarse.shape}, fine {fine.shape}, pixels {pixels.shape}")
    records = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = coarse
    records[:, 1] = fine
    records[:, 2:] = pixels.reshape(n, -1)
    records.tofile(path)


def ensure_channel_stats(data_dir) -> dict:
    """Per-channel mean/std of the train split in x/255 units.

    Computed once from train.bin and cached in a JSON sidecar; later
    calls read the sidecar.
    """
    data_dir = Path(data_dir)
    sidecar = data_dir / STATS_FILE
    if sidecar.exists():
        return json.loads(sidecar.read_text())
    _, _, pixels = read_cifar_records(data_dir / SPLIT_FILES["train"])
    x = pixels.astype(np.float32) / np.float32(255.0)
    mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
    std = x.std(axis=(0, 2, 3), dtype=np.float64)
    stats = {"mean": [float(m) for m in mean], "std": [float(s) for s in std], "source_split": "train", "scale": "x/255"}
    sidecar.write_text(json.dumps(stats, indent=2, sort_keys=True))
    return stats


def load_cifar100(data_dir, split: str, normalize: bool = True) -> Dataset:
    """Load one split. ``normalize`` standardizes per channel with train
    statistics; with normalize=False pixels stay in [0, 1]."""
    if split not in SPLIT_FILES:
        raise ValueError(f"split must be one of {sorted(SPLIT_FILES)}, got {split!r}")
    data_dir = Path(data_dir)
    coarse, fine, pixels = read_cifar_records(data_dir / SPLIT_FILES[split])
    images = pixels.astype(np.float32) / np.float32(255.0)
    if normalize:
        stats = ensure_channel_stats(data_dir)
        mean = np.asarray(stats["mean"], dtype=np.float32).reshape(1, 3, 1, 1)
        std = np.asarray(stats["std"], dtype=np.float32).reshape(1, 3, 1, 1)
        images = (images - mean) / std
    return Dataset(
        images=images,
        fine_labels=fine.astype(np.int64),
        split=split,
        coarse_labels=coarse,
        normalized=normalize,
    )


def save_dataset(ds: Dataset, path):
    """Re-serialize an unnormalized dataset to the binary record layout."""
    if ds.normalized:
        raise ValueError("cannot serialize a standardized dataset; load with normalize=False")
    pixels = np.rint(ds.images * np.float32(255.0)).astype(np.uint8)
    coarse = ds.coarse_labels if ds.coarse_labels is not None else np.zeros(len(ds), dtype=np.uint8)
    write_cifar_records(path, coarse.astype(np.uint8), ds.fine_labels.astype(np.uint8), pixels)


def default_data_dir(cli_value=None):
    """Resolve the data directory: explicit flag wins, then the env var."""
    if cli_value:
        return Path(cli_value)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    raise ValueError(f"no data directory given; pass --data-dir or set {DATA_DIR_ENV}")


def subset(ds: Dataset, per_class: int, seed: int) -> Dataset:
    """Class-balanced subset: ``per_class`` samples of every label,
    chosen by a seeded permutation of each class's indices."""
    rng = np.random.default_rng(seed)
    picks = []
    for k in np.unique(ds.fine_labels):
        idx = np.flatnonzero(ds.fine_labels == k)
        if idx.size < per_class:
            raise ValueError(f"class {int(k)} has only {idx.size} samples, need {per_class}")
        picks.append(rng.permutation(idx)[:per_class])
    sel = np.concatenate(picks)
    return Dataset(
        images=ds.images[sel],
        fine_labels=ds.fine_labels[sel],
        split=ds.split,
        coarse_labels=None if ds.coarse_labels is None else ds.coarse_labels[sel],
        normalized=ds.normalized,
    )


@dataclass
class BatchPlan:
    """Reproducible epoch ordering: the permutation is a pure function of
    (seed, epoch)."""

    seed: int
    batch_size: int = 128
    epoch: int = 0

    def permutation(self, n: int) -> np.ndarray:
        return np.random.default_rng([self.seed, self.epoch]).permutation(n)


def batches(ds: Dataset, plan: BatchPlan):
    """Yield (images, labels) chunks in shuffled order; the last short
    batch is kept."""
    order = plan.permutation(len(ds))
    for start in range(0, len(ds), plan.batch_size):
        sel = order[start : start + plan.batch_size]
        yield ds.images[sel], ds.fine_labels[sel]


def eval_batches(ds: Dataset, batch_size: int):
    """Unshuffled chunks for evaluation passes."""
    for start in range(0, len(ds), batch_size):
        yield ds.images[start : start + batch_size], ds.fine_labels[start : start + batch_size]


def write_synthetic_cifar100(
    data_dir,
    train_per_class: int,
    test_per_class: int,
    num_classes: int = 100,
    seed: int = 0,
    signal_weight: float = 0.85,
):
    """Generate a class-separable stand-in dataset in the CIFAR binary layout.

    Each class gets a fixed random prototype image; samples mix the
    prototype (weight ``signal_weight``) with uniform pixel noise, which
    makes the classes easy to tell apart while exercising the exact same
    loader, normalization and batching paths as the real data. Intended
    for desk-scale runs and CI, where the real dataset is not available.
    The default mix is clean enough that a few hundred optimizer steps
    show real learning even in the deliberately fragile training regime.
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    protos = rng.uniform(0.0, 255.0, size=(num_classes, 3, 32, 32))

    def make_split(per_class, split_seed):
        srng = np.random.default_rng([seed, split_seed])
        n = per_class * num_classes
        fine = np.repeat(np.arange(num_classes, dtype=np.uint8), per_class)
        noise = srng.uniform(0.0, 255.0, size=(n, 3, 32, 32))
        pixels = np.clip(signal_weight * protos[fine] + (1.0 - signal_weight) * noise, 0.0, 255.0).astype(np.uint8)
        order = srng.permutation(n)
        coarse = (fine // 5).astype(np.uint8)
        return coarse[order], fine[order], pixels[order]

    write_cifar_records(data_dir / SPLIT_FILES["train"], *make_split(train_per_class, 1))
    write_cifar_records(data_dir / SPLIT_FILES["test"], *make_split(test_per_class, 2))
    stale = data_dir / STATS_FILE
    if stale.exists():
        stale.unlink()
