"""Batch construction: plain shuffling and two-step active sampling.

Active sampling treats each city count as a class: every batch first draws
batch-size classes uniformly (with replacement) over the classes actually
present, then one instance uniformly within each drawn class. This evens
out the size distribution seen in training regardless of how skewed the
dataset is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ClassIndex:
    """Dataset indices grouped by instance size."""

    classes: dict[int, np.ndarray]
    class_keys: np.ndarray

    @classmethod
    def from_sizes(cls, sizes) -> "ClassIndex":
        sizes = np.asarray(list(sizes), dtype=np.int64)
        keys = np.unique(sizes)
        classes = {int(k): np.nonzero(sizes == k)[0].astype(np.int64) for k in keys}
        return cls(classes=classes, class_keys=keys)


def shuffle_batches(dataset_size: int, batch_size: int, rng_seed: int) -> list[np.ndarray]:
    """One epoch: a uniform permutation chunked into batches (last may be short)."""
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
    if dataset_size == 0:
        return []
    gen = np.random.Generator(np.random.PCG64(rng_seed))
    perm = gen.permutation(dataset_size).astype(np.int64)
    return [perm[i:i + batch_size] for i in range(0, dataset_size, batch_size)]


def active_batches(index: ClassIndex, batch_size: int, batches_per_epoch: int,
                   rng_seed: int) -> list[np.ndarray]:
    """Two-step sampling: classes uniform with replacement, then one instance
    uniform within each drawn class (also with replacement)."""
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
    if index.class_keys.size == 0:
        raise InvalidArgumentError("active sampling needs at least one non-empty class")
    gen = np.random.Generator(np.random.PCG64(rng_seed))
    batches = []
    for _ in range(batches_per_epoch):
        keys = index.class_keys[gen.integers(0, index.class_keys.size, size=batch_size)]
        picks = np.empty(batch_size, dtype=np.int64)
        for i, key in enumerate(keys):
            members = index.classes[int(key)]
            picks[i] = members[gen.integers(0, members.size)]
        batches.append(picks)
    return batches
