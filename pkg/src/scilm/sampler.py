"""Class-balanced batch sampling.

Random streams come from :func:`make_rng`, a numpy ``Generator`` backed by
PCG64 and seeded from a 64-bit integer, so the same seed reproduces the same
sequence of batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, ContractViolation


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass
class BalancedBatch:
    class_ids: list[int]
    per_class_indices: np.ndarray  # k x n

    @property
    def n(self) -> int:
        return self.per_class_indices.shape[1]


def sample_balanced_batch(ds: Dataset, n: int, rng: np.random.Generator) -> BalancedBatch:
    """Draw exactly ``n`` training instances from every seen class.

    Classes holding at least ``n`` instances are sampled without replacement;
    smaller classes are sampled with replacement so they still contribute ``n``.
    """
    if n < 1:
        raise ContractViolation(f"n must be positive, got {n}")
    rows = []
    for c in ds.seen_classes:
        pool = ds.train_by_class[c]
        if pool.size == 0:
            raise ConfigurationError(f"seen class {c} ({ds.class_name(c)}) has no training instances")
        rows.append(rng.choice(pool, size=n, replace=pool.size < n))
    return BalancedBatch(class_ids=list(ds.seen_classes), per_class_indices=np.stack(rows))


def sample_uniform_batch(ds: Dataset, size: int, rng: np.random.Generator) -> np.ndarray:
    """Instance-uniform batch from the training split (the conventional scheme)."""
    pool = ds.train_idx
    return rng.choice(pool, size=size, replace=pool.size < size)
