from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import TooManyWorkers

Scheme = Callable[[int, int, int, int], int]


def block_cyclic(i: int, j: int, n: int, workers: int) -> int:
    return (i * n + j) % workers


def contiguous(i: int, j: int, n: int, workers: int) -> int:
    # equal-size runs of row-major pairs; sizes differ by at most one
    pid = i * n + j
    q, r = divmod(n * n, workers)
    cut = r * (q + 1)
    return pid // (q + 1) if pid < cut else r + (pid - cut) // q


SCHEMES: dict[str, Scheme] = {"block-cyclic": block_cyclic, "contiguous": contiguous}


@dataclass(frozen=True, eq=False)
class PartitionMap:
    """Owner of every location-pair set G_ij (0-based i, j)."""

    n: int
    workers: int
    scheme: str
    owner_of_pair: np.ndarray

    def owner(self, i: int, j: int) -> int:
        return int(self.owner_of_pair[i * self.n + j])

    def pairs_of(self, worker: int) -> np.ndarray:
        return np.flatnonzero(self.owner_of_pair == worker).astype(np.int64)

    def loads(self) -> list[int]:
        return np.bincount(self.owner_of_pair, minlength=self.workers).tolist()

    def describe(self) -> dict:
        return {"scheme": self.scheme, "workers": self.workers, "loads": self.loads()}


def build_partition(n: int, workers: int, scheme: str | Scheme = "block-cyclic") -> PartitionMap:
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers > n * n:
        raise TooManyWorkers(f"{workers} workers for only {n * n} location pairs")
    if callable(scheme):
        fn, label = scheme, getattr(scheme, "__name__", "custom")
    else:
        if scheme not in SCHEMES:
            raise ValueError(f"unknown partition scheme {scheme!r}; choose from {sorted(SCHEMES)}")
        fn, label = SCHEMES[scheme], scheme
    owner = np.array([fn(i, j, n, workers) for i in range(n) for j in range(n)], dtype=np.int64)
    if owner.min() < 0 or owner.max() >= workers:
        raise ValueError("partition scheme returned an out-of-range worker id")
    return PartitionMap(n, workers, label, owner)
