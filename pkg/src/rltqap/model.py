"""QAP instances, QAPLIB text I/O, objective evaluation and a brute-force oracle.

Objects and locations are 0-based everywhere inside the package. A permutation
``assign`` places object ``i`` at location ``assign[i]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InstanceTooLarge,
    InvalidPermutation,
    NegativeEntry,
    NonNumericToken,
    NTooSmall,
    TokenCountMismatch,
)

BRUTE_FORCE_CAP = 9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Instance:
    """Flow/distance pair defining a QAP of size ``n``.

    Diagonals are kept as read but never contribute to any cost.
    """

    flow: np.ndarray
    dist: np.ndarray
    name: str = ""
    known_optimum: float | None = None
    n: int = field(init=False)

    def __post_init__(self):
        flow = np.asarray(self.flow, dtype=np.float64)
        dist = np.asarray(self.dist, dtype=np.float64)
        if flow.ndim != 2 or flow.shape[0] != flow.shape[1]:
            raise DimensionMismatch(f"flow matrix must be square, got shape {flow.shape}")
        if dist.shape != flow.shape:
            raise DimensionMismatch(f"dist shape {dist.shape} != flow shape {flow.shape}")
        n = flow.shape[0]
        if n < 2:
            raise NTooSmall(f"n must be >= 2, got {n}")
        for label, m in (("flow", flow), ("dist", dist)):
            if not np.all(np.isfinite(m)):
                raise NonNumericToken(f"{label} matrix has non-finite entries")
            if np.any(m < 0):
                raise NegativeEntry(f"{label} matrix has negative entries")
        if self.known_optimum is not None and not self.known_optimum >= 0:
            raise ValueError("known_optimum must be non-negative")
        object.__setattr__(self, "flow", _frozen(flow))
        object.__setattr__(self, "dist", _frozen(dist))
        object.__setattr__(self, "n", n)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.n == other.n
            and self.name == other.name
            and self.known_optimum == other.known_optimum
            and np.array_equal(self.flow, other.flow)
            and np.array_equal(self.dist, other.dist)
        )

    def __repr__(self):
        return f"Instance(name={self.name!r}, n={self.n}, known_optimum={self.known_optimum})"

    def swapped(self) -> "Instance":
        """Same instance with the roles of the two matrices exchanged."""
        return Instance(self.dist, self.flow, self.name, self.known_optimum)

    def with_optimum(self, value: float | None) -> "Instance":
        return Instance(self.flow, self.dist, self.name, value)


class Permutation:
    """Immutable bijection object -> location."""

    __slots__ = ("assign",)

    def __init__(self, assign: Sequence[int] | np.ndarray):
        a = np.array(assign, dtype=np.int64).reshape(-1)
        n = a.size
        if n == 0 or np.any(a < 0) or np.any(a >= n) or np.unique(a).size != n:
            raise InvalidPermutation(f"not a permutation of 0..{n - 1}: {list(a)}")
        a.setflags(write=False)
        self.assign = a

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    @property
    def n(self) -> int:
        return int(self.assign.size)

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.assign)
        inv[self.assign] = np.arange(self.n)
        return Permutation(inv)

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return int(self.assign[i])

    def __iter__(self):
        return iter(int(x) for x in self.assign)

    def __eq__(self, other):
        if isinstance(other, Permutation):
            return np.array_equal(self.assign, other.assign)
        return NotImplemented

    def __hash__(self):
        return hash(tuple(self.assign.tolist()))

    def __repr__(self):
        return f"Permutation({self.assign.tolist()})"


def as_permutation(p) -> Permutation:
    return p if isinstance(p, Permutation) else Permutation(p)


def _parse_number(tok: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise NonNumericToken(f"not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise NonNumericToken(f"not a finite number: {tok!r}")
    return v


def parse_qaplib(text: str, name: str = "", known_optimum: float | None = None,
                 swap: bool = False) -> Instance:
    """Parse QAPLIB text: ``n`` followed by the flow then the distance matrix.

    ``swap=True`` reads the first matrix as distances instead.
    """
    tokens = text.split()
    if not tokens:
        raise TokenCountMismatch("empty input")
    try:
        n = int(tokens[0])
    except ValueError:
        raise NonNumericToken(f"size token is not an integer: {tokens[0]!r}") from None
    if n < 2:
        raise NTooSmall(f"n must be >= 2, got {n}")
    expected = 1 + 2 * n * n
    if len(tokens) != expected:
        raise TokenCountMismatch(f"expected {expected} tokens for n={n}, got {len(tokens)}")
    values = np.array([_parse_number(t) for t in tokens[1:]], dtype=np.float64)
    if np.any(values < 0):
        raise NegativeEntry("matrices must be non-negative")
    first = values[: n * n].reshape(n, n)
    second = values[n * n:].reshape(n, n)
    if swap:
        first, second = second, first
    return Instance(first, second, name=name, known_optimum=known_optimum)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def serialize_qaplib(inst: Instance, swap: bool = False) -> str:
    first, second = (inst.dist, inst.flow) if swap else (inst.flow, inst.dist)
    width = max(len(_fmt(v)) for v in np.concatenate([first.ravel(), second.ravel()]))
    lines = [str(inst.n), ""]
    for m in (first, second):
        lines.extend(" ".join(_fmt(v).rjust(width) for v in row) for row in m)
        lines.append("")
    return "\n".join(lines)


def load_instance(path: str | Path, swap: bool = False,
                  known_optimum: float | None = None) -> Instance:
    from .optima import known_optimum as lookup

    path = Path(path)
    name = path.stem
    if known_optimum is None:
        known_optimum = lookup(name)
    return parse_qaplib(path.read_text(), name=name, known_optimum=known_optimum, swap=swap)


def evaluate_permutation(inst: Instance, p) -> float:
    """Sum of f[i,k] * d[p(i),p(k)] over ordered pairs i != k."""
    p = as_permutation(p)
    if p.n != inst.n:
        raise DimensionMismatch(f"permutation has length {p.n}, instance has n={inst.n}")
    a = p.assign
    prod = inst.flow * inst.dist[np.ix_(a, a)]
    return float(prod.sum() - np.trace(prod))


def brute_force_optimum(inst: Instance, cap: int = BRUTE_FORCE_CAP,
                        chunk: int = 40320) -> tuple[Permutation, float]:
    """Exhaustive minimum; ties go to the lexicographically first permutation."""
    n = inst.n
    if n > cap:
        raise InstanceTooLarge(f"n={n} exceeds brute-force cap {cap}")
    flow = inst.flow.copy()
    np.fill_diagonal(flow, 0.0)
    best_cost = math.inf
    best = None
    perms = itertools.permutations(range(n))
    while True:
        block = np.array(list(itertools.islice(perms, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        sub = inst.dist[block[:, :, None], block[:, None, :]]
        costs = np.einsum("ik,bik->b", flow, sub)
        k = int(np.argmin(costs))
        if costs[k] < best_cost:
            best_cost = float(costs[k])
            best = block[k]
    return Permutation(best), best_cost


def random_instance(n: int, seed: int | None = None, high: int = 10,
                    symmetric: bool = False, name: str | None = None) -> Instance:
    """Uniform random integer instance (zero diagonals), for tests and demos."""
    rng = np.random.default_rng(seed)
    flow = rng.integers(0, high, size=(n, n)).astype(np.float64)
    dist = rng.integers(0, high, size=(n, n)).astype(np.float64)
    if symmetric:
        flow = np.triu(flow, 1) + np.triu(flow, 1).T
        dist = np.triu(dist, 1) + np.triu(dist, 1).T
    np.fill_diagonal(flow, 0.0)
    np.fill_diagonal(dist, 0.0)
    return Instance(flow, dist, name=name or f"rand{n}_{seed}")


def parse_permutation(text: str, n: int) -> Permutation:
    """Read a permutation from whitespace-separated integers.

    Accepts QAPLIB ``.sln`` files (``n cost`` header line) as well as bare
    lists; 1-based unless a ``0`` appears.
    """
    tokens = text.split()
    if len(tokens) == n + 2 and tokens[0] == str(n):
        tokens = tokens[2:]
    if len(tokens) != n:
        raise InvalidPermutation(f"expected {n} entries, got {len(tokens)}")
    try:
        vals = [int(t) for t in tokens]
    except ValueError:
        raise InvalidPermutation(f"non-integer entry in {tokens}") from None
    if min(vals) >= 1:
        vals = [v - 1 for v in vals]
    return Permutation(vals)


def all_permutations(n: int) -> Iterable[Permutation]:
    for t in itertools.permutations(range(n)):
        yield Permutation(t)
