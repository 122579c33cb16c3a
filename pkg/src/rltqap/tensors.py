"""Dense storage of the RLT cost model ``LB + B + C + D + E``.

Each worker stores the blocks of the location pairs it owns. The block of
pair ``(i, j)`` in tensor C is the (n-1) x (n-1) submatrix ``C[i, j, :, :]``
with rows/columns ranked past ``i``/``j``; D and E blocks nest one and two
further such submatrices. See :mod:`rltqap._kernels` for the rank layout.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, InvalidTuple, LevelUnavailable, MemoryBudgetExceeded
from .model import Instance, as_permutation

TENSORS = ("B", "C", "D", "E")
ARITY = {"B": 1, "C": 2, "D": 3, "E": 4}
DTYPES = {32: np.float32, 64: np.float64}
EPS = {32: 1e-4, 64: 1e-9}


def tensors_for_level(level: int) -> tuple[str, ...]:
    if level not in (1, 2, 3):
        raise LevelUnavailable(f"RLT level must be 1, 2 or 3, got {level}")
    return TENSORS[: level + 1]


def check_level(n: int, level: int) -> None:
    tensors_for_level(level)
    if n - level < 1:
        raise LevelUnavailable(f"level {level} needs n >= {level + 1}, got n={n}")


def block_shape(n: int, arity: int) -> tuple[int, ...]:
    shape: list[int] = []
    for m in range(1, arity):
        shape += [n - m, n - m]
    return tuple(shape)


def block_size(n: int, arity: int) -> int:
    return math.prod(block_shape(n, arity))


def tensor_entries(n: int, name: str) -> int:
    """Closed form: n^2 (n-1)^2 ... over the tensor's arity."""
    return n * n * block_size(n, ARITY[name])


@dataclass
class MemoryEstimate:
    n: int
    level: int
    precision: int
    workers: int
    entries: dict[str, int]
    bytes: dict[str, int]
    total_bytes: int
    per_worker_bytes: int

    def rows(self) -> list[tuple[str, int, int]]:
        return [(k, self.entries[k], self.bytes[k]) for k in self.entries]


def estimate_memory(n: int, level: int, precision: int = 64, workers: int = 1) -> MemoryEstimate:
    names = tensors_for_level(level)
    width = precision // 8
    entries = {k: tensor_entries(n, k) for k in names}
    nbytes = {k: v * width for k, v in entries.items()}
    total = sum(nbytes.values())
    share = math.ceil(n * n / workers) / (n * n)
    per_worker = nbytes["B"] + sum(int(math.ceil(nbytes[k] * share)) for k in names[1:])
    return MemoryEstimate(n, level, precision, workers, entries, nbytes, total, per_worker)


def format_bytes(b: float) -> str:
    for unit in ("B", "KB", "MB", "GB", "TB", "PB"):
        if abs(b) < 1000 or unit == "PB":
            return f"{b:.1f} {unit}" if unit != "B" else f"{int(b)} B"
        b /= 1000.0
    return f"{b:.1f} PB"


def check_budget(est: MemoryEstimate, budget: int | None, per_worker: bool = False,
                 need: int | None = None) -> None:
    if budget is None:
        return
    if need is None:
        need = est.per_worker_bytes if per_worker else est.total_bytes
    if need > budget:
        top = max(est.bytes, key=est.bytes.get)
        raise MemoryBudgetExceeded(
            f"n={est.n} level {est.level} at {est.precision}-bit needs {format_bytes(need)} "
            f"(tensor {top} alone: {est.entries[top]:,} coefficients, {format_bytes(est.bytes[top])}) "
            f"but the budget is {format_bytes(budget)}",
            required=need,
            budget=budget,
        )


@dataclass
class CostState:
    """Cost coefficients held by one worker.

    ``b`` is always the full n x n matrix (refreshed by the broadcast phase);
    only entries of owned pairs are authoritative. ``c``/``d``/``e`` have one
    block per owned pair, in the order of ``pairs``.
    """

    n: int
    level: int
    precision: int
    pairs: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray | None = None
    e: np.ndarray | None = None
    lb: float = 0.0
    slot_of_pair: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64)
        slot = np.full(self.n * self.n, -1, dtype=np.int64)
        slot[self.pairs] = np.arange(self.pairs.size)
        self.slot_of_pair = slot

    @property
    def dtype(self):
        return DTYPES[self.precision]

    @property
    def eps(self) -> float:
        return EPS[self.precision]

    @property
    def tensor_names(self) -> tuple[str, ...]:
        return tensors_for_level(self.level)

    def tensor(self, name: str) -> np.ndarray:
        t = {"B": self.b, "C": self.c, "D": self.d, "E": self.e}[name]
        if t is None:
            raise LevelUnavailable(f"tensor {name} is not present at level {self.level}")
        return t

    def flat(self, name: str) -> np.ndarray:
        """(owned pairs, block size) view of C, D or E."""
        t = self.tensor(name)
        return t.reshape(t.shape[0], -1)

    def owns(self, i: int, j: int) -> bool:
        return self.slot_of_pair[i * self.n + j] >= 0

    def owned_pairs(self) -> list[tuple[int, int]]:
        return [(int(p) // self.n, int(p) % self.n) for p in self.pairs]

    def min_coefficient(self) -> float:
        vals = [float(self.b.ravel()[self.pairs].min())]
        for name in self.tensor_names[1:]:
            t = self.tensor(name)
            if t.size:
                vals.append(float(t.min()))
        return min(vals)

    def nbytes(self) -> int:
        return sum(self.tensor(k).nbytes for k in self.tensor_names)

    def copy(self) -> "CostState":
        return CostState(
            self.n, self.level, self.precision, self.pairs.copy(), self.b.copy(), self.c.copy(),
            None if self.d is None else self.d.copy(),
            None if self.e is None else self.e.copy(),
            self.lb,
        )


def init_costs(inst: Instance, level: int, precision: int = 64,
               pairs: Sequence[int] | np.ndarray | None = None,
               budget: int | None = None) -> CostState:
    """Starting point: LB = 0, B = 0, C[i,j,k,n] = f[i,k] * d[j,n], D = E = 0."""
    n = inst.n
    check_level(n, level)
    if precision not in DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {precision}")
    pairs = np.arange(n * n) if pairs is None else np.sort(np.asarray(pairs, dtype=np.int64))
    est = estimate_memory(n, level, precision)
    share = pairs.size / (n * n)
    need = est.bytes["B"] + int(sum(est.bytes[k] for k in est.bytes if k != "B") * share)
    check_budget(est, budget, need=need)
    dtype = DTYPES[precision]
    S = pairs.size
    c = np.empty((S,) + block_shape(n, 2), dtype=dtype)
    others = [np.delete(np.arange(n), x) for x in range(n)]
    for s, pr in enumerate(pairs):
        i, j = divmod(int(pr), n)
        c[s] = np.outer(inst.flow[i, others[i]], inst.dist[j, others[j]])
    d = np.zeros((S,) + block_shape(n, 3), dtype=dtype) if level >= 2 else None
    e = np.zeros((S,) + block_shape(n, 4), dtype=dtype) if level >= 3 else None
    return CostState(n, level, precision, pairs, np.zeros((n, n), dtype=dtype), c, d, e, 0.0)


def _pairs_of(tup: Sequence[int]) -> list[tuple[int, int]]:
    t = [int(x) for x in tup]
    if len(t) % 2 or not 2 <= len(t) <= 8:
        raise InvalidTuple(f"tuple must hold 1 to 4 (object, location) pairs: {tup}")
    prs = [(t[a], t[a + 1]) for a in range(0, len(t), 2)]
    if len({p[0] for p in prs}) != len(prs) or len({p[1] for p in prs}) != len(prs):
        raise InvalidTuple(f"objects and locations must be pairwise distinct: {tup}")
    return prs


def complementaries(level, tup: Sequence[int]) -> list[tuple[int, ...]]:
    """All orderings of the tuple's pairs, sorted lexicographically.

    ``level`` names the tensor ("C", "D", "E") or gives its pair count.
    """
    arity = ARITY[level] if isinstance(level, str) else int(level)
    prs = _pairs_of(tup)
    if len(prs) != arity or arity < 2:
        raise InvalidTuple(f"tuple {tuple(tup)} is not a valid {level} index")
    out = {tuple(x for pr in order for x in pr) for order in itertools.permutations(prs)}
    return sorted(out)


def tuple_offset(tup: Sequence[int], n: int) -> tuple[int, int]:
    """Map an index tuple to (leading pair id, offset inside that pair's block)."""
    prs = _pairs_of(tup)
    if any(not (0 <= a < n and 0 <= b < n) for a, b in prs):
        raise InvalidTuple(f"tuple {tuple(tup)} out of range for n={n}")
    L = len(prs)
    objs = np.array([p[0] for p in prs], dtype=np.int64)
    locs = np.array([p[1] for p in prs], dtype=np.int64)
    return int(objs[0] * n + locs[0]), int(K.encode_offset(objs, locs, L, n))


def offset_tuple(pair: int, offset: int, arity: int, n: int) -> tuple[int, ...]:
    """Inverse of :func:`tuple_offset`."""
    if not 0 <= offset < block_size(n, arity):
        raise InvalidTuple(f"offset {offset} out of range")
    objs = np.empty(arity, dtype=np.int64)
    locs = np.empty(arity, dtype=np.int64)
    K.decode_offset(offset, pair // n, pair % n, arity, n, objs, locs)
    return tuple(int(x) for pr in zip(objs, locs) for x in pr)


def evaluate_modified_objective(states: CostState | Iterable[CostState], inst: Instance, p) -> float:
    """Cost of assignment ``p`` under the current coefficients.

    ``states`` may be a single full state or the per-worker parts of a
    partitioned one; LB is taken once.
    """
    parts = [states] if isinstance(states, CostState) else list(states)
    p = as_permutation(p)
    if p.n != inst.n or any(s.n != inst.n for s in parts):
        raise DimensionMismatch("permutation/state size does not match the instance")
    assign = np.ascontiguousarray(p.assign, dtype=np.int64)
    n = inst.n
    total = parts[0].lb
    for st in parts:
        own = st.pairs
        sel = own[assign[own // n] == own % n]
        total += float(st.b.ravel()[sel].astype(np.float64).sum())
        for name in st.tensor_names[1:]:
            total += K.gather_selected(st.flat(name), own, ARITY[name], n, assign)
    return float(total)


# checkpoints ---------------------------------------------------------------

_CKPT = struct.Struct("<4sBBBBHId")
_CKPT_MAGIC = b"RLTS"
_CKPT_VERSION = 1


def save_checkpoint(state: CostState, path: str | Path, partition_id: int = 0) -> None:
    header = _CKPT.pack(_CKPT_MAGIC, _CKPT_VERSION, state.n, state.level, state.precision,
                        partition_id, state.pairs.size, state.lb)
    le = np.dtype(state.dtype).newbyteorder("<")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(state.pairs.astype("<u2").tobytes())
        for name in state.tensor_names:
            fh.write(np.ascontiguousarray(state.tensor(name), dtype=le).tobytes())


def load_checkpoint(path: str | Path) -> tuple[CostState, int]:
    raw = Path(path).read_bytes()
    magic, version, n, level, precision, pid, npairs, lb = _CKPT.unpack_from(raw, 0)
    if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
        raise ValueError("not an rltqap checkpoint")
    pos = _CKPT.size
    pairs = np.frombuffer(raw, dtype="<u2", count=npairs, offset=pos).astype(np.int64)
    pos += 2 * npairs
    le = np.dtype(DTYPES[precision]).newbyteorder("<")
    arrays = {}
    for name in tensors_for_level(level):
        shape = (n, n) if name == "B" else (npairs,) + block_shape(n, ARITY[name])
        count = math.prod(shape)
        arrays[name] = np.frombuffer(raw, dtype=le, count=count, offset=pos).reshape(shape).astype(DTYPES[precision])
        pos += count * le.itemsize
    if pos != len(raw):
        raise ValueError("checkpoint size does not match its header")
    st = CostState(n, level, precision, pairs, arrays["B"], arrays["C"],
                   arrays.get("D"), arrays.get("E"), lb)
    return st, pid
