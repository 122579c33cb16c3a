"""Assembling outgoing phase messages from a worker's cost state."""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from .. import _kernels as K
from ..tensors import ARITY, CostState, block_size
from .messages import Phase, PhaseMessage
from .partition import PartitionMap


@lru_cache(maxsize=None)
def perm_table(arity: int) -> np.ndarray:
    """Permutations of range(arity) in lexicographic order."""
    return np.array(list(itertools.permutations(range(arity))), dtype=np.int64)


def worker_of(state: CostState, partition: PartitionMap) -> int:
    return int(partition.owner_of_pair[state.pairs[0]]) if state.pairs.size else 0


def collect_outgoing(state: CostState, phase: Phase, partition: PartitionMap,
                     iteration: int = 0) -> dict[int, PhaseMessage]:
    """Messages this worker owes its peers for ``phase``, keyed by destination.

    Comp phases: every owned coefficient whose complementary class contains a
    pair owned by another worker goes to each such worker once. Mens(B): the
    owned B entries, addressed to every worker including this one.
    """
    phase = Phase(phase)
    me = worker_of(state, partition)
    n = state.n
    if phase is Phase.MENS_B:
        pr = state.pairs
        tuples = np.stack([pr // n, pr % n], axis=1).astype(np.uint8)
        msg = PhaseMessage(phase, me, iteration, tuples, state.b.ravel()[pr].copy())
        return {w: msg for w in range(partition.workers)}
    if partition.workers == 1:
        return {}
    L = ARITY[phase.tensor]
    arr = state.flat(phase.tensor)
    perms = perm_table(L)
    owner = partition.owner_of_pair
    dummy_d = np.empty(0, np.int64)
    dummy_t = np.empty((0, 2 * L), np.uint8)
    dummy_v = np.empty(0, arr.dtype)
    count = K.collect_classes(arr, state.slot_of_pair, owner, L, n, perms, True,
                              dummy_d, dummy_t, dummy_v)
    dest = np.empty(count, np.int64)
    tuples = np.empty((count, 2 * L), np.uint8)
    vals = np.empty(count, arr.dtype)
    K.collect_classes(arr, state.slot_of_pair, owner, L, n, perms, False, dest, tuples, vals)
    out = {}
    for w in range(partition.workers):
        if w == me:
            continue
        sel = dest == w
        out[w] = PhaseMessage(phase, me, iteration, tuples[sel], vals[sel])
    return out


def ghost_table(state: CostState, name: str, incoming: list[PhaseMessage]) -> tuple[np.ndarray, np.ndarray]:
    """Received coefficients as (sorted global keys, values) for lookup."""
    L = ARITY[name]
    bs = block_size(state.n, L)
    msgs = [m for m in incoming if len(m)]
    if not msgs:
        return np.empty(0, np.int64), np.empty(0, np.float64)
    tuples = np.concatenate([m.tuples for m in msgs]).astype(np.int64)
    vals = np.concatenate([m.values for m in msgs]).astype(np.float64)
    keys = K.tuple_keys(tuples, L, state.n, bs)
    order = np.argsort(keys, kind="stable")
    return keys[order], vals[order]
