"""Compiled inner loops.

Tensor blocks use the rank layout: for a tuple of ``L`` (object, location)
pairs led by ``(i, j)``, the remaining pairs are stored at mixed-radix offset
``(rank(o1), rank(l1), rank(o2), rank(l2), ...)`` with radices
``n-1, n-1, n-2, n-2, ...`` where ``rank(o_m)`` counts the objects below
``o_m`` that are not among ``o_0..o_{m-1}`` (likewise for locations).
"""

from __future__ import annotations

import numpy as np
from numba import njit

INF = np.inf

# error codes returned by kernels
OK = 0
ERR_NEGATIVE = 1
ERR_POTENTIAL = 2
ERR_MISSING = 3


@njit(cache=True, nogil=True)
def hungarian_core(a, m, u, v, p, way, minv, used, match):
    """Shortest augmenting path Hungarian method on the m x m float64 matrix a.

    Fills row potentials u[1..m], column potentials v[1..m] and match[row].
    Ties resolve to the lowest column index; rows are inserted in order.
    """
    for q in range(m + 1):
        u[q] = 0.0
        v[q] = 0.0
        p[q] = 0
        way[q] = 0
    for i in range(1, m + 1):
        p[0] = i
        j0 = 0
        for q in range(m + 1):
            minv[q] = INF
            used[q] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    for j in range(1, m + 1):
        match[p[j] - 1] = j - 1


@njit(cache=True, nogil=True)
def concentrate_batch(mats, values, eps):
    """Solve every m x m matrix of ``mats`` (shape (B, m, m)) in place.

    ``values[b]`` receives the optimal assignment cost; ``mats[b]`` is
    overwritten by its clamped residual. Returns (status, offending batch).
    """
    nb = mats.shape[0]
    m = mats.shape[1]
    a = np.empty((m, m), dtype=np.float64)
    u = np.empty(m + 1, dtype=np.float64)
    v = np.empty(m + 1, dtype=np.float64)
    minv = np.empty(m + 1, dtype=np.float64)
    p = np.empty(m + 1, dtype=np.int64)
    way = np.empty(m + 1, dtype=np.int64)
    used = np.empty(m + 1, dtype=np.bool_)
    match = np.empty(m, dtype=np.int64)
    for b in range(nb):
        allzero = True
        scale = 1.0
        for r in range(m):
            for s in range(m):
                x = np.float64(mats[b, r, s])
                if x < -eps:
                    return ERR_NEGATIVE, b
                if x != 0.0:
                    allzero = False
                if x > scale:
                    scale = x
                a[r, s] = x
        if allzero:
            values[b] = 0.0
            continue
        hungarian_core(a, m, u, v, p, way, minv, used, match)
        total = 0.0
        for r in range(m):
            total += a[r, match[r]]
        values[b] = total
        tol = 1e-9 * scale
        for r in range(m):
            for s in range(m):
                red = a[r, s] - u[r + 1] - v[s + 1]
                if red < -tol:
                    return ERR_POTENTIAL, b
                if red < 0.0 or s == match[r]:
                    red = 0.0
                mats[b, r, s] = red
    return OK, -1


@njit(cache=True, nogil=True)
def encode_offset(objs, locs, L, n):
    off = 0
    for m in range(1, L):
        ro = objs[m]
        rl = locs[m]
        for t in range(m):
            if objs[t] < objs[m]:
                ro -= 1
            if locs[t] < locs[m]:
                rl -= 1
        off = (off * (n - m) + ro) * (n - m) + rl
    return off


@njit(cache=True, nogil=True)
def _unrank(r, prev, cnt):
    # r-th value (0-based) not present in prev[0..cnt)
    v = r
    changed = True
    while changed:
        changed = False
        c = 0
        for t in range(cnt):
            if prev[t] <= v:
                c += 1
        w = r + c
        if w != v:
            v = w
            changed = True
    return v


@njit(cache=True, nogil=True)
def decode_offset(off, i, j, L, n, objs, locs):
    objs[0] = i
    locs[0] = j
    ro = np.empty(L, dtype=np.int64)
    rl = np.empty(L, dtype=np.int64)
    for m in range(L - 1, 0, -1):
        base = n - m
        rl[m] = off % base
        off //= base
        ro[m] = off % base
        off //= base
    for m in range(1, L):
        objs[m] = _unrank(ro[m], objs, m)
        locs[m] = _unrank(rl[m], locs, m)


@njit(cache=True, nogil=True)
def tuple_keys(tuples, L, n, blocksize):
    """Global key (leading pair id * blocksize + offset) for each tuple row."""
    cnt = tuples.shape[0]
    keys = np.empty(cnt, dtype=np.int64)
    objs = np.empty(L, dtype=np.int64)
    locs = np.empty(L, dtype=np.int64)
    for e in range(cnt):
        for m in range(L):
            objs[m] = tuples[e, 2 * m]
            locs[m] = tuples[e, 2 * m + 1]
        keys[e] = (objs[0] * n + locs[0]) * blocksize + encode_offset(objs, locs, L, n)
    return keys


@njit(cache=True, nogil=True)
def _next_combination(o, L, n):
    i = L - 1
    while i >= 0 and o[i] == n - L + i:
        i -= 1
    if i < 0:
        return False
    o[i] += 1
    for t in range(i + 1, L):
        o[t] = o[t - 1] + 1
    return True


@njit(cache=True, nogil=True)
def _next_distinct(l, L, n):
    # odometer over L-tuples with pairwise distinct entries, lexicographic
    while True:
        i = L - 1
        while i >= 0:
            l[i] += 1
            if l[i] < n:
                break
            l[i] = 0
            i -= 1
        if i < 0:
            return False
        ok = True
        for a in range(L):
            for b in range(a + 1, L):
                if l[a] == l[b]:
                    ok = False
        if ok:
            return True


@njit(cache=True, nogil=True)
def _first_distinct(l, L):
    for t in range(L):
        l[t] = t


@njit(cache=True, nogil=True)
def mean_classes(arr, slot_of_pair, L, n, perms, ghost_keys, ghost_vals):
    """Replace every locally owned coefficient by the mean of its class.

    A class is the set of L! orderings of L pairs; members are visited in
    lexicographic tuple order, summed in float64 and divided once.
    Returns (status, missing key).
    """
    nperm = perms.shape[0]
    blocksize = arr.shape[1]
    o = np.empty(L, dtype=np.int64)
    l = np.empty(L, dtype=np.int64)
    mo = np.empty(L, dtype=np.int64)
    ml = np.empty(L, dtype=np.int64)
    slots = np.empty(nperm, dtype=np.int64)
    offs = np.empty(nperm, dtype=np.int64)
    ng = ghost_keys.shape[0]
    for t in range(L):
        o[t] = t
    more_o = True
    while more_o:
        _first_distinct(l, L)
        more_l = True
        while more_l:
            owned = False
            for t in range(L):
                if slot_of_pair[o[t] * n + l[t]] >= 0:
                    owned = True
            if owned:
                total = 0.0
                for q in range(nperm):
                    for t in range(L):
                        mo[t] = o[perms[q, t]]
                        ml[t] = l[perms[q, t]]
                    lead = mo[0] * n + ml[0]
                    off = encode_offset(mo, ml, L, n)
                    s = slot_of_pair[lead]
                    slots[q] = s
                    offs[q] = off
                    if s >= 0:
                        total += np.float64(arr[s, off])
                    else:
                        key = lead * blocksize + off
                        idx = np.searchsorted(ghost_keys, key)
                        if idx >= ng or ghost_keys[idx] != key:
                            return ERR_MISSING, key
                        total += np.float64(ghost_vals[idx])
                mean = total / nperm
                for q in range(nperm):
                    if slots[q] >= 0:
                        arr[slots[q], offs[q]] = mean
            more_l = _next_distinct(l, L, n)
        more_o = _next_combination(o, L, n)
    return OK, -1


@njit(cache=True, nogil=True)
def collect_classes(arr, slot_of_pair, owner_of_pair, L, n, perms, count_only,
                    out_dest, out_tuples, out_vals):
    """Owned coefficients needed by other workers.

    A member is emitted once for every distinct peer owning another pair of
    its class. With ``count_only`` nothing is written; the count is returned.
    """
    nperm = perms.shape[0]
    o = np.empty(L, dtype=np.int64)
    l = np.empty(L, dtype=np.int64)
    mo = np.empty(L, dtype=np.int64)
    ml = np.empty(L, dtype=np.int64)
    peers = np.empty(L, dtype=np.int64)
    cnt = 0
    for t in range(L):
        o[t] = t
    more_o = True
    while more_o:
        _first_distinct(l, L)
        more_l = True
        while more_l:
            owned = False
            remote = False
            for t in range(L):
                pr = o[t] * n + l[t]
                if slot_of_pair[pr] >= 0:
                    owned = True
                else:
                    remote = True
            if owned and remote:
                npeer = 0
                for t in range(L):
                    pr = o[t] * n + l[t]
                    if slot_of_pair[pr] < 0:
                        w = owner_of_pair[pr]
                        dup = False
                        for z in range(npeer):
                            if peers[z] == w:
                                dup = True
                        if not dup:
                            peers[npeer] = w
                            npeer += 1
                # ascending peer order
                for a in range(npeer):
                    for b in range(a + 1, npeer):
                        if peers[b] < peers[a]:
                            tmp = peers[a]
                            peers[a] = peers[b]
                            peers[b] = tmp
                for q in range(nperm):
                    for t in range(L):
                        mo[t] = o[perms[q, t]]
                        ml[t] = l[perms[q, t]]
                    s = slot_of_pair[mo[0] * n + ml[0]]
                    if s < 0:
                        continue
                    if count_only:
                        cnt += npeer
                        continue
                    off = encode_offset(mo, ml, L, n)
                    val = arr[s, off]
                    for z in range(npeer):
                        out_dest[cnt] = peers[z]
                        for t in range(L):
                            out_tuples[cnt, 2 * t] = mo[t]
                            out_tuples[cnt, 2 * t + 1] = ml[t]
                        out_vals[cnt] = val
                        cnt += 1
            more_l = _next_distinct(l, L, n)
        more_o = _next_combination(o, L, n)
    return cnt


@njit(cache=True, nogil=True)
def gather_selected(arr, pairs, L, n, assign):
    """Sum of owned coefficients selected by a full assignment (object -> location)."""
    total = 0.0
    objs = np.empty(L, dtype=np.int64)
    locs = np.empty(L, dtype=np.int64)
    blocksize = arr.shape[1]
    for s in range(pairs.shape[0]):
        i = pairs[s] // n
        j = pairs[s] % n
        if assign[i] != j:
            continue
        for off in range(blocksize):
            decode_offset(off, i, j, L, n, objs, locs)
            ok = True
            for m in range(1, L):
                if assign[objs[m]] != locs[m]:
                    ok = False
                    break
            if ok:
                total += np.float64(arr[s, off])
    return total
