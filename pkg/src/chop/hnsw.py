"""Hierarchical navigable small-world graph for approximate cosine search.

Vectors are row-normalized float32; graph distance is 1 - cosine. A new node
links to m diversity-selected neighbors per layer and existing nodes' lists
are re-pruned at 2m (layer 0) or m (above). The hot loops are numba-compiled;
level assignment comes from a seeded generator, so builds are reproducible.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _dot(vectors, i, q):
    s = np.float32(0.0)
    row = vectors[i]
    for t in range(row.shape[0]):
        s += row[t] * q[t]
    return s


@njit(cache=True)
def _heap_push(heap_d, heap_i, size, d, i):
    pos = size
    heap_d[pos] = d
    heap_i[pos] = i
    while pos > 0:
        parent = (pos - 1) >> 1
        if heap_d[parent] <= heap_d[pos]:
            break
        heap_d[parent], heap_d[pos] = heap_d[pos], heap_d[parent]
        heap_i[parent], heap_i[pos] = heap_i[pos], heap_i[parent]
        pos = parent
    return size + 1


@njit(cache=True)
def _heap_pop(heap_d, heap_i, size):
    size -= 1
    heap_d[0] = heap_d[size]
    heap_i[0] = heap_i[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        if left >= size:
            break
        smallest = left
        right = left + 1
        if right < size and heap_d[right] < heap_d[left]:
            smallest = right
        if heap_d[pos] <= heap_d[smallest]:
            break
        heap_d[pos], heap_d[smallest] = heap_d[smallest], heap_d[pos]
        heap_i[pos], heap_i[smallest] = heap_i[smallest], heap_i[pos]
        pos = smallest
    return size


@njit(cache=True, fastmath=True)
def _search_layer(vectors, table, counts, visit, stamp, entries, n_entries, q, ef,
                  cand_d, cand_i, best_d, best_i, out_d, out_i):
    """Greedy best-first search on one layer; fills out_* ascending by distance."""
    cand_size = 0
    best_size = 0
    for t in range(n_entries):
        e = entries[t]
        if visit[e] == stamp:
            continue
        visit[e] = stamp
        dist = np.float32(1.0) - _dot(vectors, e, q)
        cand_size = _heap_push(cand_d, cand_i, cand_size, dist, e)
        best_size = _heap_push(best_d, best_i, best_size, -dist, e)
    while cand_size > 0:
        cd = cand_d[0]
        cn = cand_i[0]
        cand_size = _heap_pop(cand_d, cand_i, cand_size)
        if best_size >= ef and cd > -best_d[0]:
            break
        cnt = counts[cn]
        for j in range(cnt):
            nb = table[cn, j]
            if visit[nb] == stamp:
                continue
            visit[nb] = stamp
            dist = np.float32(1.0) - _dot(vectors, nb, q)
            if best_size < ef:
                cand_size = _heap_push(cand_d, cand_i, cand_size, dist, nb)
                best_size = _heap_push(best_d, best_i, best_size, -dist, nb)
            elif dist < -best_d[0]:
                cand_size = _heap_push(cand_d, cand_i, cand_size, dist, nb)
                best_size = _heap_pop(best_d, best_i, best_size)
                best_size = _heap_push(best_d, best_i, best_size, -dist, nb)
    k = best_size
    for idx in range(k - 1, -1, -1):
        out_d[idx] = -best_d[0]
        out_i[idx] = best_i[0]
        best_size = _heap_pop(best_d, best_i, best_size)
    return k


@njit(cache=True, fastmath=True)
def _select(vectors, ids, dists, count, m, out):
    """Diversity heuristic: keep candidates closer to the query than to any
    kept neighbor. ``ids`` must be sorted ascending by distance."""
    sel = 0
    for ci in range(count):
        if sel >= m:
            break
        cand = ids[ci]
        good = True
        for sj in range(sel):
            d = np.float32(1.0) - _dot(vectors, cand, vectors[out[sj]])
            if d < dists[ci]:
                good = False
                break
        if good:
            out[sel] = cand
            sel += 1
    return sel


@njit(cache=True, fastmath=True)
def _build(vectors, levels, m, m0, efc):
    n = vectors.shape[0]
    max_level = 0
    for i in range(n):
        if levels[i] > max_level:
            max_level = levels[i]
    table = np.zeros((max_level + 1, n, m0), dtype=np.int32)
    counts = np.zeros((max_level + 1, n), dtype=np.int32)
    visit = np.zeros(n, dtype=np.int64)
    stamp = 0

    cand_d = np.empty(n + 2, dtype=np.float32)
    cand_i = np.empty(n + 2, dtype=np.int32)
    heap_cap = efc + m0 + 4
    best_d = np.empty(heap_cap, dtype=np.float32)
    best_i = np.empty(heap_cap, dtype=np.int32)
    out_d = np.empty(heap_cap, dtype=np.float32)
    out_i = np.empty(heap_cap, dtype=np.int32)
    sel_buf = np.empty(m0 + 1, dtype=np.int32)
    prune_buf = np.empty(m0 + 1, dtype=np.int32)
    merged_i = np.empty(m0 + 2, dtype=np.int32)
    merged_d = np.empty(m0 + 2, dtype=np.float32)
    entries = np.empty(heap_cap, dtype=np.int32)

    entry_point = 0
    cur_max = levels[0]

    for node in range(1, n):
        level = levels[node]
        q = vectors[node]
        ep = entry_point
        layer = cur_max
        while layer > level:
            stamp += 1
            entries[0] = ep
            _search_layer(vectors, table[layer], counts[layer], visit, stamp,
                          entries, 1, q, 1, cand_d, cand_i, best_d, best_i, out_d, out_i)
            ep = out_i[0]
            layer -= 1

        n_entries = 1
        entries[0] = ep
        start = level if level < cur_max else cur_max
        for layer in range(start, -1, -1):
            stamp += 1
            k = _search_layer(vectors, table[layer], counts[layer], visit, stamp,
                              entries, n_entries, q, efc, cand_d, cand_i, best_d, best_i,
                              out_d, out_i)
            cap = m0 if layer == 0 else m
            sel = _select(vectors, out_i, out_d, k, m, sel_buf)
            for sj in range(sel):
                table[layer, node, sj] = sel_buf[sj]
            counts[layer, node] = sel
            for sj in range(sel):
                nb = sel_buf[sj]
                cnt = counts[layer, nb]
                if cnt < cap:
                    table[layer, nb, cnt] = node
                    counts[layer, nb] = cnt + 1
                else:
                    for t in range(cnt):
                        merged_i[t] = table[layer, nb, t]
                        merged_d[t] = np.float32(1.0) - _dot(vectors, merged_i[t], vectors[nb])
                    merged_i[cnt] = node
                    merged_d[cnt] = np.float32(1.0) - _dot(vectors, node, vectors[nb])
                    for a in range(1, cnt + 1):  # insertion sort, ascending
                        kd = merged_d[a]
                        ki = merged_i[a]
                        b = a - 1
                        while b >= 0 and merged_d[b] > kd:
                            merged_d[b + 1] = merged_d[b]
                            merged_i[b + 1] = merged_i[b]
                            b -= 1
                        merged_d[b + 1] = kd
                        merged_i[b + 1] = ki
                    pruned = _select(vectors, merged_i, merged_d, cnt + 1, cap, prune_buf)
                    for t in range(pruned):
                        table[layer, nb, t] = prune_buf[t]
                    counts[layer, nb] = pruned
            for t in range(k):
                entries[t] = out_i[t]
            n_entries = k

        if level > cur_max:
            entry_point = node
            cur_max = level

    return table, counts, entry_point, cur_max


@njit(cache=True, fastmath=True)
def _query(vectors, table, counts, entry_point, max_level, q, ef):
    n = vectors.shape[0]
    visit = np.zeros(n, dtype=np.int64)
    cand_d = np.empty(n + 2, dtype=np.float32)
    cand_i = np.empty(n + 2, dtype=np.int32)
    heap_cap = ef + 4
    best_d = np.empty(heap_cap, dtype=np.float32)
    best_i = np.empty(heap_cap, dtype=np.int32)
    out_d = np.empty(heap_cap, dtype=np.float32)
    out_i = np.empty(heap_cap, dtype=np.int32)
    entries = np.empty(1, dtype=np.int32)
    stamp = 0
    ep = entry_point
    for layer in range(max_level, 0, -1):
        stamp += 1
        entries[0] = ep
        _search_layer(vectors, table[layer], counts[layer], visit, stamp, entries, 1, q, 1,
                      cand_d, cand_i, best_d, best_i, out_d, out_i)
        ep = out_i[0]
    stamp += 1
    entries[0] = ep
    k = _search_layer(vectors, table[0], counts[0], visit, stamp, entries, 1, q, ef,
                      cand_d, cand_i, best_d, best_i, out_d, out_i)
    return out_i[:k].copy()


class HNSWGraph:
    """Build once over a fixed matrix, then serve approximate top-ef queries."""

    def __init__(self, matrix: np.ndarray, m: int = 16, ef_construction: int = 200,
                 seed: int = 1337) -> None:
        if m < 2:
            raise ValueError(f"m must be >= 2, got {m}")
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        self._vectors = np.ascontiguousarray((matrix / norms), dtype=np.float32)
        n = self._vectors.shape[0]
        ml = 1.0 / math.log(m)
        rng = np.random.Generator(np.random.PCG64(seed))
        levels = np.floor(-np.log(np.maximum(rng.random(n), 1e-12)) * ml).astype(np.int32)
        self._table, self._counts, self._entry, self._max_level = _build(
            self._vectors, levels, m, 2 * m, ef_construction
        )
        self.size = n

    def search(self, query: np.ndarray, ef: int) -> list[int]:
        qnorm = float(np.linalg.norm(query))
        q = np.ascontiguousarray(query / qnorm if qnorm else query, dtype=np.float32)
        ids = _query(self._vectors, self._table, self._counts, self._entry,
                     self._max_level, q, max(ef, 1))
        return [int(i) for i in ids]
