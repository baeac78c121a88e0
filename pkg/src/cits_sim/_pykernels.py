"""Pure-Python implementations of the hot kernels.

These mirror ``_ckernels.pyx`` exactly and are used whenever the compiled
module is unavailable (or ``CITS_SIM_PURE_PYTHON=1`` is set).
"""

import heapq
import math

_POLY = 0xEDB88320


def _make_table():
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _POLY if c & 1 else c >> 1
        table.append(c)
    return tuple(table)


CRC_TABLE = _make_table()


def crc32(data, value=0):
    """CRC-32 (IEEE 802.3, reflected), compatible with ``zlib.crc32``."""
    table = CRC_TABLE
    crc = value ^ 0xFFFFFFFF
    for b in data:
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


def shortest_path(adjacency, src, dst):
    """Dijkstra over ``adjacency[u] = [(v, cost), ...]`` with positive costs.

    Among equal-cost paths the lexicographically smallest index sequence wins.
    Returns ``(cost, path)``; ``(inf, [])`` when ``dst`` is unreachable.
    """
    best = {src: (0.0, (src,))}
    heap = [(0.0, (src,))]
    done = set()
    while heap:
        cost, path = heapq.heappop(heap)
        u = path[-1]
        if u in done or best[u] != (cost, path):
            continue
        done.add(u)
        if u == dst:
            return cost, list(path)
        for v, w in adjacency[u]:
            if v in done:
                continue
            cand = (cost + w, path + (v,))
            cur = best.get(v)
            if cur is None or cand < cur:
                best[v] = cand
                heapq.heappush(heap, cand)
    return math.inf, []
