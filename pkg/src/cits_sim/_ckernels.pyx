# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled hot kernels: CRC-32 and lexicographic Dijkstra."""

import heapq
from libc.stdint cimport uint32_t
from libc.math cimport INFINITY

cdef uint32_t _TABLE[256]


cdef void _init_table():
    cdef uint32_t c
    cdef int i, k
    for i in range(256):
        c = <uint32_t>i
        for k in range(8):
            if c & 1:
                c = (c >> 1) ^ 0xEDB88320u
            else:
                c = c >> 1
        _TABLE[i] = c


_init_table()


def crc32(const unsigned char[:] data, uint32_t value=0):
    """CRC-32 (IEEE 802.3, reflected), compatible with ``zlib.crc32``."""
    cdef uint32_t crc = value ^ 0xFFFFFFFFu
    cdef Py_ssize_t i, n = data.shape[0]
    with nogil:
        for i in range(n):
            crc = _TABLE[(crc ^ data[i]) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFu


def shortest_path(adjacency, Py_ssize_t src, Py_ssize_t dst):
    """Dijkstra with lexicographic tie-break on the index path."""
    cdef Py_ssize_t n = len(adjacency)
    cdef list dist = [INFINITY] * n
    cdef list paths = [None] * n
    cdef bytearray done = bytearray(n)
    cdef double cost, w, cand_cost, cur_cost
    cdef Py_ssize_t u, v
    cdef tuple path, cand_path
    dist[src] = 0.0
    paths[src] = (src,)
    heap = [(0.0, (src,))]
    while heap:
        cost, path = heapq.heappop(heap)
        u = path[len(path) - 1]
        if done[u] or <double>dist[u] != cost or paths[u] != path:
            continue
        done[u] = 1
        if u == dst:
            return cost, list(path)
        for v, w in adjacency[u]:
            if done[v]:
                continue
            cand_cost = cost + w
            cur_cost = dist[v]
            if cand_cost < cur_cost:
                cand_path = path + (v,)
            elif cand_cost == cur_cost:
                cand_path = path + (v,)
                if not cand_path < paths[v]:
                    continue
            else:
                continue
            dist[v] = cand_cost
            paths[v] = cand_path
            heapq.heappush(heap, (cand_cost, cand_path))
    return INFINITY, []
