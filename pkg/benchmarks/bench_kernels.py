"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

CRC-32 is also timed against ``zlib.crc32`` as a baseline. Every backend's
output is cross-checked before timing.
"""

import argparse
import random
import timeit
import zlib

from cits_sim.kernels import BACKENDS


def grid(n, rng):
    """``n``x``n`` grid with random positive costs, as ``adjacency[u] = [(v, w)]``."""
    adj = {}
    for r in range(n):
        for c in range(n):
            u = r * n + c
            adj[u] = []
            for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < n and 0 <= cc < n:
                    adj[u].append((rr * n + cc, float(rng.randint(1, 9))))
    return adj


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = random.Random(0)
    frames = [rng.randbytes(size) for size in (32, 256, 4096)]
    adj = grid(30, rng)
    src, dst = 0, len(adj) - 1

    for name, mod in BACKENDS.items():
        assert all(mod.crc32(f) == zlib.crc32(f) for f in frames), name
    paths = {name: mod.shortest_path(adj, src, dst) for name, mod in BACKENDS.items()}
    assert len({(c, tuple(p)) for c, p in paths.values()}) == 1, paths

    print(f"backends: {', '.join(BACKENDS)}")
    print(f"{'kernel':<28}{'backend':<10}{'time/call':>14}")
    for f in frames:
        label = f"crc32 {len(f)} B"
        for name, mod in BACKENDS.items():
            t = best_of(lambda: mod.crc32(f), args.repeat, 200)
            print(f"{label:<28}{name:<10}{t * 1e6:>11.2f} us")
        t = best_of(lambda: zlib.crc32(f), args.repeat, 200)
        print(f"{label:<28}{'zlib':<10}{t * 1e6:>11.2f} us")
    label = f"dijkstra {len(adj)}-node grid"
    for name, mod in BACKENDS.items():
        t = best_of(lambda: mod.shortest_path(adj, src, dst), args.repeat, 5)
        print(f"{label:<28}{name:<10}{t * 1e6:>11.2f} us")


if __name__ == "__main__":
    main()
