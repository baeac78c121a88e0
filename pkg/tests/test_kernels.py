import math
import random
import zlib

import pytest
from hypothesis import given, strategies as st

from cits_sim import kernels

from oracles import brute_route, crc32_bitwise

BACKENDS = sorted(kernels.BACKENDS)


def test_compiled_backend_is_built():
    # The extension is part of the normal install; its absence means the build failed.
    assert "compiled" in kernels.BACKENDS
    assert kernels.BACKEND in kernels.BACKENDS


@pytest.mark.parametrize("name", BACKENDS)
def test_crc_check_value(name):
    assert kernels.BACKENDS[name].crc32(b"123456789") == 0xCBF43926
    assert kernels.BACKENDS[name].crc32(b"") == 0


@pytest.mark.parametrize("name", BACKENDS)
@given(data=st.binary(max_size=512))
def test_crc_matches_bitwise_oracle(name, data):
    assert kernels.BACKENDS[name].crc32(data) == crc32_bitwise(data) == zlib.crc32(data)


@pytest.mark.parametrize("name", BACKENDS)
def test_crc_is_incremental(name):
    impl = kernels.BACKENDS[name]
    assert impl.crc32(b"6789", impl.crc32(b"12345")) == 0xCBF43926


def _random_graph(rng, n):
    adjacency = [[] for _ in range(n)]
    segments = []
    for a in range(n):
        for b in range(n):
            if a != b and rng.random() < 0.35:
                c = rng.randint(1, 5)
                adjacency[a].append((b, c))
                segments.append((a, b, c))
    return adjacency, segments


@pytest.mark.parametrize("name", BACKENDS)
def test_shortest_path_matches_enumeration(name):
    impl = kernels.BACKENDS[name]
    rng = random.Random(7)
    for _ in range(150):
        n = rng.randint(1, 7)
        adjacency, segments = _random_graph(rng, n)
        s, d = rng.randrange(n), rng.randrange(n)
        cost, path = impl.shortest_path(adjacency, s, d)
        want_cost, want_path = brute_route(segments, s, d)
        assert (cost, list(path)) == (want_cost, want_path)


@pytest.mark.parametrize("name", BACKENDS)
def test_unreachable(name):
    cost, path = kernels.BACKENDS[name].shortest_path([[], []], 0, 1)
    assert math.isinf(cost) and list(path) == []


def test_backends_agree():
    rng = random.Random(3)
    for _ in range(50):
        adjacency, _ = _random_graph(rng, 6)
        results = {name: kernels.BACKENDS[name].shortest_path(adjacency, 0, 5) for name in BACKENDS}
        assert len({(c, tuple(p)) for c, p in results.values()}) == 1
