import random

import pytest

import aim.numerics as numerics


@pytest.fixture(params=sorted(numerics.available_backends()))
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    kernels = numerics.available_backends()[request.param]
    monkeypatch.setattr(numerics, "_K", kernels)
    monkeypatch.setattr(numerics, "BACKEND", request.param)
    return request.param


@pytest.fixture
def rng():
    return random.Random(0xA1_17)


def rand_rows(rng, n, d, lo=-1.0, hi=1.0):
    return [[rng.uniform(lo, hi) for _ in range(d)] for _ in range(n)]


def random_spans(rng, total):
    """Random contiguous partition of [0, total)."""
    cuts = sorted(rng.sample(range(1, total), rng.randint(0, min(4, total - 1)))) \
        if total > 1 else []
    edges = [0] + cuts + [total]
    return tuple((a, b) for a, b in zip(edges, edges[1:]))
