"""Shared test helpers: seeded generators and socket utilities."""

from __future__ import annotations

import socket
from random import Random

import pytest

from peerprof.metrics_tree import (
    COUNT,
    LATENCY,
    SIZE,
    THROUGHPUT,
    MetricNode,
    custom,
)
from peerprof.transport import Envelope, MsgType

_KINDS = (LATENCY, SIZE, THROUGHPUT, COUNT, custom("tokens"), custom("temp-c"))


def random_tree(rng: Random, max_depth: int = 6, max_nodes: int = 100) -> MetricNode:
    """A random valid metric tree within the given limits."""
    budget = [rng.randint(1, max_nodes)]

    def build(depth: int) -> MetricNode:
        budget[0] -= 1
        node = MetricNode(
            name=f"n{rng.randrange(10**6)}-{rng.choice('abcxyz')}",
            kind=rng.choice(_KINDS),
        )
        if rng.random() < 0.7:
            node.start_ts = rng.randrange(-(2**40), 2**40)
            if rng.random() < 0.8:
                node.stop_ts = node.start_ts + rng.randrange(0, 2**30)
        choice = rng.random()
        if choice < 0.5:
            node.value = rng.randrange(0, 2**48)
        elif choice < 0.75:
            node.value = rng.uniform(-1e9, 1e9)
        if rng.random() < 0.3:
            node.unit = rng.choice(("ns", "bytes", "bytes/s", "count"))
        if rng.random() < 0.1:
            node.warning = "cross-clock-raw"
        if depth < max_depth and budget[0] > 0:
            n_children = rng.randint(0, min(4, budget[0]))
            names = set()
            for _ in range(n_children):
                child = build(depth + 1)
                if child.name in names:
                    continue
                names.add(child.name)
                node.children.append(child)
        return node

    return build(1)


def random_envelope(rng: Random) -> Envelope:
    metadata = None
    if rng.random() < 0.6:
        metadata = rng.randbytes(rng.randrange(0, 512))
    return Envelope(
        msg_type=rng.choice(list(MsgType)),
        payload=rng.randbytes(rng.randrange(0, 4096)),
        metadata=metadata,
        sender=rng.choice(("client", "server", "jetson-orin", "a")),
        seq=rng.randrange(0, 2**63),
        send_ts=rng.randrange(-(2**62), 2**62),
    )


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def rng() -> Random:
    return Random(0xC0FFEE)
