"""Topology generation, seeded random streams and the recording message bus."""

from __future__ import annotations

import hashlib
import json
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, TextIO

from .errors import GenerationExhausted, InvalidConfig, NotAdjacent

NodeId = int

BROADCAST: NodeId = -1
MAX_GENERATION_ATTEMPTS = 16


class RngStream(random.Random):
    """A ``random.Random`` keyed by ``(seed, label)``.

    The label is hashed together with the master seed, so two streams with
    different labels are unrelated and a stream never depends on how many
    values were drawn from any other stream.
    """

    def __new__(cls, seed: int, label: str = "root"):
        return super().__new__(cls)

    def __init__(self, seed: int, label: str = "root"):
        self.master_seed = seed
        self.label = label
        digest = hashlib.sha256(f"{seed}\x1f{label}".encode()).digest()
        super().__init__(int.from_bytes(digest[:8], "big"))

    def derive(self, *parts: object) -> "RngStream":
        suffix = "/".join(str(p) for p in parts)
        return RngStream(self.master_seed, f"{self.label}/{suffix}")

    def __repr__(self) -> str:
        return f"RngStream(seed={self.master_seed}, label={self.label!r})"


def _pair(a: NodeId, b: NodeId) -> tuple[NodeId, NodeId]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Topology:
    node_count: int
    edges: frozenset[tuple[NodeId, NodeId]]
    server: NodeId = 0
    positions: Optional[tuple[tuple[float, float], ...]] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 <= self.server < self.node_count:
            raise InvalidConfig(f"server {self.server} outside 0..{self.node_count - 1}")
        adj: dict[NodeId, set[NodeId]] = {n: set() for n in range(self.node_count)}
        for a, b in self.edges:
            if a == b:
                raise InvalidConfig(f"self-loop on node {a}")
            if a > b:
                raise InvalidConfig(f"edge {(a, b)} is not normalised as (low, high)")
            if not (0 <= a < self.node_count and 0 <= b < self.node_count):
                raise InvalidConfig(f"edge {(a, b)} references an unknown node")
            adj[a].add(b)
            adj[b].add(a)
        object.__setattr__(
            self, "_adj", {n: tuple(sorted(v)) for n, v in adj.items()}
        )

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[tuple[int, int]], server: NodeId = 0):
        return cls(node_count, frozenset(_pair(a, b) for a, b in edges), server)

    @property
    def nodes(self) -> range:
        return range(self.node_count)

    def neighbors(self, node: NodeId) -> tuple[NodeId, ...]:
        return self._adj[node]

    def has_edge(self, a: NodeId, b: NodeId) -> bool:
        return _pair(a, b) in self.edges

    def component(self, start: Optional[NodeId] = None) -> frozenset[NodeId]:
        """Nodes reachable from ``start`` (the server by default)."""
        start = self.server if start is None else start
        seen = {start}
        queue = deque([start])
        while queue:
            for nb in self._adj[queue.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return frozenset(seen)


@dataclass(frozen=True)
class TopologyConfig:
    node_count: int = 100
    radius: float = 0.2
    edges: Optional[tuple[tuple[int, int], ...]] = None
    server: NodeId = 0
    min_connected_fraction: float = 0.9


def build_topology(config: TopologyConfig, rng: RngStream) -> Topology:
    """Echo an explicit edge list, or sample a random geometric graph.

    Random graphs whose server component covers less than
    ``min_connected_fraction`` of the nodes are redrawn from the next derived
    stream, at most 16 times.
    """
    n = config.node_count
    if n < 4:
        raise InvalidConfig(f"node_count must be >= 4, got {n}")
    if config.edges is not None:
        return Topology.from_edges(n, config.edges, config.server)
    if config.radius <= 0:
        raise InvalidConfig(f"radius must be > 0, got {config.radius}")

    needed = config.min_connected_fraction * n
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        stream = rng.derive("topology", attempt)
        pos = tuple((stream.random(), stream.random()) for _ in range(n))
        edges = frozenset(
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if math.dist(pos[i], pos[j]) <= config.radius
        )
        topo = Topology(n, edges, config.server, pos)
        if len(topo.component()) >= needed:
            return topo
    raise GenerationExhausted(
        f"no graph with a server component of >= {needed:g} nodes "
        f"after {MAX_GENERATION_ATTEMPTS} attempts"
    )


class MessageKind(str, Enum):
    HELLO = "HELLO"
    JOIN = "JOIN"
    SEED = "SEED"
    SHARE = "SHARE"
    FBCAST = "FBCAST"
    CLUSTER_SUM = "CLUSTER_SUM"


_NEVER_ENCRYPTED = (MessageKind.SEED, MessageKind.FBCAST)


@dataclass(frozen=True)
class MessageRecord:
    src: NodeId
    dst: NodeId
    kind: MessageKind
    key_id: Optional[int] = None
    payload: tuple[int, ...] = ()
    round: int = 0

    def __post_init__(self):
        if self.kind is MessageKind.SHARE and self.key_id is None:
            raise ValueError("SHARE messages must be encrypted")
        if self.kind in _NEVER_ENCRYPTED and self.key_id is not None:
            raise ValueError(f"{self.kind.value} messages are sent in the clear")

    @property
    def is_broadcast(self) -> bool:
        return self.dst == BROADCAST

    def as_log_record(self) -> dict:
        return {
            "round": self.round,
            "src": self.src,
            "dst": "BROADCAST" if self.is_broadcast else self.dst,
            "kind": self.kind.value,
            "key_id": self.key_id,
        }


class MessageBus:
    """Delivers messages over a topology and keeps the full ordered trace.

    A broadcast is a single transmission regardless of how many neighbours
    hear it.
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        self.trace: list[MessageRecord] = []
        self.counts: Counter[MessageKind] = Counter()
        self.broadcasts = 0
        self.unicasts = 0
        self.round = 0

    @classmethod
    def complete(cls, nodes: Iterable[NodeId]) -> "MessageBus":
        """Bus over a complete graph on ``nodes`` (for standalone cluster runs)."""
        nodes = sorted(nodes)
        n = max(nodes) + 1
        edges = [(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1:]]
        return cls(Topology.from_edges(max(n, 1), edges, server=nodes[0]))

    def deliver(self, msg: MessageRecord) -> MessageRecord:
        topo = self.topology
        if not 0 <= msg.src < topo.node_count:
            raise NotAdjacent(f"unknown source node {msg.src}")
        if not msg.is_broadcast and not topo.has_edge(msg.src, msg.dst):
            raise NotAdjacent(f"{msg.src} -> {msg.dst} is not a link")
        if msg.round != self.round:
            msg = MessageRecord(msg.src, msg.dst, msg.kind, msg.key_id, msg.payload, self.round)
        self.trace.append(msg)
        self.counts[msg.kind] += 1
        if msg.is_broadcast:
            self.broadcasts += 1
        else:
            self.unicasts += 1
        return msg

    def send(self, src, dst, kind, payload=(), key_id=None) -> MessageRecord:
        return self.deliver(MessageRecord(src, dst, kind, key_id, tuple(payload), self.round))

    def broadcast(self, src, kind, payload=()) -> MessageRecord:
        return self.deliver(MessageRecord(src, BROADCAST, kind, None, tuple(payload), self.round))

    def receivers(self, msg: MessageRecord) -> tuple[NodeId, ...]:
        if msg.is_broadcast:
            return self.topology.neighbors(msg.src)
        return (msg.dst,)

    def iter_kind(self, kind: MessageKind) -> Iterator[MessageRecord]:
        return (m for m in self.trace if m.kind is kind)

    def write_trace(self, out: TextIO) -> None:
        for msg in self.trace:
            out.write(json.dumps(msg.as_log_record(), sort_keys=True) + "\n")


def deliver(bus: MessageBus, msg: MessageRecord) -> MessageRecord:
    return bus.deliver(msg)


def eavesdroppers_of(topology: Topology, msg: MessageRecord) -> frozenset[NodeId]:
    """Every radio neighbour of the sender other than the addressee."""
    return frozenset(n for n in topology.neighbors(msg.src) if n != msg.dst)
