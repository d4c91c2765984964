"""HELLO/JOIN cluster formation in synchronous rounds.

Round model: a message sent in round ``r`` is processed by its receivers in
round ``r + 1``.  The server broadcasts the query HELLO in round 0 and heads
its own cluster.  A node hearing its first HELLO flips a ``p_c`` coin; leaders
re-broadcast HELLO, everyone else waits ``wait_rounds`` and then JOINs the
leader whose HELLO it heard first (lowest id on ties).

Nodes that only ever overhear JOINs are woken by them too.  A waiting node
whose wait expires without any leader HELLO elects itself, unless a
lower-id neighbour is stranded in the same round; that neighbour elects
instead and the node joins it once its HELLO arrives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from .errors import InvalidParams, NoCoverage
from .simcore import MessageBus, MessageKind, NodeId, RngStream, Topology

DEFAULT_P_C = 0.3
DEFAULT_WAIT_ROUNDS = 2
DEFAULT_MAX_ROUNDS = 16
DEFAULT_MIN_CLUSTER_SIZE = 3


@dataclass(frozen=True)
class Cluster:
    leader: NodeId
    members: frozenset[NodeId]

    @property
    def participants(self) -> tuple[NodeId, ...]:
        """Leader first, then members in id order."""
        return (self.leader, *sorted(self.members))

    @property
    def size(self) -> int:
        return 1 + len(self.members)


@dataclass
class ClusterAssignment:
    clusters: list[Cluster]
    uncovered: frozenset[NodeId]
    dissolved_count: int
    # diagnostics for the experiment report
    coin_flips: int = 0
    coin_leaders: int = 0
    fallback_leaders: int = 0
    rounds_used: int = 0

    @property
    def covered(self) -> frozenset[NodeId]:
        return frozenset(n for c in self.clusters for n in c.participants)

    def cluster_of(self, node: NodeId) -> Optional[Cluster]:
        for c in self.clusters:
            if node == c.leader or node in c.members:
                return c
        return None

    def as_record(self) -> dict:
        return {
            "clusters": [
                {"leader": c.leader, "members": sorted(c.members)} for c in self.clusters
            ],
            "uncovered": sorted(self.uncovered),
            "dissolved_count": self.dissolved_count,
            "fallback_leaders": self.fallback_leaders,
        }


@dataclass
class _NodeState:
    status: str = "idle"  # idle | waiting | leader | member
    deadline: int = 0
    heard: list[tuple[int, NodeId]] = field(default_factory=list)


def run_cluster_formation(
    topology: Topology,
    p_c: float = DEFAULT_P_C,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    rng: Optional[RngStream] = None,
    *,
    wait_rounds: int = DEFAULT_WAIT_ROUNDS,
    min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE,
    bus: Optional[MessageBus] = None,
    forced: Optional[Mapping[NodeId, bool]] = None,
) -> ClusterAssignment:
    """Form clusters over the server's component.

    ``forced`` pins the election coin of selected nodes (used to replay a
    known formation); all other coins come from per-node streams of ``rng``.
    """
    if not 0 < p_c <= 1:
        raise InvalidParams(f"p_c must lie in (0, 1], got {p_c}")
    if wait_rounds < 0 or max_rounds < 1:
        raise InvalidParams("wait_rounds must be >= 0 and max_rounds >= 1")
    server = topology.server
    component = topology.component()
    if len(component) <= 1:
        raise NoCoverage(f"server {server} has no neighbours")
    rng = rng if rng is not None else RngStream(0, "formation")
    bus = bus if bus is not None else MessageBus(topology)
    forced = forced or {}

    state = {n: _NodeState() for n in component}
    leader_of: dict[NodeId, NodeId] = {}
    state[server].status = "leader"
    leader_of[server] = server
    flips = coin_leaders = fallbacks = 0

    bus.round = 0
    outbox = [bus.broadcast(server, MessageKind.HELLO, (server,))]
    last_round = 0
    for rnd in range(1, max_rounds + 1):
        bus.round = rnd
        inbox: dict[NodeId, list] = {}
        for msg in outbox:
            for rcv in bus.receivers(msg):
                inbox.setdefault(rcv, []).append(msg)
        outbox = []

        for node in sorted(component):
            st = state[node]
            if st.status in ("leader", "member"):
                continue
            msgs = inbox.get(node, ())
            hellos = sorted(m.src for m in msgs if m.kind is MessageKind.HELLO)
            st.heard.extend((rnd, src) for src in hellos)
            if st.status != "idle" or not msgs:
                continue
            if hellos:
                flips += 1
                coin = forced.get(node)
                if coin is None:
                    coin = rng.derive("elect", node).random() < p_c
                if coin:
                    coin_leaders += 1
                    st.status = "leader"
                    leader_of[node] = node
                    outbox.append(bus.broadcast(node, MessageKind.HELLO, (node,)))
                    continue
            st.status = "waiting"
            st.deadline = rnd + wait_rounds

        expired = {
            n for n, st in state.items()
            if st.status == "waiting" and rnd >= st.deadline
        }
        stranded = {n for n in expired if not state[n].heard}
        for node in sorted(expired):
            st = state[node]
            if st.heard:
                _, leader = min(st.heard)
                st.status = "member"
                leader_of[node] = leader
                outbox.append(bus.broadcast(node, MessageKind.JOIN, (leader,)))
            elif not any(nb in stranded and nb < node for nb in topology.neighbors(node)):
                # lowest id among adjacent stranded nodes elects; the rest hear its HELLO
                fallbacks += 1
                st.status = "leader"
                leader_of[node] = node
                outbox.append(bus.broadcast(node, MessageKind.HELLO, (node,)))
        if outbox:
            last_round = rnd
        elif not any(s.status == "waiting" for s in state.values()):
            break

    groups: dict[NodeId, set[NodeId]] = {}
    for node, leader in leader_of.items():
        groups.setdefault(leader, set())
        if node != leader:
            groups[leader].add(node)

    clusters, uncovered, dissolved = [], set(), 0
    for leader in sorted(groups):
        members = groups[leader]
        if 1 + len(members) >= min_cluster_size:
            clusters.append(Cluster(leader, frozenset(members)))
        else:
            dissolved += 1
            uncovered.update(members)
            if leader != server:
                uncovered.add(leader)
    uncovered.update(n for n in component if n not in leader_of)

    return ClusterAssignment(
        clusters=clusters,
        uncovered=frozenset(uncovered),
        dissolved_count=dissolved,
        coin_flips=flips,
        coin_leaders=coin_leaders,
        fallback_leaders=fallbacks,
        rounds_used=last_round,
    )


def validate_assignment(
    assignment: ClusterAssignment,
    topology: Topology,
    min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE,
) -> list[str]:
    """Return human-readable violations; an empty list means valid."""
    violations = []
    seen: dict[NodeId, NodeId] = {}
    for c in assignment.clusters:
        if c.leader in c.members:
            violations.append(f"DisjointnessViolation: leader {c.leader} listed as its own member")
        for n in c.participants:
            if n in seen and seen[n] != c.leader:
                violations.append(
                    f"DisjointnessViolation: node {n} in clusters {seen[n]} and {c.leader}"
                )
            seen.setdefault(n, c.leader)
        for m in sorted(c.members):
            if not topology.has_edge(m, c.leader):
                violations.append(f"AdjacencyViolation: member {m} not adjacent to leader {c.leader}")
        if c.size < min_cluster_size:
            violations.append(f"SizeViolation: cluster {c.leader} has {c.size} < {min_cluster_size} nodes")
    overlap = assignment.uncovered & set(seen)
    if overlap:
        violations.append(f"DisjointnessViolation: nodes {sorted(overlap)} both covered and uncovered")
    return violations
