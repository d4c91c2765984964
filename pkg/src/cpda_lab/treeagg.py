"""TAG-style convergecast of cluster sums to the query server."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, Optional

from .errors import LeaderUnreachable, NoCoverage
from .exact import check_wide
from .simcore import MessageBus, MessageKind, NodeId, Topology


@dataclass(frozen=True)
class RoutingTree:
    root: NodeId
    parent: Mapping[NodeId, NodeId]
    depth: Mapping[NodeId, int]

    def path_to_root(self, node: NodeId) -> list[NodeId]:
        if node not in self.depth:
            raise LeaderUnreachable(f"node {node} is not in the routing tree")
        path = [node]
        while path[-1] != self.root:
            path.append(self.parent[path[-1]])
        return path

    def parent_array(self, node_count: int) -> list[Optional[NodeId]]:
        return [self.parent.get(n) for n in range(node_count)]


def build_tag_tree(topology: Topology) -> RoutingTree:
    """Breadth-first tree from the server; ties go to the lowest-id parent."""
    root = topology.server
    if not topology.neighbors(root):
        raise NoCoverage(f"server {root} has no neighbours")
    depth = {root: 0}
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for nb in topology.neighbors(node):
            if nb not in depth:
                depth[nb] = depth[node] + 1
                queue.append(nb)
    parent = {
        n: min(nb for nb in topology.neighbors(n) if depth.get(nb) == d - 1)
        for n, d in depth.items()
        if n != root
    }
    return RoutingTree(root, parent, depth)


def aggregate_up(
    tree: RoutingTree,
    cluster_sums: Mapping[NodeId, int],
    bus: Optional[MessageBus] = None,
) -> int:
    """Sum cluster totals in-network along the tree and return the server total.

    Each node on some leader-to-root path sends exactly one CLUSTER_SUM to its
    parent, carrying its own cluster sum plus everything it received.
    """
    outgoing: dict[NodeId, int] = {}
    for leader, value in cluster_sums.items():
        for node in tree.path_to_root(leader):
            outgoing.setdefault(node, 0)
        outgoing[leader] += value

    for node in sorted(outgoing, key=lambda n: (-tree.depth[n], n)):
        if node == tree.root:
            continue
        par = tree.parent[node]
        value = check_wide(outgoing[node])
        if bus is not None:
            bus.send(node, par, MessageKind.CLUSTER_SUM, (value,))
        outgoing[par] += value
    return outgoing.get(tree.root, 0)
