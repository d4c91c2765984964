"""Eschenauer-Gligor random key predistribution.

Encryption is symbolic: a ciphertext is identified by the id of the key
that sealed it, and a node can read it iff it holds that key.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Optional

from .errors import InvalidParams
from .simcore import NodeId, RngStream, Topology, _pair

DEFAULT_POOL_SIZE = 1000
DEFAULT_RING_SIZE = 50

Pair = tuple[NodeId, NodeId]


@dataclass(frozen=True)
class KeyRing:
    owner: NodeId
    keys: frozenset[int]
    # pairwise keys minted during path-key establishment (ids >= pool size)
    path_keys: frozenset[int] = frozenset()

    def holds(self, key_id: int) -> bool:
        return key_id in self.keys or key_id in self.path_keys


class LinkMode(str, Enum):
    SHARED = "SHARED"
    PATH = "PATH"
    NONE = "NONE"


@dataclass(frozen=True)
class LinkSecurity:
    pair: Pair
    mode: LinkMode
    key_id: Optional[int] = None

    @property
    def secure(self) -> bool:
        return self.mode is not LinkMode.NONE


def _check_pool(K: int, k: int) -> None:
    if k < 1 or K < 2 * k:
        raise InvalidParams(f"need K >= 2k >= 2, got K={K}, k={k}")


def assign_key_rings(nodes: Topology | Iterable[NodeId], K: int, k: int, rng: RngStream) -> dict[NodeId, KeyRing]:
    """Give every node an independent uniform k-subset of the pool ``0..K-1``."""
    _check_pool(K, k)
    if isinstance(nodes, Topology):
        nodes = nodes.nodes
    return {
        n: KeyRing(n, frozenset(rng.derive("ring", n).sample(range(K), k)))
        for n in sorted(nodes)
    }


def discover_shared_keys(topology: Topology, rings: Mapping[NodeId, KeyRing]) -> dict[Pair, LinkSecurity]:
    """SHARED links for every adjacent pair whose rings intersect (lowest common id)."""
    links = {}
    for a, b in sorted(topology.edges):
        common = rings[a].keys & rings[b].keys
        if common:
            links[(a, b)] = LinkSecurity((a, b), LinkMode.SHARED, min(common))
    return links


def _secure_components(node_count: int, shared: Iterable[Pair]) -> list[int]:
    adj: dict[int, list[int]] = {}
    for a, b in shared:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    label = [-1] * node_count
    for start in range(node_count):
        if label[start] >= 0:
            continue
        label[start] = start
        queue = deque([start])
        while queue:
            for nb in adj.get(queue.popleft(), ()):
                if label[nb] < 0:
                    label[nb] = start
                    queue.append(nb)
    return label


def establish_path_keys(
    topology: Topology,
    shared_links: Mapping[Pair, LinkSecurity],
    pool_size: int,
    pairs: Optional[Iterable[Pair]] = None,
    next_key: Optional[int] = None,
) -> dict[Pair, LinkSecurity]:
    """Mint pairwise keys for pairs without a shared key but joined by secure hops.

    ``pairs`` defaults to the adjacent pairs of ``topology``.  Fresh ids start
    at ``next_key`` (``pool_size`` by default) and are handed out in ascending
    pair order.  Pairs with no secure path get a ``NONE`` entry.
    """
    label = _secure_components(topology.node_count, shared_links)
    key = pool_size if next_key is None else next_key
    out = {}
    candidates = topology.edges if pairs is None else {_pair(a, b) for a, b in pairs}
    for pair in sorted(candidates):
        if pair in shared_links:
            continue
        a, b = pair
        if label[a] == label[b]:
            out[pair] = LinkSecurity(pair, LinkMode.PATH, key)
            key += 1
        else:
            out[pair] = LinkSecurity(pair, LinkMode.NONE)
    return out


def establish_end_to_end_keys(
    topology: Topology,
    rings: Mapping[NodeId, KeyRing],
    shared_links: Mapping[Pair, LinkSecurity],
    pairs: Iterable[Pair],
    pool_size: int,
    next_key: int,
) -> dict[Pair, LinkSecurity]:
    """Keys for non-adjacent pairs that must talk through a relay.

    A common ring key is used when one exists; otherwise a path key is
    minted exactly as for neighbours.
    """
    direct, rest = {}, []
    for pair in sorted({_pair(a, b) for a, b in pairs}):
        if pair in shared_links:
            continue
        common = rings[pair[0]].keys & rings[pair[1]].keys
        if common:
            direct[pair] = LinkSecurity(pair, LinkMode.SHARED, min(common))
        else:
            rest.append(pair)
    minted = establish_path_keys(topology, shared_links, pool_size, rest, next_key) if rest else {}
    return {**direct, **minted}


def attach_path_keys(rings: Mapping[NodeId, KeyRing], links: Iterable[LinkSecurity]) -> dict[NodeId, KeyRing]:
    """Return rings where each PATH key is added to exactly its two endpoints."""
    extra: dict[NodeId, set[int]] = {}
    for link in links:
        if link.mode is LinkMode.PATH:
            for n in link.pair:
                extra.setdefault(n, set()).add(link.key_id)
    return {
        n: KeyRing(r.owner, r.keys, r.path_keys | frozenset(extra.get(n, ())))
        for n, r in rings.items()
    }


def p_connect_closed_form(K: int, k: int) -> float:
    """Probability that two random k-rings from a pool of K share a key.

    Evaluated exactly as ``1 - ((K-k)!)^2 / ((K-2k)! K!)`` before the final
    conversion to float.
    """
    _check_pool(K, k)
    disjoint = Fraction(math.factorial(K - k) ** 2, math.factorial(K - 2 * k) * math.factorial(K))
    return float(1 - disjoint)


def p_connect_product(K: int, k: int) -> float:
    """Same quantity via the telescoped product prod_{i<k} (K-k-i)/(K-i)."""
    _check_pool(K, k)
    disjoint = Fraction(1)
    for i in range(k):
        disjoint *= Fraction(K - k - i, K - i)
    return float(1 - disjoint)


def p_overhear(K: int, k: int) -> float:
    if not 0 < k <= K:
        raise InvalidParams(f"need 0 < k <= K, got K={K}, k={k}")
    return k / K


def can_decrypt(ring: KeyRing, key_id: Optional[int]) -> bool:
    # plaintext (no key id) is readable by anyone in radio range
    if key_id is None:
        return True
    return ring.holds(key_id)


def empirical_p_connect(K: int, k: int, samples: int, rng: RngStream) -> float:
    """Monte-Carlo frequency of two independent rings intersecting."""
    _check_pool(K, k)
    pool = range(K)
    hits = 0
    for _ in range(samples):
        if not set(rng.sample(pool, k)).isdisjoint(rng.sample(pool, k)):
            hits += 1
    return hits / samples


def empirical_p_overhear(K: int, k: int, samples: int, rng: RngStream) -> float:
    """Fraction of SHARED-encrypted messages a random third ring can read.

    Each sample draws a ring pair until it shares a key, seals a message
    with their lowest common key, and tests a fresh third ring against it.
    """
    _check_pool(K, k)
    pool = range(K)
    readable = 0
    for _ in range(samples):
        while True:
            common = set(rng.sample(pool, k)).intersection(rng.sample(pool, k))
            if common:
                break
        third = KeyRing(-1, frozenset(rng.sample(pool, k)))
        readable += can_decrypt(third, min(common))
    return readable / samples
