from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from oracles import disjoint_ring_probability

from cpda_lab.errors import InvalidParams
from cpda_lab.keydist import (
    KeyRing,
    LinkMode,
    LinkSecurity,
    assign_key_rings,
    attach_path_keys,
    can_decrypt,
    discover_shared_keys,
    empirical_p_connect,
    empirical_p_overhear,
    establish_end_to_end_keys,
    establish_path_keys,
    p_connect_closed_form,
    p_connect_product,
    p_overhear,
)
from cpda_lab.simcore import RngStream, Topology

# exact big-integer evaluation, computed before the implementation existed
P_CONNECT_1000_50 = 0.9280230081151569
P_CONNECT_100_10 = 0.6695237889132748


def rings_of(**by_node):
    return {int(n[1:]): KeyRing(int(n[1:]), frozenset(keys)) for n, keys in by_node.items()}


def test_tiny_pool_rings():
    rings = assign_key_rings(range(2), 2, 1, RngStream(1))
    assert all(r.keys in ({0}, {1}) for r in rings.values())


def test_ring_cardinality():
    rings = assign_key_rings(range(30), 1000, 50, RngStream(2))
    for n, ring in rings.items():
        assert ring.owner == n
        assert len(ring.keys) == 50
        assert all(0 <= key < 1000 for key in ring.keys)


def test_pool_too_small():
    with pytest.raises(InvalidParams):
        assign_key_rings(range(3), 9, 5, RngStream(0))
    with pytest.raises(InvalidParams):
        p_connect_closed_form(9, 5)


@pytest.mark.parametrize("K,k", [(2, 1), (4, 2), (5, 2), (6, 3)])
def test_closed_form_matches_enumeration(K, k):
    assert p_connect_closed_form(K, k) == pytest.approx(float(1 - disjoint_ring_probability(K, k)), abs=1e-15)


def test_closed_form_hand_values():
    assert p_connect_closed_form(2, 1) == 0.5
    assert Fraction(p_connect_closed_form(4, 2)).limit_denominator(100) == Fraction(5, 6)


def test_closed_form_large_pool():
    assert p_connect_closed_form(1000, 50) == pytest.approx(P_CONNECT_1000_50, abs=1e-9)
    assert p_connect_closed_form(100, 10) == pytest.approx(P_CONNECT_100_10, abs=1e-9)


@given(st.integers(1, 60).flatmap(lambda k: st.tuples(st.integers(2 * k, 3000), st.just(k))))
def test_factorial_and_product_forms_agree(K_k):
    K, k = K_k
    assert p_connect_closed_form(K, k) == pytest.approx(p_connect_product(K, k), abs=1e-12)


@pytest.mark.parametrize("K,k,expected", [(100, 10, P_CONNECT_100_10), (1000, 50, P_CONNECT_1000_50)])
def test_empirical_intersection_frequency(K, k, expected):
    assert empirical_p_connect(K, k, 100_000, RngStream(9, f"{K}")) == pytest.approx(expected, abs=0.01)


def test_empirical_overhear_frequency():
    assert empirical_p_overhear(1000, 50, 10_000, RngStream(9)) == pytest.approx(0.05, abs=0.01)


@pytest.mark.parametrize("k,K,expected", [(50, 1000, 0.05), (7, 7, 1.0), (1, 2, 0.5)])
def test_p_overhear(k, K, expected):
    assert p_overhear(K, k) == expected


@pytest.mark.parametrize("k,K", [(0, 5), (6, 5)])
def test_p_overhear_invalid(k, K):
    with pytest.raises(InvalidParams):
        p_overhear(K, k)


def test_shared_key_discovery():
    topo = Topology.from_edges(4, [(0, 1), (2, 3)])
    links = discover_shared_keys(topo, rings_of(n0={1, 2}, n1={2, 3}, n2={1, 2}, n3={1, 2}))
    assert links[(0, 1)] == LinkSecurity((0, 1), LinkMode.SHARED, 2)
    assert links[(2, 3)].key_id == 1


def test_disjoint_rings_get_no_link():
    topo = Topology.from_edges(4, [(0, 1)])
    assert discover_shared_keys(topo, rings_of(n0={1, 2}, n1={3, 4}, n2={5, 6}, n3={7, 8})) == {}


def test_path_key_over_secure_chain():
    # a=0, b=1, c=2; (0,2) adjacent but with disjoint rings
    topo = Topology.from_edges(4, [(0, 1), (1, 2), (0, 2)])
    rings = rings_of(n0={1, 2}, n1={2, 3}, n2={3, 4}, n3={8, 9})
    shared = discover_shared_keys(topo, rings)
    path = establish_path_keys(topo, shared, pool_size=10)
    assert path == {(0, 2): LinkSecurity((0, 2), LinkMode.PATH, 10)}


def test_no_path_without_secure_route():
    topo = Topology.from_edges(4, [(0, 1), (2, 3)])
    rings = rings_of(n0={1, 2}, n1={3, 4}, n2={5, 6}, n3={7, 8})
    path = establish_path_keys(topo, discover_shared_keys(topo, rings), pool_size=10)
    assert path[(0, 1)].mode is LinkMode.NONE
    assert path[(0, 1)].key_id is None


def test_minted_keys_unique_and_beyond_pool():
    topo = Topology.from_edges(60, [(i, j) for i in range(60) for j in range(i + 1, 60) if (j - i) % 7 in (1, 3)])
    rings = assign_key_rings(topo, 200, 6, RngStream(4))
    shared = discover_shared_keys(topo, rings)
    minted = [l.key_id for l in establish_path_keys(topo, shared, 200).values() if l.mode is LinkMode.PATH]
    assert minted
    assert len(set(minted)) == len(minted)
    assert min(minted) >= 200
    assert minted == sorted(minted)


def test_end_to_end_keys_prefer_common_ring_key():
    topo = Topology.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    rings = rings_of(n0={1, 2}, n1={2, 5}, n2={1, 5}, n3={1, 9})
    shared = discover_shared_keys(topo, rings)
    e2e = establish_end_to_end_keys(topo, rings, shared, [(1, 2), (3, 1)], 10, 10)
    assert e2e[(1, 2)] == LinkSecurity((1, 2), LinkMode.SHARED, 5)
    assert e2e[(1, 3)] == LinkSecurity((1, 3), LinkMode.PATH, 10)


def test_can_decrypt():
    ring = KeyRing(0, frozenset({1, 2}))
    assert can_decrypt(ring, 2)
    assert not can_decrypt(ring, 9)


def test_path_keys_readable_only_by_endpoints():
    topo = Topology.from_edges(4, [(0, 1), (1, 2), (0, 2), (2, 3)])
    rings = rings_of(n0={1, 2}, n1={2, 3}, n2={3, 4}, n3={4, 7})
    shared = discover_shared_keys(topo, rings)
    path = establish_path_keys(topo, shared, pool_size=10)
    rings = attach_path_keys(rings, path.values())
    key = path[(0, 2)].key_id
    assert can_decrypt(rings[0], key) and can_decrypt(rings[2], key)
    assert not can_decrypt(rings[1], key)
    assert not can_decrypt(rings[3], key)
