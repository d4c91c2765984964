import pytest
from hypothesis import given, settings, strategies as st

from cpda_lab.errors import LeaderUnreachable, MagnitudeOverflow, NoCoverage
from cpda_lab.exact import WIDE_LIMIT
from cpda_lab.simcore import MessageBus, MessageKind, RngStream, Topology, TopologyConfig, build_topology
from cpda_lab.treeagg import aggregate_up, build_tag_tree


def test_path_parents():
    tree = build_tag_tree(Topology.from_edges(3, [(0, 1), (1, 2)]))
    assert tree.parent == {1: 0, 2: 1}
    assert tree.parent_array(3) == [None, 0, 1]


def test_star_depths():
    tree = build_tag_tree(Topology.from_edges(5, [(0, i) for i in range(1, 5)]))
    assert {n: d for n, d in tree.depth.items() if n} == {1: 1, 2: 1, 3: 1, 4: 1}


def test_lowest_id_parent_wins():
    # 5 has depth-2 neighbours 3 and 4; breadth-first order reaches 4 first
    topo = Topology.from_edges(6, [(0, 1), (0, 2), (1, 4), (2, 3), (3, 5), (4, 5)])
    tree = build_tag_tree(topo)
    assert tree.depth[3] == tree.depth[4] == 2
    assert tree.parent[5] == 3


def test_two_cluster_sum():
    topo = Topology.from_edges(5, [(0, 1), (0, 4), (1, 2), (4, 3)])
    assert aggregate_up(build_tag_tree(topo), {1: 21, 4: 30}) == 51


def test_single_cluster_identity():
    topo = Topology.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert aggregate_up(build_tag_tree(topo), {3: 17}) == 17


def test_one_message_per_path_node():
    topo = Topology.from_edges(5, [(0, 1), (1, 2), (1, 3), (0, 4)])
    bus = MessageBus(topo)
    assert aggregate_up(build_tag_tree(topo), {2: 5, 3: 6}, bus) == 11
    sent = [(m.src, m.dst, m.payload) for m in bus.iter_kind(MessageKind.CLUSTER_SUM)]
    assert sorted(sent) == [(1, 0, (11,)), (2, 1, (5,)), (3, 1, (6,))]


def test_unreachable_leader():
    topo = Topology.from_edges(5, [(0, 1), (1, 2), (3, 4)])
    with pytest.raises(LeaderUnreachable):
        aggregate_up(build_tag_tree(topo), {3: 1})


def test_isolated_server():
    with pytest.raises(NoCoverage):
        build_tag_tree(Topology.from_edges(4, [(1, 2)]))


def test_partial_sum_overflow():
    topo = Topology.from_edges(4, [(0, 1), (1, 2), (1, 3)])
    with pytest.raises(MagnitudeOverflow):
        aggregate_up(build_tag_tree(topo), {2: WIDE_LIMIT // 2, 3: WIDE_LIMIT // 2})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.data())
def test_random_graph_sum_is_exact(seed, data):
    topo = build_topology(TopologyConfig(100, 0.2), RngStream(seed))
    tree = build_tag_tree(topo)
    leaders = data.draw(st.lists(st.sampled_from(sorted(tree.depth)), min_size=1, max_size=10, unique=True))
    sums = {n: data.draw(st.integers(0, 10**6)) for n in leaders}
    assert aggregate_up(tree, sums) == sum(sums.values())
