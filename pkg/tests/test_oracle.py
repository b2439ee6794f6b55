import math

import pytest
from hypothesis import given, settings, strategies as st

from hskip.core import common_prefix
from hskip.oracle import (
    GlobalView, UnknownNode, ViewNode, component, farthest_pred, farthest_succ, first_pred,
    first_succ, graph_level, is_legal, range_, target_edges,
)

from conftest import F4_IDS, F4_TARGET, named, random_view

A, B, C, D = (F4_IDS[k] for k in "ABCD")


def brute_levels(view):
    """Lowest witnessing level of every edge straight from the literal range."""
    out = {}
    for v in view.nodes:
        for i in range(graph_level(view) + 1):
            for w in range_(view, v, i):
                out.setdefault((v, w), i)
    return out


def union_find_connected(nodes, edges):
    parent = {v: v for v in nodes}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for v, w in edges:
        parent[find(v)] = find(w)
    return len({find(v) for v in nodes}) <= 1


def test_f4_components(f4_view):
    assert component(f4_view, B, 0) == {A, B, C, D}
    assert component(f4_view, B, 1) == {A, B}
    assert component(f4_view, D, 2) == {D}
    with pytest.raises(UnknownNode):
        component(f4_view, 99, 0)


def test_graph_level(f4_view):
    assert graph_level(f4_view) == 1
    assert graph_level(random_view(1, 0)) == 0
    from hskip.core import BitStream
    two = GlobalView([ViewNode(0, BitStream.with_prefix("0", 1), 1.0), ViewNode(1, BitStream.with_prefix("1", 2), 2.0)])
    assert graph_level(two) == 0


def test_f4_first_neighbours(f4_view):
    assert first_pred(f4_view, D, 0, 0) == B
    assert first_pred(f4_view, D, 0, 1) == C
    assert first_pred(f4_view, C, 0, 1) is None
    assert first_succ(f4_view, A, 0, 1) == C
    assert first_succ(f4_view, B, 0, 0) is None
    for i in (0, 1):
        for b in (0, 1):
            assert first_pred(f4_view, A, i, b) is None
            assert first_succ(f4_view, D, i, b) is None


def test_f4_farthest_and_ranges(f4_view):
    assert farthest_pred(f4_view, D, 0) == B
    assert farthest_succ(f4_view, A, 0) == C
    # only bit-1 nodes below B: the side is unbounded
    assert farthest_succ(f4_view, B, 0) is None
    assert farthest_pred(f4_view, A, 0) is None
    assert range_(f4_view, A, 0) == {B, C}
    assert range_(f4_view, B, 0) == {A, C, D}
    assert range_(f4_view, B, 1) == {A}
    assert range_(random_view(1, 3), 0, 0) == set()


def test_f4_target_edges(f4_view):
    target = target_edges(f4_view)
    assert named(target.edges) == F4_TARGET
    assert target.levels[D][B] == 0
    assert target.levels[A][B] == 0


def test_two_nodes_are_doubly_linked():
    view = random_view(2, 11)
    assert target_edges(view).edges == {(0, 1), (1, 0)}


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 24), st.integers(0, 10**6), st.sampled_from([4, 8, 256]))
def test_target_edges_match_literal_definition(n, seed, cap):
    # short caps make deep shared prefixes common; skip the rare full collision
    view = random_view(n, seed, cap)
    if len({node.rs.bits for node in view.nodes.values()}) < n:
        return
    assert target_edges(view).levels == {
        v: {w: i for (x, w), i in brute_levels(view).items() if x == v} for v in view.nodes
    }


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10**6))
def test_level_lists_are_contained_and_ranges_stay_in_components(n, seed):
    view = random_view(n, seed)
    target = target_edges(view)
    for i in range(graph_level(view) + 1):
        for v in view.nodes:
            comp = component(view, v, i)
            assert range_(view, v, i) <= comp
            me = view[v].key
            above = [w for w in comp if view[w].key > me]
            below = [w for w in comp if view[w].key < me]
            if above:
                closest = min(above, key=lambda w: view[w].key)
                assert target.levels[v][closest] <= i
            if below:
                closest = max(below, key=lambda w: view[w].key)
                assert target.levels[v][closest] <= i


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 256), st.integers(0, 10**6))
def test_target_is_connected(n, seed):
    view = random_view(n, seed)
    assert union_find_connected(view.nodes, target_edges(view).edges)


@pytest.mark.parametrize("n", [64, 256])
def test_degree_stays_logarithmic(n):
    worst = max(target_edges(random_view(n, seed)).max_degree() for seed in range(100))
    assert worst <= 8 * math.log2(n)


def test_is_legal_diffs(f4_view):
    target = target_edges(f4_view)
    edges = set(target.edges)
    cached = {(v, w): f4_view[w].bw for v, w in edges}
    assert is_legal(f4_view, edges, cached).lines(f4_view) == []

    edges.discard((D, B))
    report = is_legal(f4_view, edges, {k: c for k, c in cached.items() if k != (D, B)})
    assert not report.legal
    assert report.lines(f4_view) == ["MISSING D→B@0"]

    stale = dict(cached)
    stale[(A, B)] = 31.0
    report = is_legal(f4_view, target.edges, stale)
    assert report.lines(f4_view) == ["STALE A:B"]

    report = is_legal(f4_view, target.edges | {(A, D)}, cached)
    assert report.lines(f4_view) == ["SURPLUS A→D"]


def test_common_prefix_sanity_on_fixture(f4_view):
    assert common_prefix(f4_view[A].rs, f4_view[B].rs) == 1
    assert common_prefix(f4_view[A].rs, f4_view[C].rs) == 0
