import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmorse.merge import (AdjacencyGraph, Dendrogram, build_graph, full_dendrogram, merge_to_k,
                           merge_with_relays, minimax_weights, reduce_to_leading, relay_labels)
from dpmorse.tev import TransitionRecord


def rec(a, b, w):
    return TransitionRecord(np.zeros(2), a, b, w, float(np.exp(-w)))


def groups(labels):
    out = {}
    for i, v in enumerate(labels):
        out.setdefault(int(v), set()).add(i)
    return {frozenset(s) for s in out.values()}


def kruskal_cut(n, edges, K):
    """Components after adding the n-K lightest edges that join different components."""
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    joins = 0
    for w, a, b in sorted((w, a, b) for (a, b), w in edges.items()):
        if joins == n - K:
            break
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
            joins += 1
    return groups([find(i) for i in range(n)])


def test_three_vertex_trace():
    g = build_graph(3, [rec(0, 1, 0.2), rec(1, 2, 0.9)])
    r = merge_to_k(g, 2)
    assert groups(r.labels) == {frozenset({0, 1}), frozenset({2})}
    assert r.dendrogram.merges[0].weight == 0.2 and not r.disconnected
    assert merge_to_k(g, 1).labels.tolist() == [0, 0, 0]
    assert merge_to_k(g, 3).labels.tolist() == [0, 1, 2]


def test_chain_merges_lightest_first():
    g = build_graph(5, [rec(0, 1, 0.4), rec(1, 2, 0.1), rec(2, 3, 0.3), rec(3, 4, 0.2)])
    assert [m.weight for m in full_dendrogram(g).merges] == [0.1, 0.2, 0.3, 0.4]
    assert groups(merge_to_k(g, 2).labels) == {frozenset({0}), frozenset({1, 2, 3, 4})}


def test_edgeless_graph_is_disconnected():
    r = merge_to_k(AdjacencyGraph(4), 2)
    assert r.disconnected and r.n_clusters == 4 and r.labels.tolist() == [0, 1, 2, 3]


def test_parallel_records_keep_minimum_and_reject_bad_edges():
    g = build_graph(2, [rec(0, 1, 0.7), rec(1, 0, 0.3)])
    assert g.edges == {(0, 1): 0.3}
    with pytest.raises(ValueError):
        build_graph(2, [rec(0, 2, 1.0)])
    with pytest.raises(ValueError):
        build_graph(2, [rec(1, 1, 1.0)])
    with pytest.raises(ValueError):
        merge_to_k(g, 0)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_cut_matches_spanning_forest_oracle(n, seed, density):
    rng = np.random.default_rng(seed)
    edges = {(a, b): float(rng.uniform(0.1, 5.0)) for a in range(n) for b in range(a + 1, n)
             if rng.random() < density}
    g = AdjacencyGraph(n, edges)
    dendro = full_dendrogram(g)
    for K in range(1, n + 1):
        r = merge_to_k(g, K)
        assert groups(r.labels) == kruskal_cut(n, edges, K)
        if not r.disconnected:
            assert groups(dendro.cut(K)) == groups(r.labels)
    w = [m.weight for m in dendro.merges]
    assert w == sorted(w)


def test_minimax_and_leading_reduction():
    g = AdjacencyGraph(4, {(0, 2): 0.5, (2, 1): 0.3, (1, 3): 2.0})
    mm = minimax_weights(g)
    assert mm[0, 1] == 0.5 and mm[0, 3] == 2.0
    red = reduce_to_leading(g, 2)
    assert red.edges == {(0, 1): 0.5}
    labels = relay_labels(g, 2, [0, 1])
    assert labels.tolist() == [0, 1, 1, 0]  # vertex 3 ties at 2.0 and goes low
    assert relay_labels(AdjacencyGraph(3), 2, [0, 1]).tolist() == [0, 1, -1]


def test_merge_with_relays_in_any_order():
    g = AdjacencyGraph(5, {(0, 4): 0.2, (4, 1): 0.4, (1, 2): 1.5, (2, 3): 0.1})
    merged, labels = merge_with_relays(g, [3, 0, 1], 2)
    assert groups(merged.labels) == {frozenset({0}), frozenset({1, 2})}
    assert labels[0] == labels[1] == labels[4] and labels[2] == labels[3] and labels[0] != labels[2]


def test_dendrogram_json_and_render():
    g = build_graph(3, [rec(0, 1, 0.2), rec(1, 2, 0.9)])
    d = full_dendrogram(g)
    back = Dendrogram.from_dict(d.to_dict())
    assert back == d
    text = d.render()
    assert text.splitlines()[0].startswith("[4] f=0.9")
    assert "leaf 2" in text
    with pytest.raises(ValueError):
        d.cut(4)
