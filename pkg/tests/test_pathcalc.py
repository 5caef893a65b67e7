"""Tree and disjoint-pair computations against independent oracles."""

import random

import networkx as nx
import pytest

from aggnetsim import pathcalc as pc


def adj_from_edges(edges):
    adj = {}
    for u, v, w in edges:
        adj.setdefault(u, {})[v] = w
        adj.setdefault(v, {})[u] = w
    return adj


DIAMOND = adj_from_edges([("A", "B", 1), ("A", "C", 1),
                          ("B", "D", 1), ("C", "D", 1)])
RING4 = adj_from_edges([("A", "B", 1), ("B", "C", 1),
                        ("C", "D", 1), ("D", "A", 1)])


def test_line_tree():
    adj = adj_from_edges([("A", "B", 1)])
    parent, dist = pc.shortest_path_tree(adj, "B")
    assert parent == {"A": "B"}
    assert dist == {"B": 0, "A": 1}


def test_diamond_tree_tiebreak():
    parent, dist = pc.shortest_path_tree(DIAMOND, "D")
    assert parent["A"] == "B"       # B preferred over C
    assert parent["B"] == "D"
    assert parent["C"] == "D"
    assert dist["A"] == 2


def test_isolated_node_absent():
    adj = dict(DIAMOND)
    adj["X"] = {}
    parent, dist = pc.shortest_path_tree(adj, "D")
    assert "X" not in parent and "X" not in dist


def random_connected(rng, n, extra=1.6):
    """Connected random graph: spanning tree plus extra edges."""
    nodes = list(range(n))
    edges = []
    for i in range(1, n):
        j = rng.randrange(i)
        edges.append((j, i, rng.randrange(1, 10)))
    have = {(min(u, v), max(u, v)) for u, v, _ in edges}
    want = int(n * extra)
    tries = 0
    while len(edges) < want and tries < 10 * want:
        tries += 1
        u, v = rng.randrange(n), rng.randrange(n)
        if u == v or (min(u, v), max(u, v)) in have:
            continue
        have.add((min(u, v), max(u, v)))
        edges.append((u, v, rng.randrange(1, 10)))
    return adj_from_edges(edges)


def to_nx(adj):
    g = nx.Graph()
    for u, nbrs in adj.items():
        g.add_node(u)
        for v, w in nbrs.items():
            g.add_edge(u, v, weight=w)
    return g


def test_tree_distances_match_networkx_oracle():
    rng = random.Random(42)
    for case in range(100):
        adj = random_connected(rng, rng.randrange(5, 51))
        dst = rng.choice(sorted(adj))
        parent, dist = pc.shortest_path_tree(adj, dst)
        oracle = nx.single_source_dijkstra_path_length(to_nx(adj), dst)
        assert dist == oracle, f"case {case}"
        # walking parents reproduces the recorded distance and terminates
        for node in adj:
            if node == dst:
                continue
            path = pc.path_via_parents(parent, node, dst)
            assert len(path) <= len(adj)
            walked = sum(adj[u][v] for u, v in zip(path, path[1:]))
            assert walked == dist[node]


def test_forward_reverse_paths_corouted():
    rng = random.Random(99)
    for _ in range(60):
        adj = random_connected(rng, rng.randrange(5, 30))
        nodes = sorted(adj)
        a, b = rng.sample(nodes, 2)
        pa, _ = pc.shortest_path_tree(adj, b)
        pb, _ = pc.shortest_path_tree(adj, a)
        fwd = pc.path_via_parents(pa, a, b)
        rev = pc.path_via_parents(pb, b, a)
        fwd_edges = {pc._edge_key(u, v) for u, v in zip(fwd, fwd[1:])}
        rev_edges = {pc._edge_key(u, v) for u, v in zip(rev, rev[1:])}
        assert fwd_edges == rev_edges


# --- disjoint pairs -----------------------------------------------------------

def test_ring_pair():
    primary, backup = pc.compute_disjoint_pair(RING4, "A", "C")
    assert primary == ["A", "B", "C"]
    assert backup == ["A", "D", "C"]


def test_single_edge_has_no_pair():
    adj = adj_from_edges([("A", "B", 1)])
    with pytest.raises(pc.NoDisjointPair):
        pc.compute_disjoint_pair(adj, "A", "B")


def test_diamond_pair_tiebreak():
    primary, backup = pc.compute_disjoint_pair(DIAMOND, "A", "D")
    assert primary == ["A", "B", "D"]
    assert backup == ["A", "C", "D"]


def random_biconnected(rng, n):
    """Ring plus chords: every pair has two edge-disjoint paths."""
    nodes = list(range(n))
    edges = [(i, (i + 1) % n, rng.randrange(1, 10)) for i in range(n)]
    have = {(min(u, v), max(u, v)) for u, v, _ in edges}
    for _ in range(n // 2):
        u, v = rng.randrange(n), rng.randrange(n)
        if u == v or (min(u, v), max(u, v)) in have:
            continue
        have.add((min(u, v), max(u, v)))
        edges.append((u, v, rng.randrange(1, 10)))
    return adj_from_edges(edges)


def pair_weight(adj, primary, backup):
    return (sum(adj[u][v] for u, v in zip(primary, primary[1:]))
            + sum(adj[u][v] for u, v in zip(backup, backup[1:])))


def test_pairs_disjoint_on_random_biconnected():
    rng = random.Random(4242)
    for _ in range(100):
        adj = random_biconnected(rng, rng.randrange(4, 16))
        nodes = sorted(adj)
        a, b = rng.sample(nodes, 2)
        primary, backup = pc.compute_disjoint_pair(adj, a, b)
        pe = {pc._edge_key(u, v) for u, v in zip(primary, primary[1:])}
        be = {pc._edge_key(u, v) for u, v in zip(backup, backup[1:])}
        assert pe.isdisjoint(be)
        assert primary[0] == backup[0] == a
        assert primary[-1] == backup[-1] == b


def test_pair_weight_matches_enumeration_oracle():
    rng = random.Random(777)
    for _ in range(40):
        adj = random_biconnected(rng, rng.randrange(4, 10))
        nodes = sorted(adj)
        a, b = rng.sample(nodes, 2)
        primary, backup = pc.compute_disjoint_pair(adj, a, b)
        assert pair_weight(adj, primary, backup) == pc.best_pair_weight(adj, a, b)


def test_no_pair_detected_against_oracle():
    rng = random.Random(11)
    hits = 0
    for _ in range(60):
        adj = random_connected(rng, rng.randrange(4, 9), extra=1.05)
        nodes = sorted(adj)
        a, b = rng.sample(nodes, 2)
        oracle = pc.best_pair_weight(adj, a, b)
        if oracle is None:
            hits += 1
            with pytest.raises(pc.NoDisjointPair):
                pc.compute_disjoint_pair(adj, a, b)
        else:
            primary, backup = pc.compute_disjoint_pair(adj, a, b)
            assert pair_weight(adj, primary, backup) == oracle
    assert hits > 0  # the sample actually exercised the error path
