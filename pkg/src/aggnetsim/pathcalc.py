"""Shortest-path trees and min-weight edge-disjoint path pairs.

Both computations run on deterministically perturbed weights:

    W(e) = w(e) * 2^E + 2^rank(e)

with rank(e) the edge's position in the sorted edge list.  Any two
distinct edge sets then have distinct totals, so every shortest path is
unique.  The perturbation of a whole (loop-free) path or pair stays below
one original weight unit, so optimality in original weights is preserved,
and the per-destination trees are mutually consistent: the forward and
reverse paths between any two nodes use the same edges, which is what
makes bidirectional LSPs built from two unidirectional merging paths
co-routed.  On an unweighted diamond the rule picks the neighbor reached
through lower-ranked edges, e.g. parent(A)=B over C for dst D.
"""

from __future__ import annotations

import heapq
from itertools import combinations


class NoDisjointPair(Exception):
    """The graph has no two edge-disjoint paths between the endpoints."""


def _edge_key(u, v) -> tuple:
    return (u, v) if u <= v else (v, u)


def perturbed_weights(adj: dict) -> dict:
    """Map each undirected edge key to its canonical perturbed weight."""
    edges = sorted({_edge_key(u, v) for u, nbrs in adj.items() for v in nbrs})
    scale = 1 << len(edges)
    return {e: adj[e[0]][e[1]] * scale + (1 << i)
            for i, e in enumerate(edges)}


def shortest_path_tree(adj: dict, dst) -> tuple[dict, dict]:
    """Dijkstra toward dst.

    Returns (parent, dist): parent maps every reachable node except dst to
    its next hop toward dst; dist carries original-weight distances.
    Nodes in other components are simply absent.
    """
    if dst not in adj:
        raise KeyError(f"dst {dst!r} not in graph")
    pw = perturbed_weights(adj)
    best = {dst: 0}
    parent: dict = {}
    dist = {dst: 0}
    seen: set = set()
    heap = [(0, dst, None, 0)]
    while heap:
        d, v, via, d_orig = heapq.heappop(heap)
        if v in seen:
            continue
        seen.add(v)
        if via is not None:
            parent[v] = via
            dist[v] = d_orig
        for u in sorted(adj[v]):
            nd = d + pw[_edge_key(v, u)]
            if u not in best or nd < best[u]:
                best[u] = nd
                heapq.heappush(heap, (nd, u, v, d_orig + adj[v][u]))
    return parent, dist


def path_via_parents(parent: dict, src, dst) -> list:
    """Node sequence src..dst following parent pointers."""
    path = [src]
    node = src
    while node != dst:
        node = parent[node]
        path.append(node)
        if len(path) > len(parent) + 2:
            raise RuntimeError("parent map has a loop")
    return path


def _dijkstra_arcs(nodes, arcs: dict, src) -> tuple[dict, dict]:
    """Plain Dijkstra over a directed arc map {u: {v: cost}}."""
    dist = {src: 0}
    pred: dict = {}
    heap = [(0, src, None)]
    seen = set()
    while heap:
        d, v, via = heapq.heappop(heap)
        if v in seen:
            continue
        seen.add(v)
        if via is not None:
            pred[v] = via
        for u in sorted(arcs.get(v, {})):
            nd = d + arcs[v][u]
            if u not in dist or nd < dist[u]:
                dist[u] = nd
                heapq.heappush(heap, (nd, u, v))
    return dist, pred


def compute_disjoint_pair(adj: dict, a, b) -> tuple[list, list]:
    """Min-total-weight edge-disjoint path pair between a and b.

    Two-pass shortest-path computation on the residual graph (Suurballe
    style, adapted to undirected graphs).  primary is the lower-weight
    path, ties broken by the lexicographically smaller node sequence.
    """
    if a == b:
        raise ValueError("endpoints must differ")
    if a not in adj or b not in adj:
        raise KeyError("endpoint not in graph")
    pw = perturbed_weights(adj)
    nodes = sorted(adj)
    arcs = {u: {v: pw[_edge_key(u, v)] for v in nbrs}
            for u, nbrs in adj.items()}

    d1, pred1 = _dijkstra_arcs(nodes, arcs, a)
    if b not in d1:
        raise NoDisjointPair(f"{a} and {b} are disconnected")
    p1 = [b]
    while p1[-1] != a:
        p1.append(pred1[p1[-1]])
    p1.reverse()
    p1_arcs = set(zip(p1, p1[1:]))

    residual: dict = {u: {} for u in nodes}
    for u in nodes:
        for v, c in arcs[u].items():
            if (u, v) in p1_arcs:
                continue
            if (v, u) in p1_arcs:
                residual[u][v] = 0                      # undo primary flow
            else:
                residual[u][v] = c + d1[u] - d1[v]      # reduced cost >= 0
    d2, pred2 = _dijkstra_arcs(nodes, residual, a)
    if b not in d2:
        raise NoDisjointPair(f"no second edge-disjoint path {a}..{b}")
    p2 = [b]
    while p2[-1] != a:
        p2.append(pred2[p2[-1]])
    p2.reverse()

    # XOR the two arc sets: traversing a residual arc cancels a primary edge.
    arc_set = set(p1_arcs)
    for u, v in zip(p2, p2[1:]):
        if (v, u) in arc_set:
            arc_set.discard((v, u))
        else:
            arc_set.add((u, v))

    out: dict = {}
    for u, v in arc_set:
        out.setdefault(u, []).append(v)
    for u in out:
        out[u].sort()

    paths = []
    for _ in range(2):
        node = a
        path = [a]
        while node != b:
            nxt = out[node].pop(0)
            path.append(nxt)
            node = nxt
        paths.append(path)

    def weight(path):
        return sum(adj[u][v] for u, v in zip(path, path[1:]))

    paths.sort(key=lambda p: (weight(p), p))
    primary, backup = paths
    return primary, backup


def enumerate_disjoint_pairs(adj: dict, a, b):
    """Oracle: every edge-disjoint simple-path pair, by exhaustive search.

    Exponential; for test graphs of ~10 nodes only.
    """
    def simple_paths(src, dst, banned):
        stack = [(src, [src], frozenset())]
        while stack:
            node, path, used = stack.pop()
            if node == dst:
                yield path, used
                continue
            for nbr in sorted(adj[node]):
                e = _edge_key(node, nbr)
                if nbr in path or e in used or e in banned:
                    continue
                stack.append((nbr, path + [nbr], used | {e}))

    for p1, used1 in simple_paths(a, b, frozenset()):
        for p2, _ in simple_paths(a, b, used1):
            yield p1, p2


def best_pair_weight(adj: dict, a, b):
    """Oracle minimum total weight over all edge-disjoint pairs, or None."""
    best = None
    for p1, p2 in enumerate_disjoint_pairs(adj, a, b):
        w = sum(adj[u][v] for u, v in zip(p1, p1[1:]))
        w += sum(adj[u][v] for u, v in zip(p2, p2[1:]))
        if best is None or w < best:
            best = w
    return best
