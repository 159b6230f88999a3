"""Independent reference implementations used by the tests.

Nothing here calls into the library's encoding, canonicalization or
enumeration code.  The brute-force graphlet oracle looks at every 3-subset,
encodes it as a row-major 3x3 state matrix and canonicalizes by taking the
minimum over all six vertex orders.
"""

from __future__ import annotations

import itertools

import networkx as nx
import numpy as np

from graphprints.graphs import WindowGraph

ORACLE_PERMS = list(itertools.permutations(range(3)))
OFF_DIAGONAL = [(i, j) for i in range(3) for j in range(3) if i != j]


def random_colored_digraph(seed: int, n: int, p: float) -> WindowGraph:
    rng = np.random.default_rng(seed)
    arcs = (rng.random((n, n)) < p) & ~np.eye(n, dtype=bool)
    colors = rng.integers(1, 3, size=(n, n))
    edges = [(f"v{a:03d}", f"v{b:03d}", int(colors[a, b])) for a, b in zip(*np.nonzero(arcs))]
    return WindowGraph.from_edges(seed, edges)


def state_matrix(g: WindowGraph) -> np.ndarray:
    adj = np.zeros((g.n_vertices, g.n_vertices), dtype=np.int64)
    adj[g.src, g.dst] = g.color
    return adj


def classify_all_triples(adj: np.ndarray):
    """Every weakly connected 3-subset with its canonical code and each member's canonical position.

    Returns ``(triples, canon, pos)``: ``pos[t, s]`` is the smallest position
    vertex ``triples[t, s]`` can occupy in a minimizing vertex order, which
    identifies its automorphism orbit.
    """
    n = len(adj)
    if n < 3:
        return np.empty((0, 3), int), np.empty(0, int), np.empty((0, 3), int)
    triples = np.array(list(itertools.combinations(range(n), 3)))
    und = (adj > 0) | (adj.T > 0)
    a, b, c = triples.T
    connected = und[a, b].astype(int) + und[a, c] + und[b, c] >= 2
    triples = triples[connected]
    codes = np.empty((len(triples), 6), dtype=np.int64)
    for k, perm in enumerate(ORACLE_PERMS):
        v = triples[:, perm]
        code = np.zeros(len(triples), dtype=np.int64)
        for i, j in OFF_DIAGONAL:
            code = code * 3 + adj[v[:, i], v[:, j]]
        codes[:, k] = code
    canon = codes.min(axis=1)
    pos = np.full((len(triples), 3), 3)
    for k, perm in enumerate(ORACLE_PERMS):
        hit = codes[:, k] == canon
        for s in range(3):
            pos[hit, s] = np.minimum(pos[hit, s], perm.index(s))
    return triples, canon, pos


def tiny_graph(states: tuple[int, ...]) -> np.ndarray:
    adj = np.zeros((3, 3), dtype=np.int64)
    for (i, j), s in zip(OFF_DIAGONAL, states):
        adj[i, j] = s
    return adj


def networkx_classes(n_colors: int) -> list[nx.DiGraph]:
    """Isomorphism classes of weakly connected 3-vertex digraphs with arcs in ``n_colors`` colors."""
    reps: list[nx.DiGraph] = []
    match = nx.algorithms.isomorphism.categorical_edge_match("c", None)
    for states in itertools.product(range(n_colors + 1), repeat=6):
        g = nx.DiGraph()
        g.add_nodes_from(range(3))
        g.add_edges_from((i, j, {"c": s}) for (i, j), s in zip(OFF_DIAGONAL, states) if s)
        if not nx.is_weakly_connected(g):
            continue
        if not any(nx.is_isomorphic(g, r, edge_match=match) for r in reps):
            reps.append(g)
    return reps


def networkx_orbit_count(g: nx.DiGraph) -> int:
    match = nx.algorithms.isomorphism.categorical_edge_match("c", None)
    autos = list(nx.algorithms.isomorphism.DiGraphMatcher(g, g, edge_match=match).isomorphisms_iter())
    return len({frozenset(a[v] for a in autos) for v in g})
