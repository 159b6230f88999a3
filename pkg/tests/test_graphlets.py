import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphprints.graphlets import (
    EXPECTED_ORBITS,
    EXPECTED_TYPES,
    EXPECTED_UNCOLORED_TYPES,
    PERMUTATIONS,
    canonical_code,
    count_graphlets,
    is_weakly_connected,
    orbit_partition,
    relabel,
    wedge_triples,
)
from graphprints.graphs import BLUE, RED, WindowGraph

from conftest import oracle_counts
from oracles import networkx_classes, networkx_orbit_count, random_colored_digraph, state_matrix

codes = st.tuples(*[st.integers(0, 2)] * 6)


def test_catalog_sizes_match_networkx(catalog):
    reps = networkx_classes(2)
    assert catalog.n_types == len(reps) == EXPECTED_TYPES
    assert catalog.n_orbits == sum(networkx_orbit_count(g) for g in reps) == EXPECTED_ORBITS


def test_uncolored_projection_has_13_types(catalog):
    collapsed = {canonical_code(tuple(min(s, 1) for s in code))[0] for code in catalog.types}
    assert len(collapsed) == len(networkx_classes(1)) == EXPECTED_UNCOLORED_TYPES


def test_catalog_hash_is_stable(catalog):
    assert catalog.hash == "0333857fe0eeade0"


def test_directed_path_has_three_orbits():
    # a->b->c on pairs (0,1) and (1,2)
    code = (1, 0, 0, 1, 0, 0)
    assert len(orbit_partition(code)) == 3


def test_mutual_dyad_star_orbits():
    # a<->b, a<->c
    code = (1, 1, 1, 0, 1, 0)
    parts = sorted(orbit_partition(code), key=len)
    assert parts == [(0,), (1, 2)]


def test_empty_graph_counts(catalog):
    g = WindowGraph.from_edges(0, [])
    res = count_graphlets(g, catalog)
    assert res.counts.sum() == 0 and res.orbit_counts.shape == (0, catalog.n_orbits)


def test_single_path(catalog):
    g = WindowGraph.from_edges(0, [("a", "b", BLUE), ("b", "c", BLUE)])
    res = count_graphlets(g, catalog)
    assert np.count_nonzero(res.counts) == 1 and res.counts.sum() == 1
    hit = [np.flatnonzero(res.orbit_vector(ip)) for ip in "abc"]
    assert all(len(h) == 1 for h in hit)
    assert len({int(h[0]) for h in hit}) == 3
    assert all(res.orbit_vector(ip).sum() == 1 for ip in "abc")


def test_cyclic_triangle_code_independent_of_labels():
    base = WindowGraph.from_edges(0, [("a", "b", RED), ("b", "c", RED), ("c", "a", RED)])
    other = WindowGraph.from_edges(0, [("x", "z", RED), ("z", "y", RED), ("y", "x", RED)])
    assert np.array_equal(count_graphlets(base).counts, count_graphlets(other).counts)


@given(codes)
def test_canonical_code_invariant_under_relabeling(code):
    canon, perm = canonical_code(code)
    assert relabel(code, perm) == canon
    for p in PERMUTATIONS:
        assert canonical_code(relabel(code, p))[0] == canon


@given(codes, st.permutations(range(3)))
def test_isomorphic_triples_share_a_type(catalog, code, perm):
    if not is_weakly_connected(code):
        return
    assert catalog.index_of(code) == catalog.index_of(relabel(code, tuple(perm)))


@pytest.mark.parametrize("seed", range(25))
def test_counts_match_brute_force(catalog, oracle_maps, seed):
    n = 5 + seed
    g = random_colored_digraph(seed, n, (0.05, 0.1, 0.3)[seed % 3])
    counts, orbits = oracle_counts(state_matrix(g), catalog, oracle_maps)
    res = count_graphlets(g, catalog)
    assert np.array_equal(res.counts, counts)
    assert np.array_equal(res.orbit_counts, orbits)


@pytest.mark.parametrize("seed", range(10))
def test_esu_and_wedge_agree(catalog, seed):
    g = random_colored_digraph(100 + seed, 25, 0.15)
    a = count_graphlets(g, catalog, method="wedge")
    b = count_graphlets(g, catalog, method="esu")
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.orbit_counts, b.orbit_counts)


def test_wedge_triples_are_unique_and_connected():
    g = random_colored_digraph(7, 30, 0.2)
    t = np.sort(wedge_triples(g), axis=1)
    assert len(np.unique(t, axis=0)) == len(t)
    und = set(zip(g.src.tolist(), g.dst.tolist())) | set(zip(g.dst.tolist(), g.src.tolist()))
    for a, b, c in t.tolist():
        assert sum(p in und for p in [(a, b), (a, c), (b, c)]) >= 2


def test_counts_sum_to_connected_triples(catalog):
    g = random_colored_digraph(3, 20, 0.2)
    und = (state_matrix(g) > 0) | (state_matrix(g).T > 0)
    expected = sum(
        int(und[a, b]) + int(und[a, c]) + int(und[b, c]) >= 2 for a, b, c in itertools.combinations(range(g.n_vertices), 3)
    )
    assert count_graphlets(g, catalog).counts.sum() == expected


@given(st.integers(0, 10_000), st.permutations(range(12)))
def test_vertex_renaming_permutes_orbit_vectors(seed, perm):
    g = random_colored_digraph(seed, 12, 0.3)
    rename = {f"v{i:03d}": f"w{perm[i]:03d}" for i in range(12)}
    h = WindowGraph.from_edges(0, [(rename[a], rename[b], c) for a, b, c in g.edges()])
    rg, rh = count_graphlets(g), count_graphlets(h)
    assert np.array_equal(rg.counts, rh.counts)
    for ip in g.ips:
        assert np.array_equal(rg.orbit_vector(ip), rh.orbit_vector(rename[ip]))


def test_orbit_sum_identity(catalog):
    g = random_colored_digraph(11, 40, 0.1)
    res = count_graphlets(g, catalog)
    sizes, owner = catalog.orbit_sizes(), catalog.orbit_type()
    assert np.array_equal(res.orbit_counts.sum(axis=0), sizes * res.counts[owner])


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        count_graphlets(WindowGraph.from_edges(0, []), method="nope")
