import numpy as np
import pytest
from hypothesis import settings

from graphprints.graphlets import build_catalog, count_graphlets
from graphprints.graphs import WindowGraph

from oracles import OFF_DIAGONAL, classify_all_triples, tiny_graph

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def catalog():
    return build_catalog()


@pytest.fixture(scope="session")
def oracle_maps(catalog):
    """Bijections from oracle classes to catalog types and orbits, calibrated on all 3-vertex graphs."""
    import itertools

    type_map, orbit_map = {}, {}
    for states in itertools.product(range(3), repeat=6):
        adj = tiny_graph(states)
        triples, canon, pos = classify_all_triples(adj)
        if len(triples) == 0:
            continue
        edges = [(f"v{i}", f"v{j}", int(s)) for (i, j), s in zip(OFF_DIAGONAL, states) if s]
        res = count_graphlets(WindowGraph.from_edges(0, edges), catalog)
        (t,) = np.flatnonzero(res.counts)
        assert type_map.setdefault(int(canon[0]), int(t)) == t
        for s in range(3):
            (o,) = np.flatnonzero(res.orbit_counts[s])
            assert orbit_map.setdefault((int(canon[0]), int(pos[0, s])), int(o)) == o
    return type_map, orbit_map


def oracle_counts(adj, catalog, maps):
    """Graphlet and orbit counts of ``adj`` from the brute-force classifier."""
    type_map, orbit_map = maps
    type_lut = np.full(3**6, -1)
    orbit_lut = np.full((3**6, 3), -1)
    for c, t in type_map.items():
        type_lut[c] = t
    for (c, p), o in orbit_map.items():
        orbit_lut[c, p] = o
    triples, canon, pos = classify_all_triples(adj)
    n, m = len(adj), catalog.n_orbits
    counts = np.bincount(type_lut[canon], minlength=catalog.n_types)
    flat = (triples * m + orbit_lut[canon[:, None], pos]).ravel()
    orbits = np.bincount(flat, minlength=n * m).reshape(n, m)
    return counts, orbits


def small_scenario(seed=1):
    """~180 windows of light traffic with a short anomaly; cheap enough for unit tests."""
    from graphprints.synth import AmbientModel, AnomalyPhase, AnomalyProfile, generate_ambient, inject_anomaly

    model = AmbientModel(n_clients=60, n_servers=120, rate=6.0, duration=5400.0)
    profile = AnomalyProfile(
        phases=[AnomalyPhase(160, 166, 0.15, 40, "high"), AnomalyPhase(166, 170, 0.02, 5, "low")]
    )
    return inject_anomaly(generate_ambient(model, seed), profile, seed, model)


SMALL_CONFIG = dict(train_count=140, mcd_subsets=30, k_max=4, gap_reps=3)
