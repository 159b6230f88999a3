"""Time the graphlet-counting stage on 350 windows of ~1,265 nodes and ~4,900 edges.

    python3 scripts/scale_check.py --windows 350
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from graphprints.graphlets import build_catalog, count_graphlets
from graphprints.graphs import build_graphs
from graphprints.pipeline import PipelineConfig
from graphprints.synth import AmbientModel, generate_ambient


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--windows", type=int, default=350)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--method", choices=["wedge", "esu"], default="wedge")
    args = ap.parse_args()

    spec = PipelineConfig().window_spec
    model = AmbientModel(duration=args.windows * spec.step_us / 1e6 + (spec.width_us - spec.step_us) / 1e6)
    graphs = list(build_graphs(generate_ambient(model, args.seed), spec))[: args.windows]
    nodes = np.array([g.n_vertices for g in graphs])
    edges = np.array([g.n_edges for g in graphs])
    print(f"{len(graphs)} windows, mean {nodes.mean():.0f} nodes, {edges.mean():.0f} edges")

    catalog = build_catalog()
    t0 = time.perf_counter()
    for g in graphs:
        count_graphlets(g, catalog, method=args.method)
    elapsed = time.perf_counter() - t0
    print(f"counting ({args.method}): {elapsed:.1f} s total, {1000 * elapsed / len(graphs):.1f} ms per window")


if __name__ == "__main__":
    main()
