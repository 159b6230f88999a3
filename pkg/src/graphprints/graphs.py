"""Time windows over a flow table and the colored digraph of each window."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import pandas as pd

from graphprints.flows import FlowTable

US = 1_000_000
BLUE, RED = 1, 2
COLOR_NAMES = {BLUE: "blue", RED: "red"}
WELL_KNOWN_LIMIT = 1024


@dataclass(frozen=True)
class WindowSpec:
    """Overlapping windows of ``width`` seconds; consecutive starts are ``width - overlap`` apart.

    ``start`` is in microseconds; ``None`` anchors at the first flow's
    timestamp floored to a whole second.
    """

    width: float = 31.0
    overlap: float = 1.0
    start: int | None = None

    def __post_init__(self):
        if not 0 <= self.overlap < self.width:
            raise ValueError(f"need 0 <= overlap < width, got overlap={self.overlap} width={self.width}")

    @property
    def width_us(self) -> int:
        return round(self.width * US)

    @property
    def step_us(self) -> int:
        return round((self.width - self.overlap) * US)

    def anchored(self, first_timestamp: int) -> "WindowSpec":
        if self.start is not None:
            return self
        return WindowSpec(self.width, self.overlap, (first_timestamp // US) * US)

    def bounds(self, index: int) -> tuple[int, int]:
        lo = self.start + index * self.step_us
        return lo, lo + self.width_us


def window_range(t: np.ndarray, spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive range of window indices containing each timestamp (empty when first > last)."""
    rel = np.asarray(t, dtype=np.int64) - spec.start
    last = np.floor_divide(rel, spec.step_us)
    # window i contains rel iff i*step <= rel < i*step + width
    first = np.floor_divide(rel - spec.width_us, spec.step_us) + 1
    return np.maximum(first, 0), last


def assign_windows(flows: FlowTable, spec: WindowSpec) -> list[FlowTable]:
    """Split a timestamp-ordered flow table into per-window batches.

    A flow belongs to every window whose half-open span contains its
    timestamp.  Windows with no flows are returned as empty tables.
    """
    if len(flows) == 0:
        return []
    spec = spec.anchored(int(flows.timestamp[0]))
    first, last = window_range(flows.timestamp, spec)
    n_windows = int(last.max()) + 1
    counts = np.maximum(last - first + 1, 0)
    flow_idx = np.repeat(np.arange(len(flows)), counts)
    offsets = np.arange(len(flow_idx)) - np.repeat(np.cumsum(counts) - counts, counts)
    win_idx = np.repeat(first, counts) + offsets
    order = np.argsort(win_idx, kind="stable")
    flow_idx, win_idx = flow_idx[order], win_idx[order]
    bounds = np.searchsorted(win_idx, np.arange(n_windows + 1))
    return [flows.take(flow_idx[bounds[i] : bounds[i + 1]]) for i in range(n_windows)]


def flow_edge_color(src_port, dst_port):
    """Blue when either port is well known (< 1024), red otherwise.  Works elementwise on arrays."""
    well_known = np.minimum(src_port, dst_port) < WELL_KNOWN_LIMIT
    if np.ndim(well_known) == 0:
        return BLUE if well_known else RED
    return np.where(well_known, BLUE, RED).astype(np.int8)


@dataclass(frozen=True, eq=False)
class WindowGraph:
    """Colored simple digraph of one window.

    Vertex ``v`` is the IP ``ips[v]``; ``ips`` is sorted so the relabeling is
    deterministic.  Arc ``e`` runs ``src[e] -> dst[e]`` with color ``color[e]``
    (1 = blue, 2 = red).
    """

    window_index: int
    ips: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    color: np.ndarray
    flow_count: int = 0

    @property
    def n_vertices(self) -> int:
        return len(self.ips)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self) -> set[tuple[str, str, int]]:
        return {(self.ips[a], self.ips[b], int(c)) for a, b, c in zip(self.src, self.dst, self.color)}

    def __eq__(self, other) -> bool:
        if not isinstance(other, WindowGraph):
            return NotImplemented
        return (
            self.window_index == other.window_index
            and self.ips == other.ips
            and self.flow_count == other.flow_count
            and self.edges() == other.edges()
        )

    @classmethod
    def from_edges(cls, window_index: int, edges: Iterable[tuple[str, str, int]], flow_count: int = 0) -> "WindowGraph":
        edges = sorted(set(edges))
        ips = tuple(sorted({e[0] for e in edges} | {e[1] for e in edges}))
        pos = {ip: i for i, ip in enumerate(ips)}
        src = np.array([pos[a] for a, _, _ in edges], dtype=np.int64)
        dst = np.array([pos[b] for _, b, _ in edges], dtype=np.int64)
        color = np.array([c for _, _, c in edges], dtype=np.int8)
        if len({(a, b) for a, b, _ in edges}) != len(edges) or np.any(src == dst):
            raise ValueError("edges must form a simple loop-free digraph")
        return cls(window_index, ips, src, dst, color, flow_count)


def build_window_graph(batch: FlowTable, index: int) -> WindowGraph:
    """Aggregate a window's flows into one colored arc per ordered IP pair.

    Per pair, bytes of blue-classified and red-classified flows are summed;
    the arc is blue only when blue bytes strictly exceed red bytes.
    """
    if len(batch) == 0:
        return WindowGraph(index, (), np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int8), 0)
    color = flow_edge_color(batch.src_port, batch.dst_port)
    df = pd.DataFrame(
        {
            "src": batch.src_ip,
            "dst": batch.dst_ip,
            "blue": np.where(color == BLUE, batch.total_bytes, 0),
            "red": np.where(color == RED, batch.total_bytes, 0),
        }
    )
    df = df[df["src"] != df["dst"]]
    agg = df.groupby(["src", "dst"], sort=True)[["blue", "red"]].sum()
    src_ip = agg.index.get_level_values(0).to_numpy(dtype=object)
    dst_ip = agg.index.get_level_values(1).to_numpy(dtype=object)
    ips, inverse = np.unique(np.concatenate([src_ip, dst_ip]), return_inverse=True)
    m = len(agg)
    arc_color = np.where(agg["blue"].to_numpy() > agg["red"].to_numpy(), BLUE, RED).astype(np.int8)
    return WindowGraph(
        index,
        tuple(str(ip) for ip in ips),
        inverse[:m].astype(np.int64),
        inverse[m:].astype(np.int64),
        arc_color,
        len(batch),
    )


def build_graphs(flows: FlowTable, spec: WindowSpec) -> Iterator[WindowGraph]:
    for i, batch in enumerate(assign_windows(flows, spec)):
        yield build_window_graph(batch, i)


# ------------------------------------------------------------------ edge-list files

GRAPH_COLUMNS = ["window_index", "flow_count", "src_ip", "dst_ip", "color"]


def write_graphs(graphs: Iterable[WindowGraph], path: str | Path) -> None:
    """Edge-list CSV; windows without edges appear as a row with empty endpoints."""
    frames = []
    for g in graphs:
        if g.n_edges == 0:
            frames.append(
                pd.DataFrame(
                    {"window_index": [g.window_index], "flow_count": [g.flow_count], "src_ip": [""], "dst_ip": [""], "color": [""]}
                )
            )
            continue
        ips = np.asarray(g.ips, dtype=object)
        frames.append(
            pd.DataFrame(
                {
                    "window_index": g.window_index,
                    "flow_count": g.flow_count,
                    "src_ip": ips[g.src],
                    "dst_ip": ips[g.dst],
                    "color": np.asarray(["", "blue", "red"], dtype=object)[g.color],
                }
            )
        )
    df = pd.concat(frames, ignore_index=True)[GRAPH_COLUMNS] if frames else pd.DataFrame(columns=GRAPH_COLUMNS)
    df.to_csv(path, index=False, lineterminator="\n")


def read_graphs(path: str | Path) -> list[WindowGraph]:
    df = pd.read_csv(path, dtype={"src_ip": str, "dst_ip": str, "color": str}, keep_default_na=False)
    graphs = []
    for w, part in df.groupby("window_index", sort=True):
        flow_count = int(part["flow_count"].iloc[0])
        part = part[part["src_ip"] != ""]
        color = part["color"].map({"blue": BLUE, "red": RED})
        if color.isna().any():
            raise ValueError(f"{path}: unknown edge color in window {w}")
        edges = zip(part["src_ip"], part["dst_ip"], color.astype(int))
        graphs.append(WindowGraph.from_edges(int(w), edges, flow_count))
    return graphs
