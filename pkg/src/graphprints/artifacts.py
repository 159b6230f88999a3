"""CSV and JSON artifacts passed between pipeline stages."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from graphprints.clustering import NodeScore
from graphprints.robust import AnomalyScore


def _to_csv(df: pd.DataFrame, path: str | Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n")


def write_graph_vectors(window_indices: Sequence[int], counts: np.ndarray, catalog_hash: str, path) -> None:
    counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
    df = pd.DataFrame(counts, columns=[f"c_{i}" for i in range(counts.shape[1])])
    df.insert(0, "catalog_hash", catalog_hash)
    df.insert(0, "window_index", list(window_indices))
    _to_csv(df, path)


def read_graph_vectors(path, catalog_hash: str | None = None) -> tuple[list[int], np.ndarray]:
    df = pd.read_csv(path, dtype={"catalog_hash": str})
    if catalog_hash is not None and len(df) and set(df["catalog_hash"]) != {catalog_hash}:
        raise ValueError(f"{path}: graph vectors were counted with a different graphlet catalog")
    cols = [c for c in df.columns if c.startswith("c_")]
    return df["window_index"].astype(int).tolist(), df[cols].to_numpy(dtype=np.int64)


def write_orbit_vectors(rows: Iterable[tuple[int, str, np.ndarray]], n_orbits: int, path) -> None:
    rows = list(rows)
    mat = np.array([r[2] for r in rows], dtype=np.int64).reshape(len(rows), n_orbits)
    df = pd.DataFrame(mat, columns=[f"o_{i}" for i in range(n_orbits)])
    df.insert(0, "ip", [r[1] for r in rows])
    df.insert(0, "window_index", [r[0] for r in rows])
    _to_csv(df, path)


def read_orbit_vectors(path) -> list[tuple[int, str, np.ndarray]]:
    df = pd.read_csv(path, dtype={"ip": str}, float_precision="round_trip")
    cols = [c for c in df.columns if c.startswith("o_")]
    mat = df[cols].to_numpy(dtype=np.int64)
    return [(int(w), ip, mat[i]) for i, (w, ip) in enumerate(zip(df["window_index"], df["ip"]))]


def _log_score(s: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(s)


def write_graph_scores(scores: Sequence[AnomalyScore], path) -> None:
    s = np.array([a.score for a in scores], dtype=float)
    df = pd.DataFrame({"window_index": [a.window_index for a in scores], "score": s, "log_score": _log_score(s)})
    _to_csv(df, path)


def read_graph_scores(path) -> list[AnomalyScore]:
    df = pd.read_csv(path, float_precision="round_trip")
    return [AnomalyScore(int(w), float(s)) for w, s in zip(df["window_index"], df["score"])]


def write_node_scores(scores: Sequence[NodeScore], path) -> None:
    df = pd.DataFrame(
        {
            "window_index": [a.window_index for a in scores],
            "ip": [a.ip for a in scores],
            "score": np.array([a.score for a in scores], dtype=float),
        }
    )
    _to_csv(df, path)


def read_node_scores(path) -> list[NodeScore]:
    df = pd.read_csv(path, dtype={"ip": str}, float_precision="round_trip")
    return [NodeScore(int(w), ip, float(s)) for w, ip, s in zip(df["window_index"], df["ip"], df["score"])]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        items = sorted(obj) if isinstance(obj, set) else obj
        return [_jsonable(v) for v in items]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(data: dict, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
