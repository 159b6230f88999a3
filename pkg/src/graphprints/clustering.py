"""Node-level detection: k-means on orbit vectors, gap statistic for k, nearest-centroid scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from graphprints.graphs import WindowGraph

log = logging.getLogger(__name__)


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    inertia: float = 0.0
    training_meta: dict = field(default_factory=dict)

    def nearest(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Index of and Euclidean distance to the nearest centroid, per row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = _sq_dists(X, self.centroids).argmin(axis=1)
        diff = X - self.centroids[idx]
        return idx, np.sqrt(np.einsum("ij,ij->i", diff, diff))


@dataclass(frozen=True)
class NodeScore:
    window_index: int
    ip: str
    score: float


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d2 = (X * X).sum(axis=1)[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _inertia(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> float:
    diff = X - C[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    d2 = _sq_dists(X, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        i = rng.choice(len(X), p=d2 / total)
        centers.append(X[i])
        d2 = np.minimum(d2, _sq_dists(X, X[i : i + 1])[:, 0])
    return np.array(centers)


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    k = len(centers)
    labels = None
    history: list[float] = []
    for _ in range(max_iter):
        d2 = _sq_dists(X, centers)
        new = d2.argmin(axis=1)  # ties go to the lowest centroid index
        w = _inertia(X, centers, new)
        if history and w > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means objective increased: {history[-1]} -> {w}")
        history.append(w)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        sizes = np.bincount(labels, minlength=k)
        onehot = np.zeros((k, len(X)))
        onehot[labels, np.arange(len(X))] = 1.0
        sums = onehot @ X
        filled = sizes > 0
        centers = centers.copy()
        centers[filled] = sums[filled] / sizes[filled, None]
        empty = np.flatnonzero(~filled)
        if len(empty):
            # reseed from the points farthest from their current centroid
            far = np.argsort(-d2[np.arange(len(X)), labels], kind="stable")
            for j, i in zip(empty, far):
                centers[j] = X[i]
                labels[i] = j
    labels = _sq_dists(X, centers).argmin(axis=1)
    return centers, labels, _inertia(X, centers, labels), history


def kmeans(points, k: int, seed: int | None = 0, n_init: int = 10, max_iter: int = 300):
    """k-means++ seeding followed by Lloyd iterations; best of ``n_init`` restarts.

    Returns ``(model, labels)``; ``model.inertia`` is the within-cluster sum
    of squares W_k.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if k < 1:
        raise ValueError("k must be positive")
    if len(np.unique(X, axis=0)) < k:
        raise ValueError(f"fewer than k={k} distinct points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centers = _plusplus(X, k, rng)
        if len(centers) < k:
            continue
        run = _lloyd(X, centers, max_iter)
        if best is None or run[2] < best[2]:
            best = run
    centers, labels, w, _ = best
    return ClusterModel(k, centers, w), labels


@dataclass
class GapResult:
    k: int
    ks: np.ndarray
    gap: np.ndarray
    s: np.ndarray
    log_w: np.ndarray


def gap_statistic(points, k_max: int = 10, B: int = 10, seed: int | None = 0, n_init: int = 3) -> GapResult:
    """Tibshirani-Walther-Hastie gap statistic with uniform references over the bounding box.

    Chooses the smallest k with ``Gap(k) >= Gap(k+1) - s(k+1)``, or the argmax
    of the gap curve if no k qualifies.
    """
    if k_max < 1 or B < 1:
        raise ValueError("k_max and B must be positive")
    X = np.asarray(points, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    varying = hi > lo
    if not varying.any():
        one = np.array([1])
        return GapResult(1, one, np.zeros(1), np.zeros(1), np.zeros(1))
    # constant coordinates contribute nothing to any dispersion
    X, lo, hi = X[:, varying], lo[varying], hi[varying]
    k_max = min(k_max, len(np.unique(X, axis=0)))
    rng = np.random.default_rng(seed)
    refs = [lo + rng.random(X.shape) * (hi - lo) for _ in range(B)]
    ks = np.arange(1, k_max + 1)
    log_w = np.empty(k_max)
    ref_log_w = np.empty((k_max, B))
    for i, k in enumerate(ks):
        sub_seed = int(rng.integers(2**31))
        log_w[i] = _log(kmeans(X, k, seed=sub_seed, n_init=n_init)[0].inertia)
        for b, R in enumerate(refs):
            ref_log_w[i, b] = _log(kmeans(R, k, seed=sub_seed + b + 1, n_init=n_init)[0].inertia)
    gap = ref_log_w.mean(axis=1) - log_w
    s = ref_log_w.std(axis=1) * np.sqrt(1 + 1 / B)
    chosen = None
    for i in range(k_max - 1):
        if gap[i] >= gap[i + 1] - s[i + 1]:
            chosen = int(ks[i])
            break
    if chosen is None:
        chosen = int(ks[np.argmax(gap)])
    return GapResult(chosen, ks, gap, s, log_w)


def _log(w: float) -> float:
    return float(np.log(max(w, np.finfo(float).tiny)))


def sample_monitored_ips(windows: Sequence[WindowGraph], count: int = 40, seed: int | None = 0) -> list[str]:
    """Weighted sampling without replacement; an IP's weight is the number of windows it appears in."""
    occurrence: dict[str, int] = {}
    for g in windows:
        for ip in g.ips:
            occurrence[ip] = occurrence.get(ip, 0) + 1
    ips = sorted(occurrence)
    if count >= len(ips):
        if count > len(ips):
            log.warning("only %d distinct IPs, fewer than the %d requested; monitoring all", len(ips), count)
        return ips
    w = np.array([occurrence[ip] for ip in ips], dtype=float)
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ips), size=count, replace=False, p=w / w.sum())
    return [ips[i] for i in picked]


def node_detect(model: ClusterModel, orbit_vectors: Iterable[tuple[int, str, Sequence[float]]]) -> list[NodeScore]:
    """Nearest-centroid distance for each ``(window_index, ip, orbit_vector)``."""
    rows = list(orbit_vectors)
    if not rows:
        return []
    X = np.array([np.asarray(v, dtype=float) for _, _, v in rows])
    if X.shape[1] != model.centroids.shape[1]:
        raise ValueError(f"dimension mismatch: model has {model.centroids.shape[1]}, got {X.shape[1]}")
    _, dist = model.nearest(X)
    return [NodeScore(w, ip, float(s)) for (w, ip, _), s in zip(rows, dist)]
