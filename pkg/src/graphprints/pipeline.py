"""End-to-end detector: flows -> window graphs -> graphlet/orbit vectors -> scores -> report.

Each stage is a plain function so the CLI can run them one at a time through
files; :func:`run_pipeline` chains the same functions and writes the same
artifacts, which keeps the two routes byte-identical.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from graphprints import artifacts
from graphprints.clustering import ClusterModel, GapResult, NodeScore, gap_statistic, kmeans, node_detect, sample_monitored_ips
from graphprints.flows import FlowSchema, FlowTable, parse_flow_file
from graphprints.graphlets import GraphletCatalog, build_catalog, count_graphlets
from graphprints.graphs import WindowGraph, WindowSpec, build_graphs, write_graphs
from graphprints.robust import AnomalyScore, StreamingDetector, mahalanobis
from graphprints.synth import Labels

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


@dataclass
class PipelineConfig:
    """Detector settings.  Defaults: 31 s windows with 1 s overlap, 150 training vectors, h = 0.85 n, 40 monitored IPs."""

    window_width: float = 31.0
    window_overlap: float = 1.0
    window_start: int | None = None
    train_count: int = 150
    h_frac: float = 0.85
    mcd_subsets: int = 500
    monitored_count: int = 40
    k: int | None = None
    k_max: int = 10
    gap_reps: int = 10
    node_metric: str = "euclidean"
    graph_threshold: float | None = None
    node_threshold: float | None = None
    threshold_quantile: float = 0.999
    positive_level: str = "high"
    watch_ips: list[str] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.node_metric != "euclidean":
            raise ValueError(f"unsupported node metric {self.node_metric!r}; only 'euclidean' is implemented")
        if not 0.5 < self.h_frac <= 1:
            raise ValueError("h_frac must be in (0.5, 1]")
        WindowSpec(self.window_width, self.window_overlap)

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window_width, self.window_overlap, self.window_start)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls(**(yaml.safe_load(fh) or {}))

    def replace(self, **overrides) -> "PipelineConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig(**data)


# ---------------------------------------------------------------- thresholds


@dataclass(frozen=True)
class Threshold:
    value: float
    mode: str
    tpr: float | None = None
    fpr: float | None = None


def select_threshold(scores: Sequence[float], known_positive_indices) -> Threshold:
    """Highest threshold that still alerts on every known positive, i.e. the smallest positive score.

    Alerts are ``score >= threshold``.  TPR and FPR are over ``scores``;
    every index not in ``known_positive_indices`` counts as a negative.
    """
    scores = np.asarray(scores, dtype=float)
    pos = np.zeros(len(scores), dtype=bool)
    idx = sorted(known_positive_indices)
    if not idx:
        raise ValueError("labeled threshold selection needs at least one known positive")
    pos[idx] = True
    value = float(scores[pos].min())
    alerts = scores >= value
    n_neg = int((~pos).sum())
    fpr = float((alerts & ~pos).sum() / n_neg) if n_neg else 0.0
    return Threshold(value, "labeled", 1.0, fpr)


def quantile_threshold(training_scores: Sequence[float], q: float = 0.999) -> Threshold:
    s = np.asarray(training_scores, dtype=float)
    if len(s) == 0:
        return Threshold(float("inf"), "quantile")
    return Threshold(float(np.quantile(s, q)), "quantile")


# ---------------------------------------------------------------- stages


def stage_ingest(path, schema: FlowSchema | None = None) -> FlowTable:
    with stage("ingest"):
        return parse_flow_file(path, schema)


def stage_graphs(flows: FlowTable, config: PipelineConfig) -> list[WindowGraph]:
    with stage("graphs"):
        return list(build_graphs(flows, config.window_spec))


def orbit_ips(graphs: Sequence[WindowGraph], config: PipelineConfig) -> tuple[list[str], list[str]]:
    """Monitored IPs (sampled over the training windows) and extra watched IPs."""
    train = graphs[: config.train_count]
    monitored = sample_monitored_ips(train, config.monitored_count, config.seed) if train else []
    watched = [ip for ip in sorted(set(config.watch_ips)) if ip not in monitored]
    return monitored, watched


@dataclass
class CountResult:
    window_indices: list[int]
    graph_vectors: np.ndarray
    orbit_rows: list[tuple[int, str, np.ndarray]]
    monitored: list[str]
    watched: list[str]
    catalog: GraphletCatalog


def stage_count(graphs: Sequence[WindowGraph], config: PipelineConfig, catalog: GraphletCatalog | None = None) -> CountResult:
    with stage("count"):
        catalog = catalog or build_catalog()
        monitored, watched = orbit_ips(graphs, config)
        keep = set(monitored) | set(watched)
        vectors, rows = [], []
        for g in graphs:
            res = count_graphlets(g, catalog)
            vectors.append(res.counts)
            for v, ip in enumerate(res.ips):
                if ip in keep:
                    rows.append((g.window_index, ip, res.orbit_counts[v]))
        G = np.array(vectors, dtype=np.int64).reshape(len(graphs), catalog.n_types)
        return CountResult([g.window_index for g in graphs], G, rows, monitored, watched, catalog)


@dataclass
class DetectResult:
    graph_scores: list[AnomalyScore]
    graph_train_scores: list[AnomalyScore]
    node_scores: list[NodeScore]
    node_train_scores: list[NodeScore]
    cluster: ClusterModel | None
    gap: GapResult | None
    status: str


def stage_detect(
    window_indices: Sequence[int],
    graph_vectors: np.ndarray,
    orbit_rows: Sequence[tuple[int, str, np.ndarray]],
    monitored: Sequence[str],
    config: PipelineConfig,
) -> DetectResult:
    with stage("detect"):
        n = len(window_indices)
        if n < config.train_count:
            log.warning("%d windows but %d needed for training; nothing scored", n, config.train_count)
            return DetectResult([], [], [], [], None, None, "no training possible")

        detector = StreamingDetector(config.train_count, config.h_frac, config.seed, n_subsets=config.mcd_subsets)
        graph_scores = []
        X = np.asarray(graph_vectors, dtype=float)
        for w, x in zip(window_indices, X):
            s = detector.update(x)
            if s is not None:
                graph_scores.append(AnomalyScore(w, s))
        train_windows = list(window_indices[: config.train_count])
        init = mahalanobis(detector.initial_model, X[: config.train_count])
        graph_train = [AnomalyScore(w, float(s)) for w, s in zip(train_windows, init)]

        first_test = window_indices[config.train_count] if n > config.train_count else None
        in_train = set(train_windows)
        mon = set(monitored)
        train_rows = [r for r in orbit_rows if r[0] in in_train and r[1] in mon]
        test_rows = [r for r in orbit_rows if r[0] not in in_train]
        cluster, gap = None, None
        node_scores: list[NodeScore] = []
        node_train: list[NodeScore] = []
        status = "ok"
        if train_rows:
            T = np.array([r[2] for r in train_rows], dtype=float)
            n_distinct = len(np.unique(T, axis=0))
            if config.k is not None:
                k = min(config.k, n_distinct)
            else:
                gap = gap_statistic(T, min(config.k_max, n_distinct), config.gap_reps, seed=config.seed)
                k = gap.k
            cluster, _ = kmeans(T, k, seed=config.seed)
            cluster.training_meta = {"ips": list(monitored), "windows": [train_windows[0], train_windows[-1]], "vectors": len(T)}
            node_train = node_detect(cluster, train_rows)
            node_scores = node_detect(cluster, test_rows)
        else:
            status = "no node training vectors"
        log.info("scored %d windows (first test window %s) and %d node vectors", len(graph_scores), first_test, len(node_scores))
        return DetectResult(graph_scores, graph_train, node_scores, node_train, cluster, gap, status)


@dataclass
class DetectionReport:
    graph_scores: list[AnomalyScore]
    node_scores: list[NodeScore]
    graph_threshold: Threshold
    node_threshold: Threshold
    graph_alerts: list[AnomalyScore]
    node_alerts: list[NodeScore]
    summary: dict

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        artifacts.write_graph_scores(self.graph_alerts, outdir / "graph_alerts.csv")
        artifacts.write_node_scores(self.node_alerts, outdir / "node_alerts.csv")
        artifacts.write_json(self.summary, outdir / "report.json")


def _threshold(scores, positives, fixed, training, q) -> Threshold:
    if fixed is not None:
        return Threshold(float(fixed), "fixed")
    if positives:
        return select_threshold(scores, positives)
    return quantile_threshold(training, q)


def stage_report(
    detect: DetectResult,
    config: PipelineConfig,
    labels: Labels | None = None,
    n_windows: int | None = None,
    extra_summary: dict | None = None,
) -> DetectionReport:
    with stage("report"):
        g_scores = [a.score for a in detect.graph_scores]
        g_pos = set()
        n_scores = [a.score for a in detect.node_scores]
        n_pos = set()
        if labels is not None:
            pw = labels.positive_windows(config.positive_level)
            g_pos = {i for i, a in enumerate(detect.graph_scores) if a.window_index in pw}
            pn = labels.positive_nodes(config.positive_level)
            n_pos = {i for i, a in enumerate(detect.node_scores) if (a.window_index, a.ip) in pn}
        g_thr = _threshold(
            g_scores, g_pos, config.graph_threshold, [a.score for a in detect.graph_train_scores], config.threshold_quantile
        )
        n_thr = _threshold(
            n_scores, n_pos, config.node_threshold, [a.score for a in detect.node_train_scores], config.threshold_quantile
        )
        graph_alerts = [a for a in detect.graph_scores if a.score >= g_thr.value]
        node_alerts = [a for a in detect.node_scores if a.score >= n_thr.value]
        summary = {
            "status": detect.status,
            "counts": {
                "windows": n_windows,
                "graph_scores": len(detect.graph_scores),
                "node_scores": len(detect.node_scores),
                "graph_alerts": len(graph_alerts),
                "node_alerts": len(node_alerts),
            },
            "thresholds": {"graph": asdict(g_thr), "node": asdict(n_thr)},
            "config": asdict(config),
            "seed": config.seed,
            "node_model": None
            if detect.cluster is None
            else {
                "k": detect.cluster.k,
                "inertia": detect.cluster.inertia,
                "training": detect.cluster.training_meta,
                "gap": None
                if detect.gap is None
                else {"ks": detect.gap.ks, "gap": detect.gap.gap, "s": detect.gap.s},
            },
        }
        summary.update(extra_summary or {})
        report = DetectionReport(detect.graph_scores, detect.node_scores, g_thr, n_thr, graph_alerts, node_alerts, summary)
        if labels is not None:
            report.summary["metrics"] = evaluate(report, labels, n_windows, config.positive_level)
        return report


def evaluate(report: DetectionReport, labels: Labels, n_windows: int | None = None, level: str | None = "high") -> dict:
    """TPR and FPR at the graph and node levels; unlabeled (or other-level) rows count as negatives."""
    if n_windows is not None:
        bad = [w for w in labels.windows if not 0 <= w < n_windows] + [w for w, _ in labels.nodes if not 0 <= w < n_windows]
        if bad:
            raise ValueError(f"labels reference windows outside [0, {n_windows}): {sorted(set(bad))[:5]}")

    def rates(keys, alerted, positives):
        pos = [k in positives for k in keys]
        tp = sum(1 for k, p in zip(keys, pos) if p and k in alerted)
        fp = sum(1 for k, p in zip(keys, pos) if not p and k in alerted)
        n_pos = sum(pos)
        n_neg = len(keys) - n_pos
        return {
            "tpr": tp / n_pos if n_pos else 0.0,
            "fpr": fp / n_neg if n_neg else 0.0,
            "true_positives": tp,
            "false_positives": fp,
            "positives": n_pos,
            "negatives": n_neg,
        }

    g_keys = [a.window_index for a in report.graph_scores]
    n_keys = [(a.window_index, a.ip) for a in report.node_scores]
    return {
        "graph": rates(g_keys, {a.window_index for a in report.graph_alerts}, labels.positive_windows(level)),
        "node": rates(n_keys, {(a.window_index, a.ip) for a in report.node_alerts}, labels.positive_nodes(level)),
    }


# ---------------------------------------------------------------- artifacts per stage


def write_count(result: CountResult, outdir, config: PipelineConfig) -> None:
    outdir = Path(outdir)
    artifacts.write_graph_vectors(result.window_indices, result.graph_vectors, result.catalog.hash, outdir / "graph_vectors.csv")
    artifacts.write_orbit_vectors(result.orbit_rows, result.catalog.n_orbits, outdir / "orbit_vectors.csv")
    artifacts.write_json(
        {
            "catalog_hash": result.catalog.hash,
            "graphlet_types": result.catalog.type_labels(),
            "orbits": result.catalog.orbit_labels(),
            "monitored_ips": result.monitored,
            "watched_ips": result.watched,
            "config": asdict(config),
            "seed": config.seed,
        },
        outdir / "count.json",
    )


def read_count(outdir) -> CountResult:
    outdir = Path(outdir)
    catalog = build_catalog()
    meta = artifacts.read_json(outdir / "count.json")
    if meta["catalog_hash"] != catalog.hash:
        raise ValueError("orbit/graph vectors were produced with a different graphlet catalog")
    windows, G = artifacts.read_graph_vectors(outdir / "graph_vectors.csv", catalog.hash)
    rows = artifacts.read_orbit_vectors(outdir / "orbit_vectors.csv")
    return CountResult(windows, G.reshape(len(windows), catalog.n_types), rows, meta["monitored_ips"], meta["watched_ips"], catalog)


def write_detect(result: DetectResult, outdir, config: PipelineConfig, catalog_hash: str) -> None:
    outdir = Path(outdir)
    artifacts.write_graph_scores(result.graph_scores, outdir / "graph_scores.csv")
    artifacts.write_graph_scores(result.graph_train_scores, outdir / "graph_train_scores.csv")
    artifacts.write_node_scores(result.node_scores, outdir / "node_scores.csv")
    artifacts.write_node_scores(result.node_train_scores, outdir / "node_train_scores.csv")
    model = None
    if result.cluster is not None:
        model = {
            "k": result.cluster.k,
            "centroids": result.cluster.centroids,
            "inertia": result.cluster.inertia,
            "training": result.cluster.training_meta,
        }
    gap = None if result.gap is None else {"k": result.gap.k, "ks": result.gap.ks, "gap": result.gap.gap, "s": result.gap.s}
    artifacts.write_json(
        {
            "status": result.status,
            "node_model": model,
            "gap": gap,
            "config": asdict(config),
            "seed": config.seed,
            "catalog_hash": catalog_hash,
        },
        outdir / "detect.json",
    )


def read_detect(outdir) -> DetectResult:
    outdir = Path(outdir)
    meta = artifacts.read_json(outdir / "detect.json")
    cluster = gap = None
    if meta["node_model"] is not None:
        m = meta["node_model"]
        cluster = ClusterModel(m["k"], np.array(m["centroids"], dtype=float), m["inertia"], m["training"])
    if meta["gap"] is not None:
        g = meta["gap"]
        gap = GapResult(g["k"], np.array(g["ks"]), np.array(g["gap"]), np.array(g["s"]), np.array([]))
    return DetectResult(
        artifacts.read_graph_scores(outdir / "graph_scores.csv"),
        artifacts.read_graph_scores(outdir / "graph_train_scores.csv"),
        artifacts.read_node_scores(outdir / "node_scores.csv"),
        artifacts.read_node_scores(outdir / "node_train_scores.csv"),
        cluster,
        gap,
        meta["status"],
    )


def run_pipeline(
    flows,
    config: PipelineConfig | None = None,
    labels: Labels | None = None,
    outdir=None,
    schema: FlowSchema | None = None,
) -> DetectionReport:
    """Run every stage on a flow file (or an already parsed :class:`FlowTable`).

    With ``outdir`` set, each stage's artifacts are written there exactly as
    the individual CLI stages would write them.
    """
    config = with_label_watch(config or PipelineConfig(), labels)
    table = flows if isinstance(flows, FlowTable) else stage_ingest(flows, schema)
    graphs = stage_graphs(table, config)
    counted = stage_count(graphs, config)
    detected = stage_detect(counted.window_indices, counted.graph_vectors, counted.orbit_rows, counted.monitored, config)
    report = stage_report(detected, config, labels, len(graphs), catalog_summary(counted))
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_graphs(graphs, outdir / "graphs.csv")
        write_count(counted, outdir, config)
        write_detect(detected, outdir, config, counted.catalog.hash)
        report.write(outdir)
    return report


def with_label_watch(config: PipelineConfig, labels: Labels | None) -> PipelineConfig:
    """Score the labeled IPs as well, unless an explicit watch list is configured."""
    if labels is not None and not config.watch_ips:
        return config.replace(watch_ips=labels.ips())
    return config


def catalog_summary(counted: CountResult) -> dict:
    return {"catalog_hash": counted.catalog.hash, "monitored_ips": counted.monitored, "watched_ips": counted.watched}
