"""``graphprints`` command line: one subcommand per pipeline stage, plus ``run`` and ``synth``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from graphprints import artifacts, pipeline
from graphprints.flows import FlowParseError, FlowSchema, write_flow_csv
from graphprints.graphs import read_graphs, write_graphs
from graphprints.synth import AmbientModel, AnomalyProfile, generate_ambient, inject_anomaly, read_labels, write_labels

log = logging.getLogger("graphprints")

# flag name -> PipelineConfig field
_CONFIG_FLAGS = {
    "window_width": "window_width",
    "window_overlap": "window_overlap",
    "seed": "seed",
    "train_count": "train_count",
    "h_frac": "h_frac",
    "mcd_subsets": "mcd_subsets",
    "monitored_count": "monitored_count",
    "k": "k",
    "kmax": "k_max",
    "gap_reps": "gap_reps",
    "node_metric": "node_metric",
    "graph_threshold": "graph_threshold",
    "node_threshold": "node_threshold",
    "threshold_quantile": "threshold_quantile",
    "watch_ip": "watch_ips",
}


def _schema_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("flow input")
    g.add_argument("--schema", type=Path, help="YAML column mapping for non-canonical flow files")
    g.add_argument("--tz", help="time zone for time-only or naive timestamps")
    g.add_argument("--base-date", help="date (YYYY-MM-DD) for time-only timestamps")


def _config_args(p: argparse.ArgumentParser) -> None:
    # every stage takes the full set so one flag line can drive all of them
    g = p.add_argument_group("detector config (overrides --config)")
    g.add_argument("--config", type=Path, help="YAML pipeline config")
    g.add_argument("--seed", type=int)
    g.add_argument("--window-width", type=float, help="window width in seconds (default 31)")
    g.add_argument("--window-overlap", type=float, help="overlap of consecutive windows in seconds (default 1)")
    g.add_argument("--monitored-count", type=int, help="IPs sampled for node-level scoring (default 40)")
    g.add_argument("--watch-ip", action="append", help="extra IP to score at node level (repeatable)")
    g.add_argument("--train-count", type=int, help="graph vectors before the first score (default 150)")
    g.add_argument("--h-frac", type=float, help="MCD support fraction (default 0.85)")
    g.add_argument("--mcd-subsets", type=int, help="FAST-MCD elemental starts (default 500)")
    g.add_argument("--k", type=int, help="fix the number of clusters instead of using the gap statistic")
    g.add_argument("--kmax", type=int, help="largest k tried by the gap statistic (default 10)")
    g.add_argument("--gap-reps", type=int, help="reference datasets per k (default 10)")
    g.add_argument("--node-metric", choices=["euclidean"])
    g.add_argument("--graph-threshold", type=float)
    g.add_argument("--node-threshold", type=float)
    g.add_argument("--threshold-quantile", type=float, help="training-score quantile used without labels")


def _schema(args) -> FlowSchema:
    schema = FlowSchema.from_file(args.schema) if args.schema else FlowSchema()
    if args.tz:
        schema.tz = args.tz
    if args.base_date:
        schema = dataclasses.replace(schema, base_date=args.base_date)
    return schema


def _config(args, labels=None) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig.from_file(args.config) if getattr(args, "config", None) else pipeline.PipelineConfig()
    overrides = {f: getattr(args, a) for a, f in _CONFIG_FLAGS.items() if getattr(args, a, None) is not None}
    return pipeline.with_label_watch(cfg.replace(**overrides), labels)


def _labels(args):
    return read_labels(args.labels) if getattr(args, "labels", None) else None


def _outdir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_ingest(args) -> int:
    table = pipeline.stage_ingest(args.flows, _schema(args))
    write_flow_csv(table, _parent(args.out))
    artifacts.write_json(
        {"flows": len(table), "rejected": len(table.errors), "rejects": [dataclasses.asdict(e) for e in table.errors[:100]]},
        Path(args.out).with_suffix(".json"),
    )
    log.info("%d flows kept, %d lines rejected", len(table), len(table.errors))
    return 0


def cmd_graphs(args) -> int:
    cfg = _config(args)
    table = pipeline.stage_ingest(args.flows, _schema(args))
    graphs = pipeline.stage_graphs(table, cfg)
    write_graphs(graphs, _parent(args.out))
    artifacts.write_json(
        {"windows": len(graphs), "config": dataclasses.asdict(cfg), "seed": cfg.seed}, Path(args.out).with_suffix(".json")
    )
    log.info("%d windows", len(graphs))
    return 0


def cmd_count(args) -> int:
    cfg = _config(args, _labels(args))
    with pipeline.stage("graphs"):
        graphs = read_graphs(args.graphs)
    result = pipeline.stage_count(graphs, cfg)
    pipeline.write_count(result, _outdir(args.out), cfg)
    return 0


def cmd_detect(args) -> int:
    cfg = _config(args, _labels(args))
    with pipeline.stage("count"):
        counted = pipeline.read_count(args.workdir)
    result = pipeline.stage_detect(counted.window_indices, counted.graph_vectors, counted.orbit_rows, counted.monitored, cfg)
    pipeline.write_detect(result, _outdir(args.out or args.workdir), cfg, counted.catalog.hash)
    return 0


def cmd_report(args) -> int:
    labels = _labels(args)
    cfg = _config(args, labels)
    with pipeline.stage("detect"):
        counted = pipeline.read_count(args.workdir)
        detected = pipeline.read_detect(args.workdir)
    report = pipeline.stage_report(detected, cfg, labels, len(counted.window_indices), pipeline.catalog_summary(counted))
    report.write(_outdir(args.out or args.workdir))
    _print_summary(report)
    return 0


def cmd_run(args) -> int:
    labels = _labels(args)
    cfg = _config(args, labels)
    out = _outdir(args.out)
    table = pipeline.stage_ingest(args.flows, _schema(args))
    artifacts.write_json({"flows": len(table), "rejected": len(table.errors)}, out / "ingest.json")
    report = pipeline.run_pipeline(table, cfg, labels, out)
    _print_summary(report)
    return 0


def cmd_synth(args) -> int:
    model = AmbientModel.from_file(args.ambient) if args.ambient else AmbientModel()
    profile = AnomalyProfile.from_file(args.anomaly) if args.anomaly else AnomalyProfile()
    ambient = generate_ambient(model, args.seed)
    flows, labels = inject_anomaly(ambient, profile, args.seed, model)
    write_flow_csv(flows, _parent(args.out))
    if args.labels:
        write_labels(labels, _parent(args.labels))
    log.info("%d flows, %d labeled windows", len(flows), len(labels.windows))
    return 0


def _print_summary(report: pipeline.DetectionReport) -> None:
    s = report.summary
    print(f"status: {s['status']}")
    print(f"graph alerts: {len(report.graph_alerts)} of {len(report.graph_scores)} scored windows")
    print(f"node alerts: {len(report.node_alerts)} of {len(report.node_scores)} scored (window, ip) pairs")
    for level, m in s.get("metrics", {}).items():
        print(f"{level}: TPR {m['tpr']:.3f}  FPR {m['fpr']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphprints", description="Graphlet-based anomaly detection on network flows.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and validate a flow file into canonical CSV")
    p.add_argument("flows", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _schema_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("graphs", help="build one colored graph per time window")
    p.add_argument("flows", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _schema_args(p)
    _config_args(p)
    p.set_defaults(func=cmd_graphs)

    p = sub.add_parser("count", help="graphlet vectors per window and orbit vectors per monitored IP")
    p.add_argument("graphs", type=Path)
    p.add_argument("--out", type=Path, required=True, help="work directory")
    p.add_argument("--labels", type=Path, help="label file; its IPs are added to the watched set")
    _config_args(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("detect", help="score windows (MCD) and IPs (k-means)")
    p.add_argument("workdir", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--labels", type=Path)
    _config_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="thresholds, alerts and the JSON summary")
    p.add_argument("workdir", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--labels", type=Path, help="ground truth used to pick thresholds and report TPR/FPR")
    _config_args(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="all stages in one go")
    p.add_argument("flows", type=Path)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--labels", type=Path)
    _schema_args(p)
    _config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate ambient traffic with an injected anomaly")
    p.add_argument("--ambient", type=Path, help="YAML ambient model")
    p.add_argument("--anomaly", type=Path, help="YAML anomaly profile")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--labels", type=Path)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (pipeline.PipelineError, FlowParseError, ValueError, OSError) as exc:
        print(f"graphprints {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
