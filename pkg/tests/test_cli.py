import json

import pytest

from graphprints.cli import main
from graphprints.flows import write_flow_csv
from graphprints.synth import write_labels

from conftest import SMALL_CONFIG, small_scenario

FLAGS = [f"--{k.replace('_', '-').replace('k-max', 'kmax')}={v}" for k, v in SMALL_CONFIG.items()] + ["--seed=3"]
REPORT_FILES = ["report.json", "graph_alerts.csv", "node_alerts.csv", "graph_scores.csv", "node_scores.csv"]


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    flows, labels = small_scenario()
    write_flow_csv(flows, d / "flows.csv")
    write_labels(labels, d / "labels.csv")
    return d


def test_stages_equal_single_run(inputs, tmp_path):
    d = inputs
    lab = f"--labels={d / 'labels.csv'}"
    assert main(["run", str(d / "flows.csv"), f"--out={tmp_path / 'run'}", lab, *FLAGS]) == 0
    st = tmp_path / "stages"
    assert main(["ingest", str(d / "flows.csv"), f"--out={st / 'flows.csv'}"]) == 0
    assert main(["graphs", str(st / "flows.csv"), f"--out={st / 'graphs.csv'}", *FLAGS]) == 0
    assert main(["count", str(st / "graphs.csv"), f"--out={st}", lab, *FLAGS]) == 0
    assert main(["detect", str(st), lab, *FLAGS]) == 0
    assert main(["report", str(st), lab, *FLAGS]) == 0
    for name in REPORT_FILES + ["graphs.csv", "graph_vectors.csv", "orbit_vectors.csv", "count.json", "detect.json"]:
        assert (st / name).read_bytes() == (tmp_path / "run" / name).read_bytes(), name
    summary = json.loads((st / "report.json").read_text())
    assert summary["catalog_hash"] == "0333857fe0eeade0" and summary["seed"] == 3
    assert summary["config"]["train_count"] == 140


def test_synth_command(tmp_path):
    (tmp_path / "amb.yaml").write_text("n_clients: 20\nn_servers: 30\nrate: 2.0\nduration: 300\n")
    (tmp_path / "an.yaml").write_text(
        "phases:\n  - {start_window: 2, end_window: 4, flow_fraction: 0.2, peer_count: 3, level: high}\n"
    )
    args = ["synth", f"--ambient={tmp_path / 'amb.yaml'}", f"--anomaly={tmp_path / 'an.yaml'}", "--seed=2"]
    assert main([*args, f"--out={tmp_path / 'a.csv'}", f"--labels={tmp_path / 'a_labels.csv'}"]) == 0
    assert main([*args, f"--out={tmp_path / 'b.csv'}"]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert "[nodes]" in (tmp_path / "a_labels.csv").read_text()


def test_errors_name_the_stage(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("nonsense\n")
    assert main(["run", str(tmp_path / "bad.csv"), f"--out={tmp_path / 'o'}"]) == 2
    assert "ingest stage failed" in capsys.readouterr().err
    assert main(["detect", str(tmp_path / "missing")]) == 2
    assert "count stage failed" in capsys.readouterr().err


def test_schema_flags(tmp_path):
    (tmp_path / "s.yaml").write_text(
        "has_header: false\ntime_format: clock\n"
        "columns: {timestamp: 0, protocol: 1, src_ip: 2, src_port: 3, dst_ip: 4, dst_port: 5, total_bytes: 6}\n"
    )
    (tmp_path / "f.csv").write_text("09:58:32.912,tcp,192.168.1.100,59860,173.16.100.10,80,1695088\n")
    out = tmp_path / "c.csv"
    args = ["ingest", str(tmp_path / "f.csv"), f"--out={out}", f"--schema={tmp_path / 's.yaml'}"]
    assert main([*args, "--base-date=2013-06-13", "--tz=UTC"]) == 0
    assert "1371117512912000,tcp" in out.read_text()
