"""Synthetic ambient flow traffic with an implanted peer-to-peer style anomaly.

Ambient traffic is client -> server flows (a few reversed) whose server choice
follows a Zipf popularity law.  The anomaly is one ambient client talking to
many transient peers on high ports at both ends, so every injected flow is red
and the host becomes the center of a red star in the window graphs.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from graphprints.flows import FlowTable
from graphprints.graphs import US, WindowSpec, assign_windows, window_range

WELL_KNOWN_PORTS = np.array([80, 443, 53, 22, 25, 123, 389, 445, 993, 143])


@dataclass
class AmbientModel:
    n_clients: int = 400
    n_servers: int = 900
    rate: float = 170.0  # flows per second
    duration: float = 10500.0  # seconds
    p_well_known: float = 0.55
    reverse_fraction: float = 0.05
    server_zipf: float = 0.5
    client_zipf: float = 0.3
    bytes_log_mean: float = 8.0
    bytes_log_sigma: float = 2.0
    start: int = 1_600_000_000  # epoch seconds
    client_net: str = "10.20.0.0"
    server_net: str = "44.0.0.0"

    def __post_init__(self):
        if self.rate < 0 or self.duration < 0:
            raise ValueError("rate and duration must be non-negative")
        for name in ("p_well_known", "reverse_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if self.n_clients < 1 or self.n_servers < 1:
            raise ValueError("need at least one client and one server")

    @classmethod
    def from_file(cls, path) -> "AmbientModel":
        with open(path) as fh:
            return cls(**(yaml.safe_load(fh) or {}))

    def client_ips(self) -> np.ndarray:
        return _ip_block(self.client_net, self.n_clients)

    def server_ips(self) -> np.ndarray:
        return _ip_block(self.server_net, self.n_servers)


@dataclass
class AnomalyPhase:
    start_window: int
    end_window: int  # exclusive
    flow_fraction: float
    peer_count: int
    level: str = "high"


def _default_phases() -> list[AnomalyPhase]:
    return [AnomalyPhase(278, 302, 0.15, 300, "high"), AnomalyPhase(302, 318, 0.02, 40, "low")]


@dataclass
class AnomalyProfile:
    """Which host misbehaves, when, and how hard.

    ``anomaly_ip`` defaults to an ambient client picked by the seed.  Each
    phase targets ``flow_fraction`` of the flows of every window in
    ``[start_window, end_window)`` and spreads them over ``peer_count``
    distinct fresh peers per window.
    """

    anomaly_ip: str | None = None
    phases: list[AnomalyPhase] = field(default_factory=_default_phases)
    reverse_fraction: float = 0.3
    width: float = 31.0
    overlap: float = 1.0
    peer_net: str = "100.64.0.0"

    def __post_init__(self):
        self.phases = [p if isinstance(p, AnomalyPhase) else AnomalyPhase(**p) for p in self.phases]
        for p in self.phases:
            if not 0 <= p.flow_fraction < 1 or p.peer_count < 0 or p.end_window < p.start_window:
                raise ValueError(f"invalid anomaly phase {p}")

    @classmethod
    def from_file(cls, path) -> "AnomalyProfile":
        with open(path) as fh:
            return cls(**(yaml.safe_load(fh) or {}))


def _ip_block(base: str, n: int) -> np.ndarray:
    # skip .0 host addresses so every IP looks like a host
    start = int(ipaddress.ip_address(base)) + 1
    return np.array([str(ipaddress.ip_address(start + i + i // 255)) for i in range(n)], dtype=object)


def _zipf_weights(n: int, s: float, rng: np.random.Generator) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return rng.permutation(w / w.sum())


def generate_ambient(model: AmbientModel, seed: int = 0) -> FlowTable:
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(model.rate * model.duration)) if model.duration > 0 else 0
    if n == 0:
        return FlowTable.empty()
    clients, servers = model.client_ips(), model.server_ips()
    c = rng.choice(len(clients), size=n, p=_zipf_weights(len(clients), model.client_zipf, rng))
    s = rng.choice(len(servers), size=n, p=_zipf_weights(len(servers), model.server_zipf, rng))
    t = np.sort(rng.integers(0, round(model.duration * US), size=n)) + model.start * US
    high = rng.integers(1024, 65536, size=n)
    server_port = np.where(
        rng.random(n) < model.p_well_known,
        rng.choice(WELL_KNOWN_PORTS, size=n),
        rng.integers(1024, 65536, size=n),
    )
    rev = rng.random(n) < model.reverse_fraction
    src_ip = np.where(rev, servers[s], clients[c])
    dst_ip = np.where(rev, clients[c], servers[s])
    src_port = np.where(rev, server_port, high)
    dst_port = np.where(rev, high, server_port)
    proto = (rng.random(n) < 0.2).astype(np.int8)  # mostly tcp, some udp
    total_bytes = np.round(rng.lognormal(model.bytes_log_mean, model.bytes_log_sigma, size=n)).astype(np.int64)
    return FlowTable(t.astype(np.int64), proto, src_ip, src_port.astype(np.int64), dst_ip, dst_port.astype(np.int64), total_bytes)


@dataclass
class Labels:
    """Ground truth: anomalous windows and (window, ip) pairs, each with a level tag."""

    windows: dict[int, str] = field(default_factory=dict)
    nodes: dict[tuple[int, str], str] = field(default_factory=dict)

    def positive_windows(self, level: str | None = "high") -> set[int]:
        return {w for w, lv in self.windows.items() if level is None or lv == level}

    def positive_nodes(self, level: str | None = "high") -> set[tuple[int, str]]:
        return {k for k, lv in self.nodes.items() if level is None or lv == level}

    def ips(self) -> list[str]:
        return sorted({ip for _, ip in self.nodes})


def inject_anomaly(
    ambient: FlowTable, profile: AnomalyProfile, seed: int = 0, ambient_model: AmbientModel | None = None
) -> tuple[FlowTable, Labels]:
    """Merge anomaly flows into ``ambient`` and label the windows that received them."""
    rng = np.random.default_rng(seed)
    if len(ambient) == 0:
        if any(p.peer_count and p.end_window > p.start_window for p in profile.phases):
            raise ValueError("anomaly profile lies outside the (empty) ambient time range")
        return ambient, Labels()
    spec = WindowSpec(profile.width, profile.overlap).anchored(int(ambient.timestamp[0]))
    _, last = window_range(ambient.timestamp[-1:], spec)
    n_windows = int(last[0]) + 1
    for p in profile.phases:
        if p.start_window < 0 or p.end_window > n_windows:
            raise ValueError(f"phase windows [{p.start_window}, {p.end_window}) outside ambient range [0, {n_windows})")

    anomaly_ip = profile.anomaly_ip
    if anomaly_ip is None:
        pool = ambient_model.client_ips() if ambient_model else np.unique(ambient.src_ip)
        anomaly_ip = str(pool[rng.integers(len(pool))])
    per_window = [len(b) for b in assign_windows(ambient, spec)]

    peer_base = int(ipaddress.ip_address(profile.peer_net)) + 1
    next_peer = 0
    parts = []
    for phase in profile.phases:
        if phase.peer_count == 0 or phase.flow_fraction == 0:
            continue
        for w in range(phase.start_window, phase.end_window):
            k = round(phase.flow_fraction / (1 - phase.flow_fraction) * per_window[w])
            if k == 0:
                continue
            peers_here = min(phase.peer_count, k)
            peers = np.array(
                [str(ipaddress.ip_address(peer_base + next_peer + i)) for i in range(peers_here)], dtype=object
            )
            next_peer += peers_here
            pick = np.concatenate([np.arange(peers_here), rng.integers(0, peers_here, size=k - peers_here)])
            # the part of window w shared with no neighbouring window
            lo, hi = spec.bounds(w)
            lo += spec.width_us - spec.step_us
            hi -= spec.width_us - spec.step_us
            t = rng.integers(lo, hi, size=k)
            rev = rng.random(k) < profile.reverse_fraction
            src = np.where(rev, peers[pick], anomaly_ip)
            dst = np.where(rev, anomaly_ip, peers[pick])
            parts.append(
                FlowTable(
                    t.astype(np.int64),
                    np.ones(k, dtype=np.int8),
                    src.astype(object),
                    rng.integers(1024, 65536, size=k),
                    dst.astype(object),
                    rng.integers(1024, 65536, size=k),
                    np.round(rng.lognormal(9.0, 1.5, size=k)).astype(np.int64),
                )
            )
    if not parts:
        return ambient, Labels()
    injected = FlowTable.concat(parts)
    merged = FlowTable.concat([ambient, injected])

    labels = Labels()
    level_of = {w: p.level for p in profile.phases for w in range(p.start_window, p.end_window)}
    for w, batch in enumerate(assign_windows(injected, spec)):
        if len(batch):
            labels.windows[w] = level_of.get(w, "low")
            labels.nodes[(w, anomaly_ip)] = labels.windows[w]
    return merged, labels


def write_labels(labels: Labels, path: str | Path) -> None:
    lines = ["[windows]", "window_index,level"]
    lines += [f"{w},{lv}" for w, lv in sorted(labels.windows.items())]
    lines += ["[nodes]", "window_index,ip,level"]
    lines += [f"{w},{ip},{lv}" for (w, ip), lv in sorted(labels.nodes.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels(path: str | Path) -> Labels:
    labels = Labels()
    section = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line in ("[windows]", "[nodes]"):
            section = line
            continue
        if line.startswith("window_index"):
            continue
        fields = line.split(",")
        if section == "[windows]":
            labels.windows[int(fields[0])] = fields[1] if len(fields) > 1 else "high"
        elif section == "[nodes]":
            labels.nodes[(int(fields[0]), fields[1])] = fields[2] if len(fields) > 2 else "high"
        else:
            raise ValueError(f"{path}: data line outside a section: {raw!r}")
    return labels

