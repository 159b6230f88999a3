"""Flow-record ingestion.

The canonical on-disk layout is a header-bearing CSV with columns
``ts_us, proto, src_ip, src_port, dst_ip, dst_port, total_bytes``.  Other
layouts are read through a :class:`FlowSchema` that maps each required field
to a column (by header name, or by position for header-less files) and says
how the timestamp column is written.
"""

from __future__ import annotations

import csv
import ipaddress
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Iterator
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd
import yaml

log = logging.getLogger(__name__)

CANONICAL_COLUMNS = ("ts_us", "proto", "src_ip", "src_port", "dst_ip", "dst_port", "total_bytes")
FIELDS = ("timestamp", "protocol", "src_ip", "src_port", "dst_ip", "dst_port", "total_bytes")
PROTOCOLS = ("tcp", "udp", "other")
_PROTO_ALIASES = {"tcp": 0, "6": 0, "udp": 1, "17": 1}
MAX_PORT = 65535


class FlowParseError(ValueError):
    pass


@dataclass(frozen=True)
class FlowRecord:
    timestamp: int  # microseconds since epoch
    protocol: str
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    total_bytes: int


@dataclass(frozen=True)
class RejectedLine:
    line: int
    reason: str


@dataclass
class FlowSchema:
    """Column mapping for a flow file.

    ``columns`` maps each of :data:`FIELDS` to a header name, or to a 0-based
    column index when ``has_header`` is false.  ``time_format`` is one of
    ``us`` (integer microseconds), ``s`` (decimal seconds), ``iso`` (ISO-8601
    datetime) or ``clock`` (``HH:MM:SS[.fff]`` on ``base_date``).
    """

    columns: dict[str, str | int] = field(default_factory=lambda: dict(zip(FIELDS, CANONICAL_COLUMNS)))
    has_header: bool = True
    delimiter: str = ","
    time_format: str = "us"
    base_date: date | None = None
    tz: str = "UTC"
    max_reject_fraction: float = 0.10

    def __post_init__(self):
        missing = [f for f in FIELDS if f not in self.columns]
        if missing:
            raise FlowParseError(f"schema is missing required fields: {missing}")
        if self.time_format not in ("us", "s", "iso", "clock"):
            raise FlowParseError(f"unknown time_format {self.time_format!r}")
        if isinstance(self.base_date, str):
            self.base_date = date.fromisoformat(self.base_date)

    @classmethod
    def from_file(cls, path: str | Path) -> "FlowSchema":
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
        return cls(**cfg)


@dataclass
class FlowTable:
    """Columnar, timestamp-ordered flow records."""

    timestamp: np.ndarray
    protocol: np.ndarray  # index into PROTOCOLS
    src_ip: np.ndarray
    src_port: np.ndarray
    dst_ip: np.ndarray
    dst_port: np.ndarray
    total_bytes: np.ndarray
    errors: list[RejectedLine] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.timestamp)

    def __iter__(self) -> Iterator[FlowRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> FlowRecord:
        return FlowRecord(
            int(self.timestamp[i]),
            PROTOCOLS[self.protocol[i]],
            str(self.src_ip[i]),
            int(self.src_port[i]),
            str(self.dst_ip[i]),
            int(self.dst_port[i]),
            int(self.total_bytes[i]),
        )

    def take(self, idx: np.ndarray) -> "FlowTable":
        return FlowTable(
            self.timestamp[idx],
            self.protocol[idx],
            self.src_ip[idx],
            self.src_port[idx],
            self.dst_ip[idx],
            self.dst_port[idx],
            self.total_bytes[idx],
        )

    @classmethod
    def empty(cls) -> "FlowTable":
        i64 = np.empty(0, dtype=np.int64)
        s = np.empty(0, dtype=object)
        return cls(i64, np.empty(0, dtype=np.int8), s, i64, s.copy(), i64.copy(), i64.copy())

    @classmethod
    def from_records(cls, records: list[FlowRecord]) -> "FlowTable":
        if not records:
            return cls.empty()
        table = cls(
            np.array([r.timestamp for r in records], dtype=np.int64),
            np.array([PROTOCOLS.index(r.protocol) for r in records], dtype=np.int8),
            np.array([r.src_ip for r in records], dtype=object),
            np.array([r.src_port for r in records], dtype=np.int64),
            np.array([r.dst_ip for r in records], dtype=object),
            np.array([r.dst_port for r in records], dtype=np.int64),
            np.array([r.total_bytes for r in records], dtype=np.int64),
        )
        for name, arr in (("src_port", table.src_port), ("dst_port", table.dst_port)):
            if np.any((arr < 0) | (arr > MAX_PORT)):
                raise ValueError(f"{name} out of range")
        if np.any(table.total_bytes < 0):
            raise ValueError("negative total_bytes")
        return table.sorted()

    def sorted(self) -> "FlowTable":
        order = np.argsort(self.timestamp, kind="stable")
        out = self.take(order)
        out.errors = self.errors
        return out

    @staticmethod
    def concat(tables: list["FlowTable"]) -> "FlowTable":
        tables = [t for t in tables if len(t)] or [FlowTable.empty()]
        cols = [np.concatenate([getattr(t, f) for t in tables]) for f in _COLUMNS]
        return FlowTable(*cols).sorted()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "ts_us": self.timestamp,
                "proto": np.asarray(PROTOCOLS, dtype=object)[self.protocol],
                "src_ip": self.src_ip,
                "src_port": self.src_port,
                "dst_ip": self.dst_ip,
                "dst_port": self.dst_port,
                "total_bytes": self.total_bytes,
            },
            columns=list(CANONICAL_COLUMNS),
        )


_COLUMNS = ("timestamp", "protocol", "src_ip", "src_port", "dst_ip", "dst_port", "total_bytes")


def write_flow_csv(table: FlowTable, path: str | Path) -> None:
    table.to_frame().to_csv(path, index=False, lineterminator="\n")


def _parse_int(values: pd.Series, lo: int, hi: int | None, name: str, reasons: pd.Series) -> np.ndarray:
    stripped = values.str.strip()
    ok = stripped.str.fullmatch(r"\d+").fillna(False)
    out = np.zeros(len(values), dtype=np.int64)
    # ints wider than int64 fail the range check below via float conversion
    parsed = pd.to_numeric(stripped.where(ok), errors="coerce")
    bad_syntax = ~ok
    in_range = parsed.ge(lo) & (parsed.le(hi) if hi is not None else True)
    bad_range = ok & ~in_range.fillna(False)
    reasons[bad_syntax & reasons.isna()] = f"{name}: not an integer"
    reasons[bad_range & reasons.isna()] = f"{name}: out of range"
    good = ok & ~bad_range
    out[good.to_numpy()] = parsed[good].astype(np.int64).to_numpy()
    return out


def _valid_ip(s: str) -> bool:
    try:
        ipaddress.ip_address(s)
    except ValueError:
        return False
    return True


def _parse_ips(values: pd.Series, name: str, reasons: pd.Series) -> np.ndarray:
    stripped = values.str.strip()
    uniq = pd.unique(stripped.dropna())
    validity = {u: _valid_ip(u) for u in uniq}
    ok = stripped.map(validity).fillna(False).astype(bool)
    reasons[~ok & reasons.isna()] = f"{name}: invalid IP address"
    return stripped.to_numpy(dtype=object)


def _parse_time(values: pd.Series, schema: FlowSchema, reasons: pd.Series) -> np.ndarray:
    s = values.str.strip()
    out = np.zeros(len(s), dtype=np.int64)
    if schema.time_format == "us":
        return _parse_int(values, 0, None, "timestamp", reasons)
    if schema.time_format == "s":
        ok = s.str.fullmatch(r"\d+(\.\d{1,6})?").fillna(False)
        whole = s.str.split(".", n=1).str[0]
        frac = s.str.split(".", n=1).str[1].fillna("").str.ljust(6, "0")
        good = ok.to_numpy()
        out[good] = whole[ok].astype(np.int64).to_numpy() * 1_000_000 + frac[ok].replace("", "0").astype(np.int64).to_numpy()
        reasons[~ok & reasons.isna()] = "timestamp: unparseable"
        return out
    tz = ZoneInfo(schema.tz)
    if schema.time_format == "clock" and schema.base_date is None:
        raise FlowParseError("time_format 'clock' needs a base date")
    for i, text in enumerate(s.tolist()):
        try:
            if schema.time_format == "iso":
                dt = datetime.fromisoformat(text)
                if dt.tzinfo is None:
                    dt = dt.replace(tzinfo=tz)
            else:
                dt = datetime.combine(schema.base_date, time.fromisoformat(text), tzinfo=tz)
        except (TypeError, ValueError):
            if pd.isna(reasons.iat[i]):
                reasons.iat[i] = "timestamp: unparseable"
            continue
        out[i] = (dt - _EPOCH) // timedelta(microseconds=1)
    return out


_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def parse_flow_file(path: str | Path, schema: FlowSchema | None = None) -> FlowTable:
    """Read a flow file into a timestamp-ordered :class:`FlowTable`.

    Rejected lines are listed in ``table.errors`` with their 1-based line
    numbers.  More than ``schema.max_reject_fraction`` rejected lines raises
    :class:`FlowParseError`.
    """
    schema = schema or FlowSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.stat().st_size == 0:
        return FlowTable.empty()
    try:
        raw = pd.read_csv(
            path,
            dtype=str,
            header=0 if schema.has_header else None,
            sep=schema.delimiter,
            keep_default_na=False,
            skip_blank_lines=True,
            quoting=csv.QUOTE_MINIMAL,
        )
    except pd.errors.EmptyDataError:
        return FlowTable.empty()
    except pd.errors.ParserError as exc:
        raise FlowParseError(f"{path}: malformed CSV structure: {exc}") from exc
    missing = [c for c in schema.columns.values() if c not in raw.columns]
    if missing:
        raise FlowParseError(f"columns not found in {path}: {missing}")
    # pandas drops blank lines, so recover physical line numbers from the file
    line_numbers = _data_line_numbers(path, schema.has_header)
    if len(line_numbers) != len(raw):
        line_numbers = np.arange(len(raw)) + (2 if schema.has_header else 1)

    col = {f: raw[schema.columns[f]].astype(str) for f in FIELDS}
    reasons = pd.Series([None] * len(raw), dtype=object)
    for f in FIELDS:
        blank = raw[schema.columns[f]].isna() | (col[f].str.strip() == "")
        reasons[blank & reasons.isna()] = f"{f}: missing"
    ts = _parse_time(col["timestamp"], schema, reasons)
    proto = col["protocol"].str.strip().str.lower().map(_PROTO_ALIASES).fillna(2).astype(np.int8).to_numpy()
    src_ip = _parse_ips(col["src_ip"], "src_ip", reasons)
    src_port = _parse_int(col["src_port"], 0, MAX_PORT, "src_port", reasons)
    dst_ip = _parse_ips(col["dst_ip"], "dst_ip", reasons)
    dst_port = _parse_int(col["dst_port"], 0, MAX_PORT, "dst_port", reasons)
    total_bytes = _parse_int(col["total_bytes"], 0, None, "total_bytes", reasons)

    bad = reasons.notna().to_numpy()
    errors = [RejectedLine(int(line_numbers[i]), reasons.iat[i]) for i in np.flatnonzero(bad)]
    if len(raw) and len(errors) / len(raw) > schema.max_reject_fraction:
        raise FlowParseError(
            f"{len(errors)} of {len(raw)} lines rejected in {path} "
            f"(limit {schema.max_reject_fraction:.0%}); first: line {errors[0].line}: {errors[0].reason}"
        )
    for e in errors[:5]:
        log.warning("%s:%d rejected: %s", path, e.line, e.reason)
    good = ~bad
    table = FlowTable(
        ts[good], proto[good], src_ip[good], src_port[good], dst_ip[good], dst_port[good], total_bytes[good]
    ).sorted()
    table.errors = errors
    return table


def _data_line_numbers(path: Path, has_header: bool) -> np.ndarray:
    numbers = []
    seen_header = not has_header
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if not seen_header:
                seen_header = True
                continue
            numbers.append(i)
    return np.array(numbers, dtype=np.int64)
