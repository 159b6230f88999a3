from datetime import date

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphprints.flows import FlowParseError, FlowRecord, FlowSchema, FlowTable, parse_flow_file, write_flow_csv

HEADER = "ts_us,proto,src_ip,src_port,dst_ip,dst_port,total_bytes\n"


def write(tmp_path, text, name="flows.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_clock_timestamp_with_base_date(tmp_path):
    p = write(tmp_path, "09:58:32.912,tcp,192.168.1.100,59860,173.16.100.10,80,1695088\n")
    schema = FlowSchema(
        columns=dict(timestamp=0, protocol=1, src_ip=2, src_port=3, dst_ip=4, dst_port=5, total_bytes=6),
        has_header=False,
        time_format="clock",
        base_date=date(2013, 6, 13),
    )
    (rec,) = list(parse_flow_file(p, schema))
    assert rec == FlowRecord(1371117512912000, "tcp", "192.168.1.100", 59860, "173.16.100.10", 80, 1695088)


def test_clock_respects_time_zone(tmp_path):
    p = write(tmp_path, "t,p,s,sp,d,dp,b\n00:00:00,udp,10.0.0.1,5,10.0.0.2,6,1\n")
    cols = dict(timestamp="t", protocol="p", src_ip="s", src_port="sp", dst_ip="d", dst_port="dp", total_bytes="b")
    utc = parse_flow_file(p, FlowSchema(cols, time_format="clock", base_date="2020-01-01"))
    ny = parse_flow_file(p, FlowSchema(cols, time_format="clock", base_date="2020-01-01", tz="America/New_York"))
    assert ny.timestamp[0] - utc.timestamp[0] == 5 * 3600 * 10**6


def test_clock_without_base_date_is_an_error(tmp_path):
    p = write(tmp_path, "00:00:01,tcp,1.1.1.1,1,2.2.2.2,2,3\n")
    cols = dict(timestamp=0, protocol=1, src_ip=2, src_port=3, dst_ip=4, dst_port=5, total_bytes=6)
    with pytest.raises(FlowParseError):
        parse_flow_file(p, FlowSchema(cols, has_header=False, time_format="clock"))


def test_empty_file(tmp_path):
    for text in ("", HEADER):
        t = parse_flow_file(write(tmp_path, text))
        assert len(t) == 0 and t.errors == []


def test_out_of_range_port_rejected(tmp_path):
    rows = [f"{i},tcp,10.0.0.1,{1000 + i},10.0.0.2,80,10\n" for i in range(20)]
    rows[3] = "3,tcp,10.0.0.1,70000,10.0.0.2,80,10\n"
    t = parse_flow_file(write(tmp_path, HEADER + "".join(rows)))
    assert len(t) == 19
    assert [(e.line, e.reason) for e in t.errors] == [(5, "src_port: out of range")]


def test_bad_ip_and_blank_lines_keep_physical_line_numbers(tmp_path):
    text = HEADER + "1,tcp,10.0.0.1,1,10.0.0.2,2,3\n\n" + "".join(
        f"{i},tcp,10.0.0.1,1,10.0.0.2,2,3\n" for i in range(2, 12)
    ) + "12,tcp,10.0.0.300,1,10.0.0.2,2,3\n"
    t = parse_flow_file(write(tmp_path, text))
    assert [e.line for e in t.errors] == [14]
    assert "src_ip" in t.errors[0].reason


def test_reject_threshold(tmp_path):
    rows = "".join(f"{i},tcp,10.0.0.1,{'x' if i % 3 == 0 else 1},10.0.0.2,2,3\n" for i in range(30))
    with pytest.raises(FlowParseError, match="rejected"):
        parse_flow_file(write(tmp_path, HEADER + rows))


def test_protocol_aliases_and_sorting(tmp_path):
    text = HEADER + "5,6,1.1.1.1,1,2.2.2.2,2,3\n1,17,1.1.1.1,1,2.2.2.2,2,3\n3,icmp,1.1.1.1,1,2.2.2.2,2,3\n"
    t = parse_flow_file(write(tmp_path, text))
    assert t.timestamp.tolist() == [1, 3, 5]
    assert [r.protocol for r in t] == ["udp", "other", "tcp"]


def test_decimal_seconds_and_ipv6(tmp_path):
    cols = dict(timestamp=0, protocol=1, src_ip=2, src_port=3, dst_ip=4, dst_port=5, total_bytes=6)
    p = write(tmp_path, "1600000000.25,tcp,::1,1,fe80::2,2,3\n")
    (rec,) = list(parse_flow_file(p, FlowSchema(cols, has_header=False, time_format="s")))
    assert rec.timestamp == 1_600_000_000_250_000 and rec.src_ip == "::1"


def test_missing_column_in_schema(tmp_path):
    with pytest.raises(FlowParseError):
        FlowSchema(columns={"timestamp": "ts"})
    p = write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(FlowParseError, match="columns not found"):
        parse_flow_file(p)


def test_schema_from_yaml(tmp_path):
    y = write(tmp_path, "has_header: false\ntime_format: s\ncolumns: {timestamp: 0, protocol: 1, src_ip: 2, src_port: 3, dst_ip: 4, dst_port: 5, total_bytes: 6}\n", "s.yaml")
    s = FlowSchema.from_file(y)
    assert s.time_format == "s" and s.columns["dst_ip"] == 4


records = st.builds(
    FlowRecord,
    st.integers(0, 2**50),
    st.sampled_from(["tcp", "udp", "other"]),
    st.ip_addresses(v=4).map(str),
    st.integers(0, 65535),
    st.ip_addresses().map(str),
    st.integers(0, 65535),
    st.integers(0, 2**40),
)


@given(st.lists(records, max_size=30))
def test_canonical_round_trip(tmp_path_factory, recs):
    table = FlowTable.from_records(recs)
    p = tmp_path_factory.mktemp("rt") / "f.csv"
    write_flow_csv(table, p)
    back = parse_flow_file(p)
    assert list(back) == list(table)
    assert np.all(np.diff(back.timestamp) >= 0)
