import json

import pytest

from plugnet.exceptions import ParseError
from plugnet.trace_loader import (
    TraceLoader,
    filter_records,
    load_trace,
    parse_filter,
    render_record,
    render_trace,
)

PASSPHRASE = "correct horse battery"


def trace_lines(path):
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


class TestLoading:
    def test_load_benign_trace(self, benign_trace):
        loader = TraceLoader()
        records = loader.load_file(str(benign_trace))
        assert len(records) == len(trace_lines(benign_trace))
        assert [r.seq for r in records] == list(range(len(records)))
        assert loader.source == str(benign_trace)

    def test_blank_lines_ignored(self, benign_trace):
        lines = trace_lines(benign_trace)[:3]
        assert len(TraceLoader.parse_lines([lines[0], "", lines[1], "  ", lines[2]])) == 3

    def test_malformed_line_reports_line_number(self, benign_trace, tmp_path):
        lines = trace_lines(benign_trace)[:3]
        lines[1] = lines[1][:20]
        path = tmp_path / "broken.jsonl"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as exc:
            load_trace(str(path))
        assert exc.value.line == 2

    def test_bad_payload_hex(self, benign_trace):
        record = json.loads(trace_lines(benign_trace)[0])
        record['payload_hex'] = "zz"
        with pytest.raises(ParseError) as exc:
            TraceLoader.parse_lines([json.dumps(record)])
        assert exc.value.line == 1

    def test_seq_must_increase(self, benign_trace):
        lines = trace_lines(benign_trace)[:2]
        with pytest.raises(ParseError) as exc:
            TraceLoader.parse_lines([lines[1], lines[0]])
        assert exc.value.line == 2

    @pytest.mark.parametrize("key,value", [
        ("annotations", []),
        ("annotations", "delivered"),
        ("src", "x"),
        ("dst", None),
        ("seq", "zero"),
        ("seq", True),
        ("vtime", 1.5),
        ("channel", 7),
        ("kind", ["BindRequest"]),
        ("payload_hex", 12),
    ])
    def test_wrong_json_types_report_line_number(self, benign_trace, key, value):
        lines = trace_lines(benign_trace)[:3]
        record = json.loads(lines[2])
        record[key] = value
        lines[2] = json.dumps(record)
        with pytest.raises(ParseError) as exc:
            TraceLoader.parse_lines(lines)
        assert exc.value.line == 3

    def test_wrong_nested_types_report_line_number(self, benign_trace):
        record = json.loads(trace_lines(benign_trace)[0])
        record['src']['node_id'] = {"name": "victim-plug"}
        with pytest.raises(ParseError) as exc:
            TraceLoader.parse_lines(["", json.dumps(record)])
        assert exc.value.line == 2

    @pytest.mark.parametrize("line", ["[]", "42", "\"record\"", "null"])
    def test_non_object_lines(self, line):
        with pytest.raises(ParseError) as exc:
            TraceLoader.parse_lines([line])
        assert exc.value.line == 1

    def test_empty_trace(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_trace(str(path)) == []
        assert render_trace([]) == []

    def test_dataframe(self, benign_trace):
        loader = TraceLoader()
        loader.load_file(str(benign_trace))
        frame = loader.to_dataframe()
        assert len(frame) == len(loader.records)
        assert set(frame['channel']) <= {"LocalAp", "Internet", "ServerInternal"}
        assert "delivered" in set(frame['outcome'])


class TestRendering:
    def test_line_layout(self, benign_trace):
        record = load_trace(str(benign_trace))[0]
        line = render_record(record)
        assert line.startswith("#00000 t=" + f"{record.vtime:<4d} " + "LocalAp".ljust(14) + " ")
        assert f"{record.src.node_id} -> {record.dst.node_id} [delivered] PairGetInfoRequest " in line

    def test_passphrase_never_rendered(self, benign_trace):
        lines = render_trace(load_trace(str(benign_trace)))
        setup = [line for line in lines if " PairSetupRequest " in line]
        assert setup
        assert all(PASSPHRASE not in line for line in lines)
        assert "*" * len(PASSPHRASE) in setup[0]

    def test_undecodable_payload(self, benign_trace):
        record = json.loads(trace_lines(benign_trace)[0])
        record['payload_hex'] = "00ff"
        parsed = TraceLoader.parse_lines([json.dumps(record)])[0]
        assert render_record(parsed).endswith("<undecodable 2 bytes>")

    def test_rendering_is_stable(self, benign_trace):
        records = load_trace(str(benign_trace))
        assert render_trace(records) == render_trace(load_trace(str(benign_trace)))


class TestFilters:
    def test_parse_filter(self):
        assert parse_filter("kind=ControlCommand") == {'kind': "ControlCommand"}
        assert parse_filter(" dst = victim-plug ") == {'dst': "victim-plug"}
        assert parse_filter(None) == {}

    @pytest.mark.parametrize("expression", ["kind", "colour=red", "kind="])
    def test_invalid_filter(self, expression):
        with pytest.raises(ValueError):
            parse_filter(expression)

    def test_filter_by_kind(self, benign_trace):
        records = load_trace(str(benign_trace))
        commands = filter_records(records, parse_filter("kind=ControlCommand"))
        assert len(commands) == 3
        assert all(r.kind == "ControlCommand" for r in commands)

    def test_filter_by_channel_and_node(self, benign_trace):
        records = load_trace(str(benign_trace))
        local = filter_records(records, {'channel': "LocalAp"})
        assert local and all(r.channel.value == "LocalAp" for r in local)
        to_plug = filter_records(records, {'dst': "victim-plug"})
        assert to_plug and all(r.dst.node_id == "victim-plug" for r in to_plug)
        assert filter_records(records, {'src': "nobody"}) == []
