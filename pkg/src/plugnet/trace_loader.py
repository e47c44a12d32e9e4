"""
Trace Loader Module for plugnet

Handles loading and rendering of JSON-lines trace files written by the
simulated network.
"""

import json
import logging
from typing import Dict, Iterable, List, Optional

import pandas as pd

from .exceptions import ParseError
from .messages import deserialize, redact_for_trace
from .simnet import TraceRecord

logger = logging.getLogger(__name__)

FILTER_KEYS = ('kind', 'src', 'dst', 'channel')


class TraceLoader:
    """
    Load trace.jsonl files.

    One TraceRecord per line; blank lines are ignored. Any malformed line
    raises ParseError carrying its 1-based line number.
    """

    def __init__(self):
        self.records: List[TraceRecord] = []
        self.source: Optional[str] = None

    def load_file(self, file_path: str) -> List[TraceRecord]:
        """
        Load a trace file.

        Args:
            file_path (str): Path to the trace.jsonl file

        Returns:
            List[TraceRecord]: Records in file order
        """
        logger.info(f"Loading trace: {file_path}")
        with open(file_path, 'r', encoding='utf-8') as f:
            self.records = self.parse_lines(f)
        self.source = file_path
        logger.info(f"Loaded {len(self.records)} trace records")
        return self.records

    @staticmethod
    def parse_lines(lines: Iterable[str]) -> List[TraceRecord]:
        records = []
        previous_seq = None
        for line_no, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                record = TraceRecord.from_dict(json.loads(line))
                bytes.fromhex(record.payload_hex)
            except (ValueError, KeyError, TypeError, AttributeError) as e:
                raise ParseError(f"malformed trace record: {e}", line=line_no) from e
            if previous_seq is not None and record.seq <= previous_seq:
                raise ParseError(f"seq {record.seq} does not increase", line=line_no)
            previous_seq = record.seq
            records.append(record)
        return records

    def to_dataframe(self, records: Optional[List[TraceRecord]] = None) -> pd.DataFrame:
        """Tabulate records, one row each."""
        records = self.records if records is None else records
        rows = [{
            'seq': r.seq,
            'vtime': r.vtime,
            'src': r.src.node_id,
            'dst': r.dst.node_id,
            'channel': r.channel.value,
            'kind': r.kind,
            'outcome': r.annotations.get('outcome', ''),
            'observed_src': r.annotations.get('observed_src', ''),
            'bytes': len(r.payload_hex) // 2,
        } for r in records]
        columns = ['seq', 'vtime', 'src', 'dst', 'channel', 'kind', 'outcome', 'observed_src', 'bytes']
        return pd.DataFrame(rows, columns=columns)


def load_trace(file_path: str) -> List[TraceRecord]:
    return TraceLoader().load_file(file_path)


def parse_filter(expression: Optional[str]) -> Dict[str, str]:
    """``"kind=ControlCommand"`` -> ``{'kind': 'ControlCommand'}``."""
    if not expression:
        return {}
    key, sep, value = expression.partition('=')
    key = key.strip()
    if not sep or key not in FILTER_KEYS or not value.strip():
        raise ValueError(f"filter must be one of {', '.join(k + '=...' for k in FILTER_KEYS)}")
    return {key: value.strip()}


def filter_records(records: List[TraceRecord], criteria: Dict[str, str]) -> List[TraceRecord]:
    def keep(record: TraceRecord) -> bool:
        for key, value in criteria.items():
            if key == 'kind' and record.kind != value:
                return False
            if key == 'src' and record.src.node_id != value:
                return False
            if key == 'dst' and record.dst.node_id != value:
                return False
            if key == 'channel' and record.channel.value != value:
                return False
        return True
    return [r for r in records if keep(r)]


def render_record(record: TraceRecord) -> str:
    """
    One stable line per record. The message body is decoded and re-redacted,
    so a passphrase never appears even in a trace written by another tool.
    """
    try:
        body = repr(redact_for_trace(deserialize(record.payload)))
    except ParseError:
        body = f"<undecodable {len(record.payload_hex) // 2} bytes>"
    outcome = record.annotations.get('outcome', '')
    return (f"#{record.seq:05d} t={record.vtime:<4d} {record.channel.value:<14s} "
            f"{record.src.node_id} -> {record.dst.node_id} [{outcome}] {record.kind} {body}")


def render_trace(records: List[TraceRecord]) -> List[str]:
    return [render_record(r) for r in records]
