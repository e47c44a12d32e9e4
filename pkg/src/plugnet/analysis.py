"""
Analysis Module for plugnet

Traffic and firmware utilities: byte entropy of trace fields with
high-entropy flagging, PEM certificate search, and filesystem signature
identification for firmware blobs.
"""

import binascii
import dataclasses
import json
import logging
import os
import struct
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .crypto_auth import AuthField
from .exceptions import EmptyInput, ParseError
from .messages import deserialize, is_wire_type
from .simnet import TraceRecord
from .trace_loader import load_trace

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 7.0
DEFAULT_MIN_LEN = 16
SIGNATURE_FILE = os.path.join(os.path.dirname(__file__), 'data', 'fs_signatures.json')
JFFS2_NODE_TYPES = {0xE001, 0xE002, 0x2003, 0x2004, 0x6006, 0xE008, 0xE009}


# Entropy

def shannon_entropy(data: bytes) -> float:
    """
    Shannon entropy of the byte distribution of ``data``.

    Args:
        data (bytes): Non-empty input

    Returns:
        float: Bits per byte in [0, 8]
    """
    if not data:
        raise EmptyInput("entropy of an empty byte string is undefined")
    counts = np.bincount(np.frombuffer(bytes(data), dtype=np.uint8), minlength=256)
    h = float(stats.entropy(counts, base=2))
    return min(max(h, 0.0), 8.0) + 0.0


@lru_cache(maxsize=1024)
def expected_random_entropy(n: int) -> float:
    """Expected plug-in entropy of ``n`` uniformly random bytes."""
    if n < 2:
        return 0.0
    c = np.arange(1, n + 1, dtype=np.float64)
    pmf = stats.binom.pmf(c, n, 1.0 / 256)
    return float(np.log2(n) - (256.0 / n) * np.sum(pmf * c * np.log2(c)))


def normalized_entropy(data: bytes) -> float:
    """
    Entropy scaled so a uniformly random sample of any size scores about 8.

    Short samples cannot reach 8 bits/byte by counting alone, so the raw
    value is divided by what random bytes of the same length would give.
    """
    h = shannon_entropy(data)
    expected = expected_random_entropy(len(data))
    if expected <= 0.0:
        return 0.0
    return 8.0 * min(1.0, h / expected)


@dataclass(frozen=True)
class FieldEntropy:
    name: str
    byte_count: int
    bits_per_byte: float
    raw_bits_per_byte: float
    distinct_values: int
    flagged: bool

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class EntropyReport:
    fields: Tuple[FieldEntropy, ...]
    threshold: float
    min_len: int

    @property
    def flagged(self) -> List[str]:
        return [f.name for f in self.fields if f.flagged]

    def get(self, name: str) -> Optional[FieldEntropy]:
        return next((f for f in self.fields if f.name == name), None)

    def to_dict(self) -> Dict:
        return {
            'threshold': self.threshold,
            'min_len': self.min_len,
            'fields': [f.to_dict() for f in self.fields],
        }

    def to_dataframe(self) -> pd.DataFrame:
        columns = [f.name for f in dataclasses.fields(FieldEntropy)]
        return pd.DataFrame([f.to_dict() for f in self.fields], columns=columns)


def _field_bytes(value) -> bytes:
    if isinstance(value, bytes):
        return value
    if isinstance(value, bool):
        return b"1" if value else b"0"
    if isinstance(value, Enum):
        return str(value.value).encode("utf-8")
    if isinstance(value, int):
        return str(value).encode("ascii")
    return str(value).encode("utf-8")


def flatten_fields(msg, nested: bool = False) -> Iterable[Tuple[str, bytes]]:
    """
    Yield ``(name, bytes)`` for every leaf field of a message.

    Top-level fields keep their bare name; fields of embedded value types
    are named ``Type.field``.
    """
    for f in dataclasses.fields(msg):
        value = getattr(msg, f.name)
        if value is None:
            continue
        if isinstance(msg, AuthField) and msg.is_dummy and f.name == 'digest':
            continue
        if is_wire_type(value):
            yield from flatten_fields(value, nested=True)
            continue
        name = f"{type(msg).__name__}.{f.name}" if nested else f.name
        yield name, _field_bytes(value)


def classify_trace_fields(trace: Union[str, List[TraceRecord]], threshold: float = DEFAULT_THRESHOLD,
                          min_len: int = DEFAULT_MIN_LEN) -> EntropyReport:
    """
    Measure the entropy of every message field seen in a trace.

    Distinct values are pooled per field name. A field is flagged when its
    normalized entropy reaches ``threshold`` and the pool holds at least
    ``min_len`` bytes.

    Args:
        trace: Path of a trace.jsonl file, or loaded records
        threshold (float): Normalized bits per byte, 0 to 8
        min_len (int): Minimum pooled bytes

    Returns:
        EntropyReport: One entry per field name, sorted by name
    """
    records = load_trace(trace) if isinstance(trace, (str, os.PathLike)) else list(trace)
    pools: Dict[str, Dict[bytes, None]] = {}
    for line_no, record in enumerate(records, 1):
        try:
            msg = deserialize(record.payload)
        except ParseError as e:
            raise ParseError(f"undecodable payload in record {record.seq}: {e}", line=line_no) from e
        for name, value in flatten_fields(msg):
            if value:
                pools.setdefault(name, {})[value] = None

    results = []
    for name in sorted(pools):
        values = list(pools[name])
        pooled = b"".join(values)
        normalized = normalized_entropy(pooled)
        results.append(FieldEntropy(
            name=name,
            byte_count=len(pooled),
            bits_per_byte=round(normalized, 6),
            raw_bits_per_byte=round(shannon_entropy(pooled), 6),
            distinct_values=len(values),
            flagged=normalized >= threshold and len(pooled) >= min_len,
        ))
    report = EntropyReport(tuple(results), threshold, min_len)
    logger.info(f"Entropy analysis: {len(results)} fields, {len(report.flagged)} flagged")
    return report


def plot_entropy_report(report: EntropyReport, output_path: str) -> str:
    """Bar chart of per-field entropy with the threshold line."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    names = [f.name for f in report.fields]
    values = [f.bits_per_byte for f in report.fields]
    colors = ['tab:red' if f.flagged else 'tab:blue' for f in report.fields]
    fig, ax = plt.subplots(figsize=(max(6, 0.4 * len(names)), 5))
    ax.bar(range(len(names)), values, color=colors)
    ax.axhline(report.threshold, color='black', linestyle='--', linewidth=1, label=f"threshold {report.threshold}")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=75, ha='right', fontsize=8)
    ax.set_ylim(0, 8.2)
    ax.set_ylabel('normalized entropy (bits/byte)')
    ax.legend(loc='lower right')
    fig.tight_layout()
    fig.savefig(output_path, dpi=100)
    plt.close(fig)
    logger.info(f"Entropy plot saved to {output_path}")
    return output_path


# Firmware blobs

class BlobKind(str, Enum):
    PEM_CERTIFICATE = "PemCertificate"
    SQUASHFS = "SquashFS"
    CRAMFS = "CramFS"
    JFFS2 = "JFFS2"
    UBIFS = "UBIFS"
    ROMFS = "RomFS"


MULTI_NODE_KINDS = {BlobKind.JFFS2, BlobKind.UBIFS}


@dataclass(frozen=True)
class BlobFinding:
    offset: int
    kind: BlobKind
    detail: str

    def to_dict(self) -> Dict:
        return {'offset': self.offset, 'kind': self.kind.value, 'detail': self.detail}


@dataclass(frozen=True)
class Signature:
    name: str
    kind: BlobKind
    magic: bytes
    endian: str
    check: str
    fs_class: str


def _jffs2_crc(header: bytes) -> int:
    # JFFS2 stores the raw CRC32: no initial or final inversion
    return binascii.crc32(header, 0xFFFFFFFF) ^ 0xFFFFFFFF


class FirmwareScanner:
    """
    Byte-granular signature scanner for firmware images.

    Args:
        signature_file (str): JSON signature table
    """

    def __init__(self, signature_file: str = SIGNATURE_FILE):
        with open(signature_file, 'r', encoding='utf-8') as f:
            table = json.load(f)
        self.pem_header = table['pem_header'].encode('ascii')
        self.pem_footer = table['pem_footer'].encode('ascii')
        self.signatures = [
            Signature(s['name'], BlobKind(s['kind']), bytes.fromhex(s['magic']), s['endian'], s['check'], s['class'])
            for s in table['signatures']
        ]

    @staticmethod
    def _occurrences(blob: bytes, needle: bytes) -> Iterable[int]:
        offset = blob.find(needle)
        while offset != -1:
            yield offset
            offset = blob.find(needle, offset + 1)

    def find_pem_certificates(self, blob: bytes) -> List[BlobFinding]:
        findings = []
        for offset in self._occurrences(blob, self.pem_header):
            complete = blob.find(self.pem_footer, offset + len(self.pem_header)) != -1
            findings.append(BlobFinding(offset, BlobKind.PEM_CERTIFICATE,
                                        "certificate" if complete else "certificate header without footer"))
        return findings

    # Header checks confirm a magic hit is a plausible superblock or node.

    def _check_squashfs(self, blob: bytes, offset: int, sig: Signature) -> bool:
        if offset + 32 > len(blob):
            return False
        fmt = '<H' if sig.endian == 'little' else '>H'
        major = struct.unpack_from(fmt, blob, offset + 28)[0]
        return 1 <= major <= 4

    def _check_cramfs(self, blob: bytes, offset: int, sig: Signature) -> bool:
        return blob[offset + 16:offset + 32] == b"Compressed ROMFS"

    def _check_romfs(self, blob: bytes, offset: int, sig: Signature) -> bool:
        if offset + 16 > len(blob):
            return False
        return struct.unpack_from(">I", blob, offset + 8)[0] > 0

    def _check_jffs2(self, blob: bytes, offset: int, sig: Signature) -> bool:
        if offset + 12 > len(blob):
            return False
        prefix = '<' if sig.endian == 'little' else '>'
        nodetype, totlen, hdr_crc = struct.unpack_from(prefix + 'HII', blob, offset + 2)
        return nodetype in JFFS2_NODE_TYPES and totlen >= 12 and _jffs2_crc(blob[offset:offset + 8]) == hdr_crc

    def _check_ubifs(self, blob: bytes, offset: int, sig: Signature) -> bool:
        return offset + 24 <= len(blob) and blob[offset + 20] <= 11

    def _check_ubi(self, blob: bytes, offset: int, sig: Signature) -> bool:
        return offset + 8 <= len(blob) and blob[offset + 4] == 1

    def identify_filesystems(self, blob: bytes) -> List[BlobFinding]:
        """
        Find filesystem signatures anywhere in ``blob``.

        Formats made of many nodes (JFFS2, UBI/UBIFS) are reported once per
        run of consecutive hits, at the offset of the first node; the
        per-node offsets of that run are not listed. A hit of another kind
        ends the run, so a second JFFS2 partition behind a SquashFS one gets
        its own finding.

        Args:
            blob (bytes): Firmware image or any part of one

        Returns:
            List[BlobFinding]: Findings in ascending offset order
        """
        hits = []
        for sig in self.signatures:
            check = getattr(self, f"_check_{sig.check}")
            for offset in self._occurrences(blob, sig.magic):
                if check(blob, offset, sig):
                    hits.append((offset, sig))
        hits.sort(key=lambda hit: (hit[0], hit[1].name))

        findings: List[BlobFinding] = []
        for offset, sig in hits:
            if sig.kind in MULTI_NODE_KINDS and findings and findings[-1].kind is sig.kind:
                continue
            findings.append(BlobFinding(offset, sig.kind, sig.fs_class))
        return findings

    def scan_file(self, file_path: str) -> Dict:
        with open(file_path, 'rb') as f:
            blob = f.read()
        return {
            'file': os.path.basename(file_path),
            'size': len(blob),
            'filesystems': self.identify_filesystems(blob),
            'certificates': self.find_pem_certificates(blob),
        }

    def survey_directory(self, directory: str) -> Dict[str, pd.DataFrame]:
        """
        Identify the filesystems of every blob in ``directory``.

        The vendor is the filename prefix before the first underscore.

        Returns:
            Dict: ``files`` (one row per blob) and ``table`` (vendor x
            filesystem combination counts)
        """
        rows = []
        for name in sorted(os.listdir(directory)):
            path = os.path.join(directory, name)
            if not os.path.isfile(path):
                continue
            scan = self.scan_file(path)
            kinds = sorted({f.kind.value for f in scan['filesystems']})
            rows.append({
                'file': name,
                'vendor': name.split('_')[0],
                'size': scan['size'],
                'filesystems': '+'.join(kinds) if kinds else 'none',
                'writable': any(f.detail == "writable" for f in scan['filesystems']),
                'certificates': len(scan['certificates']),
            })
        files = pd.DataFrame(rows, columns=['file', 'vendor', 'size', 'filesystems', 'writable', 'certificates'])
        if files.empty:
            table = pd.DataFrame()
        else:
            table = pd.crosstab(files['vendor'], files['filesystems'])
        logger.info(f"Surveyed {len(files)} firmware blobs in {directory}")
        return {'files': files, 'table': table}


@lru_cache(maxsize=1)
def _default_scanner() -> FirmwareScanner:
    return FirmwareScanner()


def find_pem_certificates(blob: bytes) -> List[BlobFinding]:
    return _default_scanner().find_pem_certificates(blob)


def identify_filesystems(blob: bytes) -> List[BlobFinding]:
    return _default_scanner().identify_filesystems(blob)
