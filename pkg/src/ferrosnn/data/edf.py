"""EDF / EDF+ reader and writer.

Only 16-bit little-endian sample files are handled (no BDF/GDF). EDF+
"EDF Annotations" signals are decoded into (onset, duration, label)
triples from their time-stamped annotation lists (TALs).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ANNOTATION_LABEL = "EDF Annotations"

_SIGNAL_FIELDS = (  # name, width
    ("label", 16), ("transducer", 80), ("physical_dimension", 8),
    ("physical_min", 8), ("physical_max", 8), ("digital_min", 8), ("digital_max", 8),
    ("prefiltering", 80), ("samples_per_record", 8), ("reserved", 32),
)


class EdfParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class EdfSignal:
    label: str
    transducer: str = ""
    physical_dimension: str = "uV"
    physical_min: float = -1000.0
    physical_max: float = 1000.0
    digital_min: int = -32768
    digital_max: int = 32767
    prefiltering: str = ""
    samples_per_record: int = 1
    reserved: str = ""

    @property
    def is_annotation(self) -> bool:
        return self.label.strip() == ANNOTATION_LABEL

    @property
    def gain(self) -> float:
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    def to_physical(self, digital) -> np.ndarray:
        d = np.asarray(digital, dtype=float)
        return (d - self.digital_min) * self.gain + self.physical_min

    def to_digital(self, physical) -> np.ndarray:
        p = np.asarray(physical, dtype=float)
        d = np.round((p - self.physical_min) / self.gain + self.digital_min)
        return np.clip(d, self.digital_min, self.digital_max).astype(np.int16)


@dataclass
class Annotation:
    onset: float
    duration: float | None
    label: str


@dataclass
class EdfRecording:
    version: str = "0"
    patient_id: str = ""
    recording_id: str = ""
    start_date: str = "01.01.01"
    start_time: str = "00.00.00"
    reserved: str = ""
    n_records: int = 0
    record_duration: float = 1.0
    signals: list[EdfSignal] = field(default_factory=list)
    samples: list[np.ndarray] = field(default_factory=list)   # int16 per signal
    annotations: list[Annotation] = field(default_factory=list)
    raw_annotation_bytes: list[bytes] = field(default_factory=list)

    @property
    def n_signals(self) -> int:
        return len(self.signals)

    def sampling_rate(self, index: int) -> float:
        return self.signals[index].samples_per_record / self.record_duration

    def data_indices(self) -> list[int]:
        return [k for k, s in enumerate(self.signals) if not s.is_annotation]

    def physical(self, index: int) -> np.ndarray:
        return self.signals[index].to_physical(self.samples[index])

    def labels(self) -> list[str]:
        return [s.label for s in self.signals]


def _field(buf: bytes, pos: int, width: int) -> tuple[str, int]:
    if pos + width > len(buf):
        raise EdfParseError("header truncated", pos)
    return buf[pos:pos + width].decode("latin-1").strip(), pos + width


def _num(text: str, kind, what: str, pos: int):
    try:
        return kind(text)
    except ValueError:
        raise EdfParseError(f"bad {what} field {text!r}", pos) from None


def parse_edf(data: bytes) -> EdfRecording:
    """Decode an EDF/EDF+ byte string."""
    if len(data) < 256:
        raise EdfParseError("file shorter than the 256-byte fixed header", len(data))
    rec = EdfRecording()
    pos = 0
    rec.version, pos = _field(data, pos, 8)
    rec.patient_id, pos = _field(data, pos, 80)
    rec.recording_id, pos = _field(data, pos, 80)
    rec.start_date, pos = _field(data, pos, 8)
    rec.start_time, pos = _field(data, pos, 8)
    text, pos = _field(data, pos, 8)
    header_bytes = _num(text, int, "header length", pos - 8)
    rec.reserved, pos = _field(data, pos, 44)
    text, pos = _field(data, pos, 8)
    rec.n_records = _num(text, int, "record count", pos - 8)
    text, pos = _field(data, pos, 8)
    rec.record_duration = _num(text, float, "record duration", pos - 8)
    text, pos = _field(data, pos, 4)
    ns = _num(text, int, "signal count", pos - 4)
    if header_bytes != 256 * (ns + 1):
        raise EdfParseError(f"header length {header_bytes} != 256*(1+{ns})", 184)
    if len(data) < header_bytes:
        raise EdfParseError("signal header truncated", len(data))

    columns: dict[str, list[str]] = {}
    for name, width in _SIGNAL_FIELDS:
        vals = []
        for _ in range(ns):
            v, pos = _field(data, pos, width)
            vals.append(v)
        columns[name] = vals
    for k in range(ns):
        base = 256 + k * 16
        rec.signals.append(EdfSignal(
            label=columns["label"][k],
            transducer=columns["transducer"][k],
            physical_dimension=columns["physical_dimension"][k],
            physical_min=_num(columns["physical_min"][k], float, "physical min", base),
            physical_max=_num(columns["physical_max"][k], float, "physical max", base),
            digital_min=_num(columns["digital_min"][k], int, "digital min", base),
            digital_max=_num(columns["digital_max"][k], int, "digital max", base),
            prefiltering=columns["prefiltering"][k],
            samples_per_record=_num(columns["samples_per_record"][k], int, "samples per record", base),
            reserved=columns["reserved"][k],
        ))

    spr = np.array([s.samples_per_record for s in rec.signals], dtype=np.int64)
    record_len = int(spr.sum()) * 2
    body = len(data) - header_bytes
    if rec.n_records < 0:
        if record_len == 0 or body % record_len:
            raise EdfParseError("unknown record count and body is not a whole number of records",
                                header_bytes)
        rec.n_records = body // record_len
    expected = rec.n_records * record_len
    if body < expected:
        full = body // record_len if record_len else 0
        raise EdfParseError(
            f"data record {full} truncated: expected {expected} data bytes, found {body}",
            header_bytes + full * record_len)
    if body > expected:
        raise EdfParseError(f"record-count mismatch: {body - expected} trailing bytes", header_bytes + expected)

    raw = np.frombuffer(data, dtype="<i2", count=expected // 2, offset=header_bytes)
    raw = raw.reshape(rec.n_records, -1) if rec.n_records else raw.reshape(0, int(spr.sum()))
    bounds = np.concatenate([[0], np.cumsum(spr)])
    for k, sig in enumerate(rec.signals):
        block = raw[:, bounds[k]:bounds[k + 1]]
        if sig.is_annotation:
            rec.samples.append(np.array([], dtype=np.int16))
            for r in range(rec.n_records):
                chunk = block[r].astype("<i2").tobytes()
                rec.raw_annotation_bytes.append(chunk)
                rec.annotations.extend(parse_tal(chunk))
        else:
            rec.samples.append(block.reshape(-1).astype(np.int16))
    return rec


def parse_tal(chunk: bytes) -> list[Annotation]:
    """Decode the TALs of one annotation-signal record.

    Each TAL is ``+onset[\\x15duration]\\x14label\\x14[label\\x14...]\\x00``.
    The record's time-keeping TAL (no label) is not returned.
    """
    out: list[Annotation] = []
    pos = 0
    n = len(chunk)
    while pos < n:
        if chunk[pos] == 0:
            pos += 1
            continue
        end = chunk.find(b"\x00", pos)
        if end < 0:
            log.warning("unterminated TAL kept raw: %r", chunk[pos:])
            break
        tal = chunk[pos:end]
        pos = end + 1
        parts = tal.split(b"\x14")
        head = parts[0]
        if not head[:1] in (b"+", b"-"):
            log.warning("unrecognised annotation encoding kept raw: %r", tal)
            continue
        onset_s, _, dur_s = head.partition(b"\x15")
        try:
            onset = float(onset_s)
            duration = float(dur_s) if dur_s else None
        except ValueError:
            log.warning("unrecognised annotation encoding kept raw: %r", tal)
            continue
        for label in parts[1:]:
            if label:
                out.append(Annotation(onset, duration, label.decode("utf-8", errors="replace")))
    return out


def format_tal(onset: float, duration: float | None, labels: list[str]) -> bytes:
    head = f"{onset:+g}".encode()
    if duration is not None:
        head += b"\x15" + f"{duration:g}".encode()
    return head + b"\x14" + b"".join(lab.encode() + b"\x14" for lab in labels) + b"\x00"


def _pad(text, width: int) -> bytes:
    b = str(text).encode("latin-1")
    if len(b) > width:
        raise ValueError(f"{text!r} does not fit in {width} bytes")
    return b.ljust(width, b" ")


def _fmt_num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    s = f"{x:g}"
    return s if len(s) <= 8 else f"{x:.6g}"


def write_edf(rec: EdfRecording) -> bytes:
    """Serialize a recording.

    Annotation signals are rewritten from ``raw_annotation_bytes`` when
    present (exact round-trip), otherwise from ``annotations`` (all placed
    in the first record, after its time-keeping TAL).
    """
    ns = rec.n_signals
    head = b"".join([
        _pad(rec.version, 8), _pad(rec.patient_id, 80), _pad(rec.recording_id, 80),
        _pad(rec.start_date, 8), _pad(rec.start_time, 8), _pad(256 * (ns + 1), 8),
        _pad(rec.reserved, 44), _pad(rec.n_records, 8), _pad(_fmt_num(rec.record_duration), 8),
        _pad(ns, 4),
    ])
    for name, width in _SIGNAL_FIELDS:
        for s in rec.signals:
            val = getattr(s, name)
            head += _pad(_fmt_num(val) if isinstance(val, (int, float)) else val, width)

    ann_records = _annotation_records(rec)
    blocks = []
    for r in range(rec.n_records):
        for k, s in enumerate(rec.signals):
            n = s.samples_per_record
            if s.is_annotation:
                blocks.append(ann_records[r])
            else:
                blocks.append(np.asarray(rec.samples[k][r * n:(r + 1) * n], dtype="<i2").tobytes())
    return head + b"".join(blocks)


def _annotation_records(rec: EdfRecording) -> list[bytes]:
    ann = [s for s in rec.signals if s.is_annotation]
    if not ann:
        return []
    nbytes = ann[0].samples_per_record * 2
    if len(rec.raw_annotation_bytes) == rec.n_records:
        return rec.raw_annotation_bytes
    out = []
    for r in range(rec.n_records):
        chunk = format_tal(r * rec.record_duration, None, [""])
        if r == 0:
            chunk += b"".join(format_tal(a.onset, a.duration, [a.label]) for a in rec.annotations)
        if len(chunk) > nbytes:
            raise ValueError("annotations do not fit in the annotation signal")
        out.append(chunk.ljust(nbytes, b"\x00"))
    return out


def read_edf(path: str | Path) -> EdfRecording:
    return parse_edf(Path(path).read_bytes())
