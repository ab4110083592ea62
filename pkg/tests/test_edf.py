import logging

import numpy as np
import pytest

from ferrosnn.data.edf import (
    Annotation,
    EdfParseError,
    EdfRecording,
    EdfSignal,
    format_tal,
    parse_edf,
    parse_tal,
    read_edf,
    write_edf,
)

from helpers import make_recording


def ramp_recording():
    sig = EdfSignal(label="Ramp", samples_per_record=8)
    ramp = np.arange(-8, 8, dtype=np.int16) * 1000
    return EdfRecording(n_records=2, record_duration=0.5, signals=[sig], samples=[ramp])


def test_minimal_roundtrip():
    rec = ramp_recording()
    data = write_edf(rec)
    assert len(data) == 512 + 2 * 8 * 2
    back = parse_edf(data)
    np.testing.assert_array_equal(back.samples[0], rec.samples[0])
    assert back.n_records == 2 and back.record_duration == 0.5
    assert back.sampling_rate(0) == 16.0
    assert write_edf(back) == data


def test_roundtrip_with_annotations_bit_exact(tmp_path):
    rec = make_recording(n_records=6, cues=[(1.0, 4.1, "T1"), (3.25, 4.1, "T2")])
    data = write_edf(rec)
    back = parse_edf(data)
    assert [(a.onset, a.duration, a.label) for a in back.annotations] == [(1.0, 4.1, "T1"), (3.25, 4.1, "T2")]
    assert write_edf(back) == data
    p = tmp_path / "S001R04.edf"
    p.write_bytes(data)
    assert write_edf(read_edf(p)) == data


def test_physical_scaling():
    sig = EdfSignal(label="x", physical_min=-1000, physical_max=1000, digital_min=-32768, digital_max=32767)
    expected = (0 - (-32768)) * (2000 / 65535) + (-1000)
    assert sig.to_physical(0) == pytest.approx(expected, rel=1e-12)
    assert sig.to_physical(0) == pytest.approx(0.0153, abs=1e-4)
    assert sig.to_physical(-32768) == -1000 and sig.to_physical(32767) == pytest.approx(1000)


def test_tal_decode():
    ann = parse_tal(b"+4.2\x152.1\x14T1\x14\x00")
    assert ann == [Annotation(4.2, 2.1, "T1")]


def test_tal_timekeeping_and_multiple_labels():
    chunk = b"+0\x14\x14\x00+1.5\x14T0\x14T2\x14\x00\x00\x00"
    assert parse_tal(chunk) == [Annotation(1.5, None, "T0"), Annotation(1.5, None, "T2")]


def test_tal_format_roundtrip():
    b = format_tal(12.5, 4.1, ["T2"])
    assert parse_tal(b) == [Annotation(12.5, 4.1, "T2")]


def test_unknown_annotation_warns(caplog):
    with caplog.at_level(logging.WARNING):
        out = parse_tal(b"garbage\x14T1\x14\x00")
    assert out == []
    assert "garbage" in caplog.text


def test_raw_annotation_bytes_preserved():
    rec = make_recording(n_records=2, cues=[(0.5, None, "T1")])
    back = parse_edf(write_edf(rec))
    assert len(back.raw_annotation_bytes) == 2
    assert b"T1" in back.raw_annotation_bytes[0]


def test_truncated_file_positioned_error():
    data = write_edf(ramp_recording())
    with pytest.raises(EdfParseError) as e:
        parse_edf(data[:-3])
    assert e.value.offset == 512 + 16
    with pytest.raises(EdfParseError) as e:
        parse_edf(data[:100])
    assert e.value.offset == 100


def test_header_length_mismatch():
    data = bytearray(write_edf(ramp_recording()))
    data[184:192] = b"768     "
    with pytest.raises(EdfParseError) as e:
        parse_edf(bytes(data))
    assert e.value.offset == 184


def test_trailing_bytes():
    data = write_edf(ramp_recording()) + b"\x00\x00"
    with pytest.raises(EdfParseError, match="mismatch"):
        parse_edf(data)


def test_unknown_record_count():
    data = bytearray(write_edf(ramp_recording()))
    data[236:244] = b"-1      "
    assert parse_edf(bytes(data)).n_records == 2
