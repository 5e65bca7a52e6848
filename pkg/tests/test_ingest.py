import struct

import numpy as np
import pytest

from helpers.errors import FormatError, LoadError, ParseError, ValidationError
from helpers.ingest import (
    AudioBuffer,
    LipIndexMap,
    SegmentInterval,
    SegmentTier,
    deserialize_model,
    gop_key,
    parse_segments_csv,
    parse_textgrid,
    read_gop_csv,
    read_landmarks_csv,
    read_wav,
    serialize_gop_csv,
    serialize_landmarks_csv,
    serialize_model,
    serialize_textgrid,
    tier_by_name,
    write_wav,
)
from helpers.vgan import VganConfig, init_params, predict_batch

TEXTGRID = '''File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 1.5
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "IntervalTier"
        name = "syllables"
        xmin = 0
        xmax = 1.5
        intervals: size = 3
        intervals [1]:
            xmin = 0
            xmax = 0.5
            text = ""
        intervals [2]:
            xmin = 0.5
            xmax = 1.0
            text = "ba ""x"""
        intervals [3]:
            xmin = 1.0
            xmax = 1.5
            text = "two
lines"
    item [2]:
        class = "TextTier"
        name = "events"
        xmin = 0
        xmax = 1.5
        points: size = 1
        points [1]:
            number = 0.7
            mark = "click"
'''


def test_wav_roundtrip(tmp_path):
    path = str(tmp_path / "a.wav")
    audio = AudioBuffer(0.25 * np.sin(np.linspace(0, 100, 16000)), 16000)
    write_wav(path, audio)
    back = read_wav(path)
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - audio.samples)) <= 1 / 32768


def _riff(fmt, data=b"\x00\x00" * 4, declared=None):
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data) if declared is None else declared) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_wav_format_errors(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"NOPE" * 4)
    with pytest.raises(FormatError, match="RIFF"):
        read_wav(str(path))

    float_fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
    path.write_bytes(_riff(float_fmt))
    with pytest.raises(FormatError, match="PCM 16-bit"):
        read_wav(str(path))

    pcm = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    path.write_bytes(_riff(pcm, declared=1000))
    with pytest.raises(FormatError, match="truncated 'data'"):
        read_wav(str(path))


def test_audio_buffer_validation():
    with pytest.raises(ValidationError):
        AudioBuffer(np.zeros(10), 8000)
    with pytest.raises(ValidationError):
        AudioBuffer(np.array([0.0, np.nan]), 16000)
    audio = AudioBuffer(np.arange(16000) / 16000.0, 16000)
    part = audio.segment(0.25, 0.5)
    assert len(part.samples) == 4000
    assert part.samples[0] == 0.25
    assert len(audio.segment(0.9, 0.1).samples) == 0


def test_parse_textgrid():
    tiers = parse_textgrid(TEXTGRID)
    assert [tier.name for tier in tiers] == ["syllables"]
    tier = tiers[0]
    assert [i.label for i in tier.intervals] == ["", 'ba "x"', "two\nlines"]
    assert [i.label for i in tier.labelled()] == ['ba "x"', "two\nlines"]
    assert tier.xmax == 1.5


def test_parse_textgrid_warns_on_point_tier(logger, caplog):
    parse_textgrid(TEXTGRID, logger)
    assert "point tier 'events'" in caplog.text


def test_textgrid_roundtrip():
    tiers = parse_textgrid(TEXTGRID)
    again = parse_textgrid(serialize_textgrid(tiers, 0.0, 1.5))
    assert again == tiers


def test_textgrid_count_mismatch_and_bad_numbers():
    with pytest.raises(ParseError, match="interval count mismatch"):
        parse_textgrid(TEXTGRID.replace("intervals: size = 3", "intervals: size = 4", 1))
    with pytest.raises(ParseError, match="interval count mismatch"):
        parse_textgrid(TEXTGRID.replace("intervals: size = 3", "intervals: size = 2", 1))
    with pytest.raises(ParseError) as err:
        parse_textgrid(TEXTGRID.replace("xmax = 0.5", "xmax = half", 1))
    assert err.value.line == 17
    with pytest.raises(ParseError, match="unsupported file type"):
        parse_textgrid(TEXTGRID.replace("ooTextFile", "binary", 1))


def test_segment_tier_rejects_overlap():
    with pytest.raises(ValidationError):
        SegmentTier("t", (SegmentInterval(0.0, 0.6, "a"), SegmentInterval(0.5, 1.0, "b")))
    with pytest.raises(ValidationError):
        SegmentTier("t", (SegmentInterval(0.5, 0.5, "a"),))


def test_tier_by_name():
    tiers = parse_textgrid(TEXTGRID)
    assert tier_by_name(tiers, "syllables") is tiers[0]
    with pytest.raises(ValidationError, match="no tier named 'vowels'"):
        tier_by_name(tiers, "vowels")


def test_segments_csv():
    tier = parse_segments_csv("start,end,label\n1.0,1.5,bo\n0.0,0.4,ba\n", "syllables")
    assert [i.label for i in tier.intervals] == ["ba", "bo"]
    with pytest.raises(ParseError):
        parse_segments_csv("begin,end,label\n0,1,a\n")
    with pytest.raises(ValidationError, match="row 2 overlaps row 1"):
        parse_segments_csv("start,end,label\n0.0,0.5,a\n0.4,0.8,b\n")
    with pytest.raises(ValidationError, match="start"):
        parse_segments_csv("start,end,label\n0.5,0.5,a\n")


def _landmark_text(n_frames=3, n_points=68):
    header = "frame,t," + ",".join(f"x{i},y{i}" for i in range(n_points))
    rows = [f"{k},{k / 30}," + ",".join(f"{i}.0,{k}.0" for i in range(n_points)) for k in range(n_frames)]
    return "\n".join([header, *rows]) + "\n"


def test_read_landmarks():
    seq = read_landmarks_csv(_landmark_text())
    assert seq.points.shape == (3, 68, 2)
    assert seq.fps == pytest.approx(30.0)
    assert seq.points[2, 5].tolist() == [5.0, 2.0]
    again = read_landmarks_csv(serialize_landmarks_csv(seq))
    assert np.array_equal(again.points, seq.points)


def test_landmark_errors():
    text = _landmark_text()
    lines = text.splitlines()
    ragged = "\n".join(lines[:2] + [lines[2].rsplit(",", 1)[0]] + lines[3:]) + "\n"
    with pytest.raises(ParseError, match="ragged"):
        read_landmarks_csv(ragged)
    with pytest.raises(ParseError, match="at least 2 frames"):
        read_landmarks_csv(_landmark_text(1))
    with pytest.raises(ValidationError, match="index map references point"):
        read_landmarks_csv(_landmark_text(3, 20))
    backwards = text.replace("\n2,0.06666666666666667,", "\n2,0.01,")
    with pytest.raises(ParseError, match="not strictly increasing"):
        read_landmarks_csv(backwards)


def test_lip_index_map_validation():
    with pytest.raises(ValidationError):
        LipIndexMap(inner_upper=(61, 62), inner_lower=(67,))
    assert 48 in LipIndexMap().indices()


def test_gop_sidecar():
    text = serialize_gop_csv([("R1", 0.15, 0.45, -0.5, -0.9)])
    table = read_gop_csv(text)
    assert table[gop_key("R1", 0.1500001, 0.45)] == (-0.5, -0.9)
    with pytest.raises(ParseError):
        read_gop_csv("recording_id,start\nR1,0\n")


def test_model_roundtrip_is_bit_identical():
    config = VganConfig()
    model = init_params(config, seed=4)
    rng = np.random.default_rng(1)
    papi = rng.normal(size=(3, 6, 20))
    lips = rng.normal(size=(3, 6, 10))
    back = deserialize_model(serialize_model(model))
    assert np.array_equal(predict_batch(back, papi, lips), predict_batch(model, papi, lips))
    assert back.target_kind == model.target_kind


def test_model_document_errors():
    document = serialize_model(init_params(VganConfig(), seed=0))
    with pytest.raises(LoadError, match="unsupported model version"):
        deserialize_model({**document, "version": "vgan-model/0"})
    with pytest.raises(LoadError, match="not valid JSON"):
        deserialize_model("{")
    with pytest.raises(LoadError, match="JSON object, got list"):
        deserialize_model("[1, 2]")
    with pytest.raises(LoadError, match="dims must be a JSON object"):
        deserialize_model({**document, "dims": [6, 20]})
    with pytest.raises(LoadError, match="configuration implies"):
        deserialize_model(document, expected_config=VganConfig(head_dim=16))
    params = dict(document["params"])
    params.pop(sorted(params)[0])
    with pytest.raises(LoadError, match="is missing"):
        deserialize_model({**document, "params": params})
