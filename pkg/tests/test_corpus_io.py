import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.io import wavfile

from vadosd.corpus_io import (
    AudioClip,
    CorpusError,
    DatasetManifest,
    ManifestEntry,
    SpeakerSegment,
    classes_from_counts,
    decisions_to_segments,
    format_rttm,
    load_audio,
    load_manifest,
    load_recording,
    num_frames,
    parse_rttm_text,
    rasterize_counts,
    rasterize_labels,
    save_manifest,
    slice_windows,
    write_audio,
    write_rttm,
)


# --- audio -------------------------------------------------------------------


def test_pcm16_mono(tmp_path):
    x = (np.sin(np.arange(32000) / 10) * 20000).astype(np.int16)
    wavfile.write(tmp_path / "a.wav", 16000, x)
    clip = load_audio(tmp_path / "a.wav")
    assert clip.num_channels == 1 and clip.num_samples == 32000
    np.testing.assert_allclose(clip.channels[0], x / 32768.0, atol=1e-7)
    assert clip.recording_id == "a"


def test_six_channel_float(tmp_path):
    x = np.random.default_rng(0).uniform(-0.5, 0.5, (1000, 6)).astype(np.float32)
    wavfile.write(tmp_path / "b.wav", 16000, x)
    clip = load_audio(tmp_path / "b.wav")
    assert clip.num_channels == 6
    np.testing.assert_array_equal(clip.channels, x.T)


def test_wrong_rate_rejected(tmp_path):
    wavfile.write(tmp_path / "c.wav", 8000, np.zeros(800, np.int16))
    with pytest.raises(CorpusError, match="unsupported sample rate"):
        load_audio(tmp_path / "c.wav")


def test_wrong_codec_rejected(tmp_path):
    wavfile.write(tmp_path / "d.wav", 16000, np.zeros(800, np.int32))
    with pytest.raises(CorpusError, match="sample format"):
        load_audio(tmp_path / "d.wav")


@pytest.mark.parametrize("pcm16", [False, True])
def test_audio_write_read_roundtrip(tmp_path, pcm16):
    x = np.random.default_rng(1).uniform(-0.9, 0.9, (2, 500)).astype(np.float32)
    write_audio(tmp_path / "e.wav", AudioClip("e", x), pcm16=pcm16)
    back = load_audio(tmp_path / "e.wav").channels
    np.testing.assert_allclose(back, x, atol=(0.5 / 32768 + 1e-9) if pcm16 else 0)


def test_clip_validation():
    with pytest.raises(CorpusError):
        AudioClip("x", np.zeros((1, 0)))
    with pytest.raises(CorpusError):
        AudioClip("x", np.array([[0.0, np.nan]]))
    with pytest.raises(CorpusError):
        AudioClip("x", np.zeros((1, 10)), sample_rate=8000)


# --- RTTM ----------------------------------------------------------------------


def test_rttm_fields():
    segs = parse_rttm_text("SPEAKER rec1 1 10.00 5.00 <NA> <NA> spkA <NA> <NA>\n")
    assert segs == [SpeakerSegment("rec1", "spkA", 10.0, 5.0)]


def test_rttm_empty():
    assert parse_rttm_text("") == []


@pytest.mark.parametrize(
    "line",
    ["SPEAKER rec1 1 0.00 -1.0 <NA> <NA> a <NA> <NA>", "SPEAKER rec1 1 0.0 x <NA> <NA> a <NA> <NA>", "SPEAKER rec1 1 0.0", "LEXEME r 1 0 1 a b c d"],
)
def test_rttm_errors_carry_line_number(line):
    with pytest.raises(CorpusError, match=r":2:"):
        parse_rttm_text("SPEAKER r 1 0 1 <NA> <NA> s <NA> <NA>\n" + line)


def test_rttm_roundtrip(tmp_path):
    segs = [SpeakerSegment("r", "a", 0.5, 1.25), SpeakerSegment("r", "b", 2.0, 0.01)]
    write_rttm(tmp_path / "x.rttm", segs)
    assert parse_rttm_text((tmp_path / "x.rttm").read_text()) == segs
    assert format_rttm(segs).count("\n") == 2


# --- labels ------------------------------------------------------------------------


def test_single_segment_frames():
    lab = rasterize_labels([SpeakerSegment("r", "a", 0.10, 0.05)], 0.30)
    assert len(lab.classes) == 30
    assert np.flatnonzero(lab.classes).tolist() == [10, 11, 12, 13, 14]


def test_full_overlap_and_silence():
    segs = [SpeakerSegment("r", "a", 0.0, 1.0), SpeakerSegment("r", "b", 0.0, 1.0)]
    assert np.all(rasterize_labels(segs, 1.0).classes == 2)
    assert np.all(rasterize_labels([], 1.0).classes == 0)
    assert len(rasterize_labels([], 1.0).classes) == 100


def test_frame_count_rounding():
    assert num_frames(0.3) == 30
    assert num_frames(1.001) == 101


def test_mixed_recordings_rejected():
    with pytest.raises(CorpusError):
        rasterize_labels([SpeakerSegment("a", "x", 0, 1), SpeakerSegment("b", "x", 0, 1)], 2)


segments_strategy = st.lists(
    st.tuples(st.integers(0, 400), st.integers(1, 200), st.sampled_from("abc")), max_size=12
)


@given(segments_strategy)
def test_rasterize_matches_bruteforce(raw):
    segs = [SpeakerSegment("r", s, a / 100.0 + 0.003, d / 100.0) for a, d, s in raw]
    length = 7.0
    counts = rasterize_counts(segs, length)
    centers = (np.arange(len(counts)) + 0.5) / 100
    brute = np.array([sum(s.onset <= c < s.offset for s in segs) for c in centers])
    np.testing.assert_array_equal(counts, brute)
    lab = rasterize_labels(segs, length)
    assert np.all(lab.osd <= lab.vad)
    np.testing.assert_array_equal(lab.classes, np.minimum(brute, 2))


@given(st.lists(st.booleans(), max_size=300))
def test_segments_roundtrip_to_decisions(dec):
    dec = np.array(dec, dtype=bool)
    segs = decisions_to_segments(dec, "r", "S")
    back = rasterize_counts(segs, len(dec) / 100) > 0
    np.testing.assert_array_equal(back[: len(dec)], dec)


def test_gap_closing_example():
    segs = decisions_to_segments(np.array([0, 1, 1, 0, 1]), "r", "S", gap_close=0.010)
    assert len(segs) == 1
    assert segs[0].onset == pytest.approx(0.01) and segs[0].offset == pytest.approx(0.05)
    assert len(decisions_to_segments(np.array([0, 1, 1, 0, 1]), "r", "S")) == 2


def test_min_duration_drops_short_runs():
    segs = decisions_to_segments(np.array([1, 0, 0, 1, 1, 1]), "r", "S", min_duration=0.02)
    assert [(round(s.onset, 3), round(s.duration, 3)) for s in segs] == [(0.03, 0.03)]


# --- windows -------------------------------------------------------------------


def _clip(seconds, m=1):
    return AudioClip("r", np.random.default_rng(0).uniform(-0.1, 0.1, (m, int(seconds * 16000))))


def test_windows_even():
    ws = slice_windows(_clip(4), np.ones(400, np.int16), 2.0, 2.0)
    assert len(ws) == 2
    assert all(w.audio.shape == (1, 32000) and len(w.counts) == 200 and w.mask.all() for w in ws)


def test_windows_padded_tail():
    clip = _clip(3)
    ws = slice_windows(clip, np.ones(300, np.int16), 2.0, 2.0)
    assert len(ws) == 2
    assert ws[1].mask.sum() == 100 and not ws[1].mask[100:].any()
    assert np.all(ws[1].counts[100:] == 0) and np.all(ws[1].audio[:, 16000:] == 0)
    np.testing.assert_array_equal(ws[1].audio[:, :16000], clip.channels[:, 32000:])


def test_window_exact_length():
    ws = slice_windows(_clip(2), np.zeros(200, np.int16))
    assert len(ws) == 1 and ws[0].mask.all()


def test_window_validation():
    with pytest.raises(CorpusError):
        slice_windows(_clip(1), np.zeros(100), window=0.005)
    with pytest.raises(CorpusError):
        slice_windows(_clip(1), np.zeros(100), window=1.0, hop=2.0)


@given(st.integers(1, 900), st.sampled_from([0.5, 1.0, 2.0]))
def test_windows_reassemble_labels(n, hop):
    counts = np.random.default_rng(n).integers(0, 4, n).astype(np.int16)
    clip = AudioClip("r", np.zeros((1, n * 160), np.float32))
    ws = slice_windows(clip, counts, 2.0, 2.0)
    np.testing.assert_array_equal(np.concatenate([w.counts[w.mask] for w in ws]), counts)
    np.testing.assert_array_equal(classes_from_counts(counts), np.minimum(counts, 2))
    # overlapping windows cover every frame and agree where they overlap
    for w in slice_windows(clip, counts, 2.0, hop):
        np.testing.assert_array_equal(w.counts[w.mask], counts[w.start_frame : w.start_frame + w.mask.sum()])


# --- manifests -----------------------------------------------------------------


def _write_pair(root, rid, segs=()):
    write_audio(root / f"{rid}.wav", AudioClip(rid, np.zeros((1, 16000), np.float32)))
    write_rttm(root / f"{rid}.rttm", segs)


def test_manifest_formats(tmp_path):
    _write_pair(tmp_path, "a", [SpeakerSegment("a", "s", 0.1, 0.2)])
    _write_pair(tmp_path, "b")
    (tmp_path / "m.txt").write_text("# comment\na a.wav a.rttm train dom1\nb b.wav b.rttm dev\n")
    m = load_manifest(tmp_path / "m.txt")
    assert [e.recording_id for e in m.partition("train")] == ["a"]
    assert m.entries[0].domain == "dom1" and m.entries[1].domain == "default"
    (tmp_path / "m.json").write_text(json.dumps([{"recording_id": "a", "audio": "a.wav", "rttm": "a.rttm", "partition": "eval", "room": "r1"}]))
    mj = load_manifest(tmp_path / "m.json")
    assert mj.entries[0].extra == {"room": "r1"}
    save_manifest(tmp_path / "m.jsonl", m)
    assert load_manifest(tmp_path / "m.jsonl").entries == m.entries
    clip, counts = load_recording(m, m.entries[0])
    assert len(counts) == 100 and counts.sum() == 20


def test_manifest_errors(tmp_path):
    _write_pair(tmp_path, "a")
    (tmp_path / "m.txt").write_text("a a.wav missing.rttm train\n")
    with pytest.raises(CorpusError, match="missing"):
        load_manifest(tmp_path / "m.txt")
    with pytest.raises(CorpusError, match="duplicate"):
        DatasetManifest([ManifestEntry("a", "a.wav", "a.rttm", "train")] * 2)
    with pytest.raises(CorpusError, match="partition"):
        DatasetManifest([ManifestEntry("a", "a.wav", "a.rttm", "test")])
