"""Audio, RTTM references, frame labels, training windows and manifests."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
FRAME_RATE = 100
HOP_SAMPLES = SAMPLE_RATE // FRAME_RATE
PARTITIONS = ("train", "dev", "eval")


class CorpusError(ValueError):
    """Malformed audio, reference or manifest input."""


@dataclass
class AudioClip:
    recording_id: str
    channels: np.ndarray  # M x N, float32 in [-1, 1]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.channels = np.atleast_2d(np.asarray(self.channels, dtype=np.float32))
        if self.sample_rate != SAMPLE_RATE:
            raise CorpusError(f"unsupported sample rate {self.sample_rate} Hz (expected {SAMPLE_RATE})")
        if self.channels.ndim != 2 or self.channels.shape[0] < 1 or self.channels.shape[1] < 1:
            raise CorpusError(f"audio must be a non-empty M x N matrix, got shape {self.channels.shape}")
        if not np.all(np.isfinite(self.channels)):
            raise CorpusError(f"{self.recording_id}: non-finite samples")

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def num_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass(frozen=True)
class SpeakerSegment:
    recording_id: str
    speaker_id: str
    onset: float
    duration: float

    @property
    def offset(self) -> float:
        return self.onset + self.duration


@dataclass
class FrameLabels:
    recording_id: str
    classes: np.ndarray  # int8, values in {0, 1, 2}
    frame_rate: int = FRAME_RATE

    @property
    def vad(self) -> np.ndarray:
        return self.classes >= 1

    @property
    def osd(self) -> np.ndarray:
        return self.classes == 2


@dataclass(frozen=True)
class ManifestEntry:
    recording_id: str
    audio: str
    rttm: str
    partition: str
    domain: str = "default"
    embeddings: str | None = None
    extra: dict = field(default_factory=dict, compare=False)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.recording_id in seen:
                raise CorpusError(f"duplicate recording_id {e.recording_id!r} in manifest")
            if e.partition not in PARTITIONS:
                raise CorpusError(f"{e.recording_id}: unknown partition {e.partition!r}")
            seen.add(e.recording_id)

    def partition(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.partition == name]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    def fingerprint(self, partition: str | None = None) -> str:
        ids = sorted(e.recording_id for e in self.entries if partition is None or e.partition == partition)
        return f"{len(ids)}:" + ",".join(ids)


# --- audio -----------------------------------------------------------------


def load_audio(path: str | Path, recording_id: str | None = None) -> AudioClip:
    """Read a PCM16 or float32 WAV at 16 kHz into an ``M x N`` float32 matrix."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise CorpusError(f"{path}: unsupported WAV codec ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise CorpusError(f"{path}: unsupported sample rate {rate} Hz (expected {SAMPLE_RATE})")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise CorpusError(f"{path}: unsupported sample format {data.dtype} (PCM16 or float32 only)")
    samples = samples.reshape(len(samples), -1).T
    return AudioClip(recording_id or path.stem, np.clip(samples, -1.0, 1.0))


def write_audio(path: str | Path, clip: AudioClip, pcm16: bool = False) -> None:
    data = clip.channels.T
    if pcm16:
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = data.astype(np.float32)
    wavfile.write(Path(path), SAMPLE_RATE, data[:, 0] if data.shape[1] == 1 else data)


# --- RTTM ------------------------------------------------------------------


def parse_rttm(path: str | Path) -> list[SpeakerSegment]:
    text = Path(path).read_text()
    return parse_rttm_text(text, source=str(path))


def parse_rttm_text(text: str, source: str = "<rttm>") -> list[SpeakerSegment]:
    segments = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        fields = stripped.split()
        if len(fields) < 9 or fields[0] != "SPEAKER":
            raise CorpusError(f"{source}:{lineno}: expected a SPEAKER line with at least 9 fields")
        try:
            onset, duration = float(fields[3]), float(fields[4])
        except ValueError as exc:
            raise CorpusError(f"{source}:{lineno}: non-numeric onset/duration") from exc
        if onset < 0 or duration <= 0 or not math.isfinite(onset + duration):
            raise CorpusError(f"{source}:{lineno}: invalid segment onset={onset} duration={duration}")
        segments.append(SpeakerSegment(fields[1], fields[7], onset, duration))
    return segments


def format_rttm(segments: Iterable[SpeakerSegment]) -> str:
    return "".join(
        f"SPEAKER {s.recording_id} 1 {s.onset:.3f} {s.duration:.3f} <NA> <NA> {s.speaker_id} <NA> <NA>\n"
        for s in segments
    )


def write_rttm(path: str | Path, segments: Iterable[SpeakerSegment]) -> None:
    Path(path).write_text(format_rttm(segments))


# --- frame labels ----------------------------------------------------------


def num_frames(length: float) -> int:
    # round first so 0.3 s gives 30 frames, not ceil(30.000000000000004)
    return int(math.ceil(round(length * FRAME_RATE, 6)))


def frame_centers(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / FRAME_RATE


def rasterize_counts(segments: Sequence[SpeakerSegment], length: float) -> np.ndarray:
    """Per-frame number of segments containing the frame midpoint."""
    n = num_frames(length)
    centers = frame_centers(n)
    diff = np.zeros(n + 1, dtype=np.int32)
    for s in segments:
        start = np.searchsorted(centers, s.onset, side="left")
        stop = np.searchsorted(centers, s.offset, side="left")
        diff[start] += 1
        diff[stop] -= 1
    return np.cumsum(diff[:-1]).astype(np.int16)


def rasterize_labels(segments: Sequence[SpeakerSegment], length: float) -> FrameLabels:
    ids = {s.recording_id for s in segments}
    if len(ids) > 1:
        raise CorpusError(f"segments from several recordings: {sorted(ids)}")
    if segments and max(s.offset for s in segments) > length + 1e-9:
        raise CorpusError(f"segment extends beyond recording length {length}")
    counts = rasterize_counts(segments, length)
    rec = ids.pop() if ids else ""
    return FrameLabels(rec, np.minimum(counts, 2).astype(np.int8))


def classes_from_counts(counts: np.ndarray) -> np.ndarray:
    return np.minimum(counts, 2).astype(np.int8)


def decisions_to_segments(
    decisions: np.ndarray,
    recording_id: str,
    label: str,
    gap_close: float = 0.0,
    min_duration: float = 0.0,
) -> list[SpeakerSegment]:
    """Merge runs of positive frames into segments.

    Gaps of at most ``gap_close`` seconds between segments are bridged, then
    segments shorter than ``min_duration`` are dropped.
    """
    d = np.asarray(decisions).astype(bool)
    padded = np.concatenate([[False], d, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    runs = [[int(a), int(b)] for a, b in zip(edges[::2], edges[1::2])]
    gap_frames = gap_close * FRAME_RATE + 1e-6
    merged: list[list[int]] = []
    for run in runs:
        if merged and run[0] - merged[-1][1] <= gap_frames:
            merged[-1][1] = run[1]
        else:
            merged.append(run)
    out = []
    for start, stop in merged:
        dur = (stop - start) / FRAME_RATE
        if dur + 1e-9 < min_duration:
            continue
        out.append(SpeakerSegment(recording_id, label, start / FRAME_RATE, dur))
    return out


# --- windows ---------------------------------------------------------------


@dataclass
class Window:
    recording_id: str
    start_frame: int
    audio: np.ndarray  # M x window samples
    counts: np.ndarray  # per-frame speaker counts, 0 on padded frames
    mask: np.ndarray  # True on real frames

    @property
    def classes(self) -> np.ndarray:
        return classes_from_counts(self.counts)


def window_starts(total_frames: int, window_frames: int, hop_frames: int) -> list[int]:
    n = 1 + max(0, math.ceil((total_frames - window_frames) / hop_frames))
    return [i * hop_frames for i in range(n)]


def slice_windows(
    clip: AudioClip,
    labels: FrameLabels | np.ndarray,
    window: float = 2.0,
    hop: float | None = None,
) -> list[Window]:
    """Cut a recording into fixed windows of audio plus frame labels.

    ``labels`` may be FrameLabels or a raw per-frame speaker-count array. The
    last window is zero-padded; padded frames carry count 0 and mask False.
    """
    hop = window if hop is None else hop
    win_frames = round(window * FRAME_RATE)
    hop_frames = round(hop * FRAME_RATE)
    if win_frames < 1 or abs(win_frames - window * FRAME_RATE) > 1e-6:
        raise CorpusError(f"window {window} s must be a positive multiple of one 10 ms frame")
    if hop_frames < 1 or abs(hop_frames - hop * FRAME_RATE) > 1e-6:
        raise CorpusError(f"hop {hop} s must be a positive multiple of one 10 ms frame")
    if hop_frames > win_frames:
        raise CorpusError(f"hop {hop} s longer than window {window} s")
    counts = labels.classes if isinstance(labels, FrameLabels) else np.asarray(labels)
    total = len(counts)
    win_samples = win_frames * HOP_SAMPLES
    out = []
    for start in window_starts(total, win_frames, hop_frames):
        c = np.zeros(win_frames, dtype=np.int16)
        m = np.zeros(win_frames, dtype=bool)
        seg = counts[start : start + win_frames]
        c[: len(seg)] = seg
        m[: len(seg)] = True
        a = np.zeros((clip.num_channels, win_samples), dtype=np.float32)
        chunk = clip.channels[:, start * HOP_SAMPLES : start * HOP_SAMPLES + win_samples]
        a[:, : chunk.shape[1]] = chunk
        out.append(Window(clip.recording_id, start, a, c, m))
    return out


# --- manifests -------------------------------------------------------------

_KNOWN_KEYS = ("recording_id", "audio", "rttm", "partition", "domain", "embeddings")


def _entry_from_dict(d: dict) -> ManifestEntry:
    missing = [k for k in ("recording_id", "audio", "rttm", "partition") if k not in d]
    if missing:
        raise CorpusError(f"manifest entry missing keys {missing}: {d}")
    extra = {k: v for k, v in d.items() if k not in _KNOWN_KEYS}
    return ManifestEntry(
        str(d["recording_id"]), str(d["audio"]), str(d["rttm"]), str(d["partition"]),
        str(d.get("domain", "default")), d.get("embeddings"), extra,
    )


def _entry_to_dict(e: ManifestEntry) -> dict:
    d = {"recording_id": e.recording_id, "audio": e.audio, "rttm": e.rttm, "partition": e.partition, "domain": e.domain}
    if e.embeddings:
        d["embeddings"] = e.embeddings
    d.update(e.extra)
    return d


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a manifest as JSON lines, a JSON list, or whitespace-separated text.

    Text lines are ``recording_id audio rttm partition [domain]``. Relative
    paths resolve against the manifest's directory.
    """
    path = Path(path)
    text = path.read_text()
    stripped = text.lstrip()
    entries = []
    if stripped.startswith("["):
        entries = [_entry_from_dict(d) for d in json.loads(text)]
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("{"):
                entries.append(_entry_from_dict(json.loads(line)))
            else:
                parts = line.split()
                if len(parts) not in (4, 5):
                    raise CorpusError(f"{path}:{lineno}: expected 'recording_id audio rttm partition [domain]'")
                entries.append(ManifestEntry(*parts))
    manifest = DatasetManifest(entries, root=path.parent)
    for e in entries:
        for p in (e.audio, e.rttm) + ((e.embeddings,) if e.embeddings else ()):
            if not manifest.resolve(p).exists():
                raise CorpusError(f"{path}: {e.recording_id}: missing file {p}")
    return manifest


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    Path(path).write_text("".join(json.dumps(_entry_to_dict(e)) + "\n" for e in manifest.entries))


def load_recording(manifest: DatasetManifest, entry: ManifestEntry) -> tuple[AudioClip, np.ndarray]:
    """Load one manifest entry as (audio, per-frame speaker counts)."""
    clip = load_audio(manifest.resolve(entry.audio), entry.recording_id)
    segments = parse_rttm(manifest.resolve(entry.rttm))
    ids = {s.recording_id for s in segments}
    if len(ids) > 1 or entry.recording_id in ids:
        segments = [s for s in segments if s.recording_id == entry.recording_id]
    counts = rasterize_counts(segments, clip.duration)
    return clip, counts
