"""Deterministic synthetic corpora with exact speaker-count ground truth.

Speakers are harmonic tone complexes, each living in its own frequency band,
so 0/1/2-speaker frames are spectrally separable. Turn-taking uses
exponential turn and pause lengths; overlaps are then inserted inside
single-speaker stretches until the requested share of speech frames has two
or more active speakers.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus_io import (
    FRAME_RATE,
    HOP_SAMPLES,
    PARTITIONS,
    SAMPLE_RATE,
    AudioClip,
    DatasetManifest,
    ManifestEntry,
    SpeakerSegment,
    decisions_to_segments,
    save_manifest,
    write_audio,
    write_rttm,
)

NOMINAL_SPEECH_RMS = 0.08


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    num_recordings: int = 10
    recording_length: float = 60.0
    num_speakers: int = 3
    speaker_pool: int = 8
    overlap_ratio: float = 0.15
    channels: int = 1
    leak_gain: float = 0.05  # gain of a speaker on channels outside its room
    noise_snr_db: float = 20.0
    partitions: dict[str, int] | None = None  # e.g. {"train": 20, "dev": 5, "eval": 5}
    domains: tuple[str, ...] = ("synthetic",)
    mean_turn: float = 2.0
    mean_pause: float = 0.8
    mean_overlap: float = 0.8
    id_prefix: str = "rec"

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(self.domains))
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise ValueError(f"overlap_ratio must lie in [0, 1], got {self.overlap_ratio}")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not 1 <= self.num_speakers <= self.speaker_pool:
            raise ValueError(f"num_speakers must lie in [1, speaker_pool={self.speaker_pool}]")
        if self.num_speakers == 1 and self.overlap_ratio > 0:
            raise ValueError("overlap_ratio > 0 is infeasible with a single speaker")
        if self.recording_length <= 0 or self.num_recordings < 1:
            raise ValueError("need at least one recording of positive length")
        if self.partitions is not None:
            unknown = set(self.partitions) - set(PARTITIONS)
            if unknown:
                raise ValueError(f"unknown partitions {sorted(unknown)}")
            if sum(self.partitions.values()) != self.num_recordings:
                raise ValueError("partition counts must sum to num_recordings")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domains"] = list(self.domains)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        return cls(**d)

    def speaker_room(self, speaker: int) -> int:
        return speaker % self.channels

    def partition_of(self, index: int) -> str:
        if self.partitions is None:
            return "train"
        acc = 0
        for name in PARTITIONS:
            acc += self.partitions.get(name, 0)
            if index < acc:
                return name
        raise IndexError(index)


@dataclass
class SynthCorpus:
    spec: SynthSpec
    clips: list[AudioClip]
    segments: list[list[SpeakerSegment]]
    manifest: DatasetManifest
    frame_counts: list[np.ndarray] = field(repr=False)
    speaker_rooms: dict[str, str] = field(default_factory=dict)


def speaker_partials(speaker: int, pool: int) -> np.ndarray:
    """Nominal partial frequencies of pool speaker ``speaker``: 4 partials in a band of its own."""
    centers = np.geomspace(300.0, 6000.0, pool)
    return centers[speaker] * (1.0 + 0.06 * np.arange(4))


def _turns(rng: np.random.Generator, spec: SynthSpec, n_frames: int) -> np.ndarray:
    S = spec.num_speakers
    active = np.zeros((S, n_frames), dtype=bool)
    t = int(rng.exponential(spec.mean_pause * FRAME_RATE))
    prev = -1
    while t < n_frames:
        choices = [s for s in range(S) if s != prev] or [0]
        spk = int(rng.choice(choices))
        dur = max(30, int(rng.exponential(spec.mean_turn * FRAME_RATE)))
        active[spk, t : t + dur] = True
        prev = spk
        t += dur + int(rng.exponential(spec.mean_pause * FRAME_RATE))
    return active


def _insert_overlaps(rng: np.random.Generator, spec: SynthSpec, active: np.ndarray) -> None:
    S, n = active.shape
    count = active.sum(axis=0)
    target = int(round(spec.overlap_ratio * int((count > 0).sum())))
    overlap = int((count >= 2).sum())
    for _ in range(100 * n):
        if overlap >= target:
            break
        single = np.flatnonzero(count == 1)
        if len(single) == 0:
            break
        f = int(rng.choice(single))
        others = [s for s in range(S) if not active[s, f]]
        o = int(rng.choice(others))
        want = min(max(20, int(rng.exponential(spec.mean_overlap * FRAME_RATE))), target - overlap)
        stop = f
        while stop < n and stop - f < want and count[stop] == 1 and not active[o, stop]:
            stop += 1
        active[o, f:stop] = True
        count[f:stop] += 1
        overlap += stop - f


def _render(rng: np.random.Generator, spec: SynthSpec, speakers: np.ndarray, active: np.ndarray) -> np.ndarray:
    n_samples = active.shape[1] * HOP_SAMPLES
    t = np.arange(n_samples) / SAMPLE_RATE
    out = np.zeros((spec.channels, n_samples))
    for row, p in enumerate(speakers):
        freqs = speaker_partials(int(p), spec.speaker_pool) * rng.uniform(0.97, 1.03)
        phases = rng.uniform(0, 2 * np.pi, len(freqs))
        tone = np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]).sum(axis=0)
        mod_rate, mod_phase = rng.uniform(3.0, 6.0), rng.uniform(0, 2 * np.pi)
        tone *= 1.0 - 0.25 * (1.0 + np.sin(2 * np.pi * mod_rate * t + mod_phase))
        tone *= rng.uniform(0.6, 1.5) * NOMINAL_SPEECH_RMS / np.sqrt(np.mean(tone**2))
        gate = np.repeat(active[row], HOP_SAMPLES)
        gains = np.full(spec.channels, spec.leak_gain if spec.channels > 1 else 1.0)
        gains[spec.speaker_room(int(p))] = 1.0
        out += gains[:, None] * (tone * gate)[None, :]
    noise_rms = NOMINAL_SPEECH_RMS * 10.0 ** (-spec.noise_snr_db / 20.0)
    out += noise_rms * rng.standard_normal(out.shape)
    peak = np.abs(out).max()
    if peak > 0.99:
        out *= 0.99 / peak
    return out.astype(np.float32)


def generate(spec: SynthSpec) -> SynthCorpus:
    n_frames = int(round(spec.recording_length * FRAME_RATE))
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.num_recordings)
    clips, segments, counts, entries = [], [], [], []
    rooms: dict[str, str] = {}
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        rec = f"{spec.id_prefix}{i:03d}"
        speakers = np.sort(rng.choice(spec.speaker_pool, spec.num_speakers, replace=False))
        active = _turns(rng, spec, n_frames)
        if spec.overlap_ratio > 0:
            _insert_overlaps(rng, spec, active)
        audio = _render(rng, spec, speakers, active)
        segs = []
        for row, p in enumerate(speakers):
            name = f"spk{int(p)}"
            rooms[name] = f"room{spec.speaker_room(int(p))}"
            segs.extend(decisions_to_segments(active[row], rec, name))
        segs.sort(key=lambda s: (s.onset, s.speaker_id))
        clips.append(AudioClip(rec, audio))
        segments.append(segs)
        counts.append(active.sum(axis=0).astype(np.int16))
        extra = {"speaker_rooms": {f"spk{int(p)}": f"room{spec.speaker_room(int(p))}" for p in speakers}}
        entries.append(
            ManifestEntry(rec, f"{rec}.wav", f"{rec}.rttm", spec.partition_of(i), spec.domains[i % len(spec.domains)], None, extra)
        )
    return SynthCorpus(spec, clips, segments, DatasetManifest(entries), counts, dict(sorted(rooms.items())))


def write_corpus(corpus: SynthCorpus, out_dir: str | Path, embeddings: bool = False) -> Path:
    """Write WAV + RTTM (+ optional embedding files) and ``manifest.jsonl``; returns the manifest path."""
    from .adapter import surrogate_embeddings, write_embeddings

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for clip, segs, e in zip(corpus.clips, corpus.segments, corpus.manifest.entries):
        write_audio(out / e.audio, clip)
        write_rttm(out / e.rttm, segs)
        emb = None
        if embeddings:
            emb = f"{e.recording_id}.emb"
            write_embeddings(out / emb, surrogate_embeddings(clip))
        entries.append(ManifestEntry(e.recording_id, e.audio, e.rttm, e.partition, e.domain, emb, e.extra))
    manifest = DatasetManifest(entries, root=out)
    path = out / "manifest.jsonl"
    save_manifest(path, manifest)
    (out / "synth_spec.json").write_text(json.dumps(corpus.spec.to_dict(), indent=2))
    corpus.manifest = manifest
    return path
