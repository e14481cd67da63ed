"""Recordings -> model inputs, and window-by-window inference with stitching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapter import WINDOW_ROWS, load_embeddings, pad_rows, surrogate_embeddings
from .corpus_io import (
    FRAME_RATE,
    AudioClip,
    DatasetManifest,
    ManifestEntry,
    Window,
    load_recording,
    parse_rttm,
    slice_windows,
)
from .dsp import FrontendConfig, NormStats, log_mel, mvn, mvn_stats, stft
from .model import ModelInput, Segmenter

WINDOW_SECONDS = 2.0


@dataclass
class Recording:
    recording_id: str
    clip: AudioClip
    counts: np.ndarray  # per-frame speaker counts
    domain: str = "default"
    speakers: frozenset[str] = frozenset()
    speaker_rooms: dict[str, str] = field(default_factory=dict)
    speaker_activity: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    norm: NormStats | None = None
    embeddings: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_frames(self) -> int:
        return len(self.counts)


def _speaker_activity(segments, n_frames: int) -> dict[str, np.ndarray]:
    from .corpus_io import rasterize_counts

    by_spk: dict[str, list] = {}
    for s in segments:
        by_spk.setdefault(s.speaker_id, []).append(s)
    return {k: rasterize_counts(v, n_frames / FRAME_RATE)[:n_frames] > 0 for k, v in sorted(by_spk.items())}


def load_partition(manifest: DatasetManifest, partition: str, feature_path: str, frontend: FrontendConfig = FrontendConfig()) -> list[Recording]:
    return [load_entry(manifest, e, feature_path, frontend) for e in manifest.partition(partition)]


def load_entry(manifest: DatasetManifest, entry: ManifestEntry, feature_path: str, frontend: FrontendConfig = FrontendConfig()) -> Recording:
    clip, counts = load_recording(manifest, entry)
    segments = parse_rttm(manifest.resolve(entry.rttm))
    ids = {s.recording_id for s in segments}
    if len(ids) > 1 or entry.recording_id in ids:
        segments = [s for s in segments if s.recording_id == entry.recording_id]
    rec = Recording(
        entry.recording_id, clip, counts, entry.domain,
        frozenset(s.speaker_id for s in segments),
        dict(entry.extra.get("speaker_rooms", {})),
        _speaker_activity(segments, len(counts)),
    )
    if feature_path == "embedding":
        emb = load_embeddings(manifest.resolve(entry.embeddings)).matrix if entry.embeddings else surrogate_embeddings(clip).matrix
        rec.embeddings = emb
    prepare(rec, feature_path, frontend)
    return rec


def prepare(rec: Recording, feature_path: str, frontend: FrontendConfig = FrontendConfig()) -> Recording:
    """Attach per-recording normalization statistics for the chosen feature path."""
    if feature_path == "embedding":
        if rec.embeddings is None:
            rec.embeddings = surrogate_embeddings(rec.clip).matrix
        rec.embeddings = mvn(rec.embeddings).astype(np.float32) if len(rec.embeddings) >= 2 else rec.embeddings
        return rec
    if feature_path == "sacc":
        # uniform channel weights stand in for the learned ones when estimating statistics
        mag = np.abs(stft(rec.clip.channels, frontend)).mean(axis=0)
        rec.norm = mvn_stats(log_mel(mag, frontend))
    else:
        rec.norm = mvn_stats(batch_logmel(rec.clip.channels[None], frontend)[0])
    return rec


def batch_logmel(audio: np.ndarray, frontend: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """``B x M x N`` audio -> ``B x T x F`` log-mel of the channel-mean signal."""
    mono = audio.mean(axis=1)
    return log_mel(np.abs(stft(mono, frontend)), frontend)


def build_input(
    model: Segmenter,
    audio: np.ndarray | None,
    norms: list[NormStats | None],
    embedding_rows: list[np.ndarray] | None = None,
) -> ModelInput:
    """Assemble a batch for the model's feature path.

    ``audio`` is ``B x M x N`` window audio; ``embedding_rows`` holds one
    ``<=99 x D`` matrix per window for the embedding path.
    """
    cfg = model.cfg
    if cfg.feature_path == "embedding":
        rows = np.stack([pad_rows(r)[0] for r in embedding_rows])
        return ModelInput(rows)
    fe = cfg.frontend
    if cfg.feature_path == "logmel":
        feats = batch_logmel(audio, fe)
        mean = np.stack([n.mean for n in norms])[:, None, :]
        std = np.stack([n.std for n in norms])[:, None, :]
        return ModelInput(((feats - mean) / std).astype(np.float32))
    mag = np.abs(stft(audio.reshape(-1, audio.shape[-1]), fe))
    B, M = audio.shape[:2]
    mag = mag.reshape(B, M, mag.shape[1], mag.shape[2]).transpose(0, 2, 1, 3)
    return ModelInput(
        np.ascontiguousarray(mag, dtype=np.float32),
        np.stack([n.mean for n in norms]).astype(np.float32),
        np.stack([n.std for n in norms]).astype(np.float32),
    )


def window_embedding_rows(rec: Recording, start_frame: int) -> np.ndarray:
    row = start_frame // 2
    return rec.embeddings[row : row + WINDOW_ROWS]


def recording_windows(rec: Recording, hop: float = WINDOW_SECONDS) -> list[Window]:
    return slice_windows(rec.clip, rec.counts, WINDOW_SECONDS, hop)


@dataclass
class Prediction:
    recording_id: str
    posteriors: np.ndarray  # T x C
    weights: np.ndarray | None = None  # T x M SACC weights


def predict(model: Segmenter, rec: Recording, hop: float = 0.5, batch_size: int = 32) -> Prediction:
    """Posteriors for a whole recording, averaging overlapping windows frame by frame."""
    windows = recording_windows(rec, hop)
    T = rec.num_frames
    C = model.cfg.head.num_classes
    acc = np.zeros((T, C))
    hits = np.zeros(T)
    wacc = None
    for i in range(0, len(windows), batch_size):
        chunk = windows[i : i + batch_size]
        if model.cfg.feature_path == "embedding":
            batch = build_input(model, None, [], [window_embedding_rows(rec, w.start_frame) for w in chunk])
        else:
            batch = build_input(model, np.stack([w.audio for w in chunk]), [rec.norm] * len(chunk))
        post, weights = model.posteriors(batch)
        for j, w in enumerate(chunk):
            n = int(w.mask.sum())
            sl = slice(w.start_frame, w.start_frame + n)
            acc[sl] += post[j, :n]
            hits[sl] += 1
            if weights is not None:
                if wacc is None:
                    wacc = np.zeros((T, weights.shape[-1]))
                wacc[sl] += weights[j, :n]
    post = acc / hits[:, None]
    return Prediction(rec.recording_id, post, None if wacc is None else wacc / hits[:, None])


def recording_from_clip(clip: AudioClip, feature_path: str, counts: np.ndarray | None = None, frontend: FrontendConfig = FrontendConfig()) -> Recording:
    """Wrap raw audio (no reference) for inference."""
    from .corpus_io import num_frames

    if counts is None:
        counts = np.zeros(num_frames(clip.duration), dtype=np.int16)
    return prepare(Recording(clip.recording_id, clip, counts), feature_path, frontend)
