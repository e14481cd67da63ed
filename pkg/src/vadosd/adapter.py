"""Precomputed 20 ms embeddings and the learned 99 -> 200 frame alignment layer."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus_io import SAMPLE_RATE, AudioClip
from .dsp import FrontendConfig, log_mel
from .nn import Module, Tensor, ops, parameter

MAGIC = b"SEGEMB01"
VERSION = 1
EMBED_PERIOD_MS = 20.0
EMBED_WIN = 400  # samples, 25 ms
EMBED_HOP = 320  # samples, 20 ms
WINDOW_ROWS = 99
WINDOW_FRAMES = 200


class EmbeddingFileError(ValueError):
    pass


@dataclass
class EmbeddingFile:
    recording_id: str
    matrix: np.ndarray  # T_e x D float32
    frame_period_ms: float = EMBED_PERIOD_MS

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def dumps_embeddings(emb: EmbeddingFile) -> bytes:
    m = np.ascontiguousarray(emb.matrix, dtype="<f4")
    if m.ndim != 2 or m.shape[1] < 1:
        raise EmbeddingFileError(f"embedding matrix must be T x D with D >= 1, got {m.shape}")
    rid = emb.recording_id.encode("utf-8")
    header = MAGIC + struct.pack("<IIQf", VERSION, m.shape[1], m.shape[0], emb.frame_period_ms)
    return header + struct.pack("<I", len(rid)) + rid + m.tobytes()


def loads_embeddings(raw: bytes) -> EmbeddingFile:
    if raw[:8] != MAGIC:
        raise EmbeddingFileError("bad magic: not an embedding file")
    try:
        version, dim, rows, period = struct.unpack_from("<IIQf", raw, 8)
        pos = 8 + struct.calcsize("<IIQf")
        (rid_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
    except struct.error as exc:
        raise EmbeddingFileError(f"truncated header: {exc}") from exc
    if version != VERSION:
        raise EmbeddingFileError(f"unsupported embedding file version {version}")
    if abs(period - EMBED_PERIOD_MS) > 1e-6:
        raise EmbeddingFileError(f"frame period {period} ms, expected {EMBED_PERIOD_MS}")
    rid = raw[pos : pos + rid_len].decode("utf-8")
    pos += rid_len
    expected = rows * dim * 4
    if len(raw) - pos != expected:
        raise EmbeddingFileError(f"payload is {len(raw) - pos} bytes, header declares {rows}x{dim} float32 ({expected} bytes)")
    m = np.frombuffer(raw, dtype="<f4", offset=pos).reshape(rows, dim).astype(np.float32)
    if not np.all(np.isfinite(m)):
        raise EmbeddingFileError(f"{rid}: non-finite values in embedding payload")
    return EmbeddingFile(rid, m, float(period))


def write_embeddings(path: str | Path, emb: EmbeddingFile) -> None:
    Path(path).write_bytes(dumps_embeddings(emb))


def load_embeddings(path: str | Path) -> EmbeddingFile:
    return loads_embeddings(Path(path).read_bytes())


def surrogate_embeddings(clip: AudioClip, num_mel: int = 64) -> EmbeddingFile:
    """Stand-in encoder output: log-mel frames every 20 ms over 25 ms windows.

    Row count follows a strided encoder without padding, so a 2 s window
    yields 99 rows.
    """
    mono = clip.channels.mean(axis=0)
    rows = max(0, (len(mono) - EMBED_WIN) // EMBED_HOP + 1)
    if rows == 0:
        return EmbeddingFile(clip.recording_id, np.zeros((0, num_mel), np.float32))
    idx = np.arange(EMBED_WIN)[None, :] + EMBED_HOP * np.arange(rows)[:, None]
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(EMBED_WIN) / EMBED_WIN)
    spec = np.abs(np.fft.rfft(mono[idx] * hann, n=512, axis=-1))
    cfg = FrontendConfig(num_mel=num_mel, sample_rate=SAMPLE_RATE)
    return EmbeddingFile(clip.recording_id, log_mel(spec, cfg).astype(np.float32))


def target_positions(n_out: int = WINDOW_FRAMES, n_in: int = WINDOW_ROWS) -> np.ndarray:
    """Fractional embedding-row index of each 10 ms frame center.

    Row j is centered at ``(j * 320 + 200) / 16000`` s; frame i at ``(i + 0.5) / 100`` s.
    """
    frame_t = (np.arange(n_out) + 0.5) / 100.0
    u = (frame_t * SAMPLE_RATE - EMBED_WIN / 2) / EMBED_HOP
    return np.clip(u, 0.0, n_in - 1)


def interpolation_matrix(n_out: int = WINDOW_FRAMES, n_in: int = WINDOW_ROWS) -> np.ndarray:
    u = target_positions(n_out, n_in)
    lo = np.minimum(np.floor(u).astype(int), n_in - 2)
    frac = u - lo
    A = np.zeros((n_out, n_in))
    A[np.arange(n_out), lo] = 1.0 - frac
    A[np.arange(n_out), lo + 1] += frac
    return A


class Aligner(Module):
    """Time-mixing matrix (200 x 99) shared over features, plus an optional feature projection."""

    def __init__(self, dim: int, out_dim: int | None = None, project: bool = False, dtype=np.float32):
        self.dim = dim
        self.out_dim = out_dim or dim
        if out_dim is not None and out_dim != dim:
            project = True
        self.time_mix = parameter(interpolation_matrix().astype(dtype))
        if project:
            P = np.zeros((self.out_dim, dim), dtype=dtype)
            np.fill_diagonal(P, 1.0)
            self.projection = parameter(P)
        else:
            self.projection = None

    def __call__(self, x: Tensor) -> Tensor:
        """``B x 99 x D`` -> ``B x 200 x D'``."""
        if x.ndim != 3 or x.shape[2] != self.dim:
            raise ValueError(f"aligner expects B x {WINDOW_ROWS} x {self.dim}, got {x.shape}")
        if x.shape[1] != WINDOW_ROWS:
            raise ValueError(f"aligner expects exactly {WINDOW_ROWS} rows per window, got {x.shape[1]}")
        out = ops.matmul(self.time_mix, x)
        if self.projection is not None:
            out = ops.linear(out, self.projection)
        return out


def pad_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad a window's embedding rows to 99; returns (rows, row mask)."""
    n = rows.shape[0]
    if n > WINDOW_ROWS:
        raise ValueError(f"window has {n} embedding rows, at most {WINDOW_ROWS} allowed")
    dtype = rows.dtype if rows.dtype == np.float64 else np.float32
    out = np.zeros((WINDOW_ROWS, rows.shape[1]), dtype=dtype)
    out[:n] = rows
    mask = np.zeros(WINDOW_ROWS, dtype=bool)
    mask[:n] = True
    return out, mask


def align(window_embeddings: np.ndarray, aligner: Aligner) -> np.ndarray:
    """Single window convenience wrapper: ``<=99 x D`` -> ``200 x D'``."""
    rows, _ = pad_rows(np.asarray(window_embeddings, dtype=aligner.time_mix.dtype))
    return aligner(Tensor(rows.astype(aligner.time_mix.dtype)[None])).data[0]
