"""Self-attention channel combinator.

Each channel's log-compressed magnitude frame is a key token, the channel
mean is the single query, and a scaled dot product gives one score per
channel. The softmax over channels weights the raw magnitudes:

    e_m = K ln(|X_m(t)| + eps),  q = Q mean_m ln(|X_m(t)| + eps)
    w_m(t) = softmax_m(<q, e_m> / sqrt(d)),  Y(t) = sum_m w_m(t) |X_m(t)|
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Module, Tensor, kaiming_uniform, ops, parameter


@dataclass(frozen=True)
class SaccConfig:
    attention_dim: int = 256
    num_heads: int = 1
    input_dim: int = 257
    eps: float = 1e-4
    init_gain: float = 0.1  # small projections start the weights near uniform (channel average)

    def __post_init__(self):
        if self.num_heads != 1:
            raise ValueError("only a single attention head is supported")


class Sacc(Module):
    def __init__(self, cfg: SaccConfig = SaccConfig(), rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        shape = (cfg.attention_dim, cfg.input_dim)
        self.key = parameter(kaiming_uniform(rng, shape, cfg.input_dim, gain=cfg.init_gain, dtype=dtype))
        self.query = parameter(kaiming_uniform(rng, shape, cfg.input_dim, gain=cfg.init_gain, dtype=dtype))

    def __call__(self, magnitude: np.ndarray) -> tuple[Tensor, Tensor]:
        """``B x T x M x F`` magnitudes -> (combined ``B x T x F``, weights ``B x T x M``)."""
        mag = np.asarray(magnitude, dtype=self.key.dtype)
        if mag.ndim != 4 or mag.shape[-1] != self.cfg.input_dim:
            raise ValueError(f"SACC expects B x T x M x {self.cfg.input_dim} magnitudes, got {mag.shape}")
        if not np.all(np.isfinite(mag)) or np.any(mag < 0):
            raise ValueError("SACC input magnitudes must be finite and non-negative")
        tokens = np.log(mag + mag.dtype.type(self.cfg.eps))
        keys = ops.linear(Tensor(tokens), self.key)
        query = ops.linear(Tensor(tokens.mean(axis=2)), self.query)
        scores = ops.scale(ops.einsum("btd,btmd->btm", query, keys), 1.0 / math.sqrt(self.cfg.attention_dim))
        weights = ops.softmax(scores, axis=-1)
        combined = ops.einsum("btm,btmf->btf", weights, Tensor(mag))
        return combined, weights


def combine(magnitude: np.ndarray, sacc: Sacc) -> tuple[np.ndarray, np.ndarray]:
    """Single utterance: ``M x T x F`` magnitudes -> (``T x F`` combined, ``T x M`` weights)."""
    mag = np.asarray(magnitude)
    if mag.ndim != 3:
        raise ValueError(f"expected M x T x F magnitudes, got {mag.shape}")
    combined, weights = sacc(np.transpose(mag, (1, 0, 2))[None])
    return combined.data[0], weights.data[0]


def export_weights(weights: np.ndarray, normalization: str = "none") -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if normalization == "none":
        return w.copy()
    if normalization == "max":
        return w / w.max()
    raise ValueError(f"unknown normalization {normalization!r} (none or max)")


def write_weights_csv(path: str | Path, weights: np.ndarray, recording_id: str, normalization: str = "none") -> None:
    w = export_weights(weights, normalization)
    with open(path, "w", newline="") as fh:
        fh.write(f"# recording_id={recording_id} normalization={normalization}\n")
        writer = csv.writer(fh)
        writer.writerow(["frame"] + [f"ch{m}" for m in range(w.shape[1])])
        for t, row in enumerate(w):
            writer.writerow([t] + [f"{v:.6g}" for v in row])


def read_weights_csv(path: str | Path) -> tuple[dict[str, str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in header)
        rows = list(csv.reader(fh))
    return meta, np.array([[float(v) for v in r[1:]] for r in rows[1:]])
