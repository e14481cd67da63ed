"""TCN sequence labeller with 2-class (VAD or OSD) and 3-class (joint) heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adapter import Aligner
from .dsp import FrontendConfig, mel_filterbank
from .nn import Module, Tensor, checkpoint, kaiming_uniform, ops, parameter
from .sacc import Sacc, SaccConfig

TASKS = ("vad", "osd", "joint")
FEATURE_PATHS = ("logmel", "sacc", "embedding")


@dataclass(frozen=True)
class TcnConfig:
    blocks_per_repeat: int = 5
    repeats: int = 3
    kernel_size: int = 3
    hidden_channels: int = 128
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16)
    dropout: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.blocks_per_repeat != 5 or self.repeats != 3:
            raise ValueError("the TCN is fixed at 5 residual blocks repeated 3 times")
        if len(self.dilations) != self.blocks_per_repeat:
            raise ValueError(f"need one dilation per block, got {self.dilations}")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for same padding")

    @property
    def receptive_field(self) -> int:
        """Input frames that can influence one output frame."""
        return 1 + (self.kernel_size - 1) * sum(self.dilations) * self.repeats


@dataclass(frozen=True)
class HeadConfig:
    task: str = "joint"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")

    @property
    def num_classes(self) -> int:
        return 3 if self.task == "joint" else 2


@dataclass(frozen=True)
class ModelConfig:
    feature_path: str = "logmel"
    tcn: TcnConfig = field(default_factory=TcnConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    sacc: SaccConfig = field(default_factory=SaccConfig)
    num_channels: int = 1
    embedding_dim: int = 64
    embedding_out_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.feature_path not in FEATURE_PATHS:
            raise ValueError(f"unknown feature path {self.feature_path!r}, expected one of {FEATURE_PATHS}")

    @property
    def input_dim(self) -> int:
        if self.feature_path == "embedding":
            return self.embedding_out_dim or self.embedding_dim
        return self.frontend.num_mel

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tcn"]["dilations"] = list(self.tcn.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        return cls(
            feature_path=d["feature_path"],
            tcn=TcnConfig(**d.get("tcn", {})),
            head=HeadConfig(**d.get("head", {})),
            frontend=FrontendConfig(**d.get("frontend", {})),
            sacc=SaccConfig(**d.get("sacc", {})),
            num_channels=d.get("num_channels", 1),
            embedding_dim=d.get("embedding_dim", 64),
            embedding_out_dim=d.get("embedding_out_dim"),
            seed=d.get("seed", 0),
        )


@dataclass
class ModelInput:
    """A batch in the representation the model's feature path consumes.

    logmel: ``values`` is ``B x T x F`` normalized log-mel.
    sacc: ``values`` is ``B x T x M x bins`` magnitudes, ``mean``/``std`` are
    ``B x F`` per-recording statistics for the combined log-mel.
    embedding: ``values`` is ``B x 99 x D`` embedding rows.
    """

    values: np.ndarray
    mean: np.ndarray | None = None
    std: np.ndarray | None = None


class ResidualBlock(Module):
    """dilated conv -> channel norm -> PReLU -> dropout -> 1x1 conv -> residual add."""

    def __init__(self, channels: int, kernel_size: int, dilation: int, dropout: float, rng, dtype):
        self.dilation = dilation
        self.rate = dropout
        fan = channels * kernel_size
        self.conv_w = parameter(kaiming_uniform(rng, (channels, channels, kernel_size), fan, dtype=dtype))
        self.conv_b = parameter(np.zeros(channels, dtype))
        self.norm_g = parameter(np.ones(channels, dtype))
        self.norm_b = parameter(np.zeros(channels, dtype))
        self.prelu = parameter(np.full(channels, 0.25, dtype))
        self.out_w = parameter(kaiming_uniform(rng, (channels, channels, 1), channels, gain=1.0, dtype=dtype))
        self.out_b = parameter(np.zeros(channels, dtype))

    def __call__(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        y = ops.conv1d(x, self.conv_w, self.conv_b, dilation=self.dilation)
        y = ops.channel_norm(y, self.norm_g, self.norm_b)
        y = ops.prelu(y, self.prelu)
        y = ops.dropout(y, self.rate, rng, self.training)
        y = ops.conv1d(y, self.out_w, self.out_b)
        return ops.add(x, y)


class Segmenter(Module):
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        H = cfg.tcn.hidden_channels
        if cfg.feature_path == "sacc":
            self.sacc = Sacc(cfg.sacc, rng, dtype)
        elif cfg.feature_path == "embedding":
            self.aligner = Aligner(cfg.embedding_dim, cfg.embedding_out_dim, dtype=dtype)
        F = cfg.input_dim
        self.in_w = parameter(kaiming_uniform(rng, (H, F, 1), F, gain=1.0, dtype=dtype))
        self.in_b = parameter(np.zeros(H, dtype))
        self.blocks = [
            ResidualBlock(H, cfg.tcn.kernel_size, d, cfg.tcn.dropout, rng, dtype)
            for _ in range(cfg.tcn.repeats)
            for d in cfg.tcn.dilations
        ]
        C = cfg.head.num_classes
        self.head_w = parameter(kaiming_uniform(rng, (C, H, 1), H, gain=1.0, dtype=dtype))
        self.head_b = parameter(np.zeros(C, dtype))
        self.dtype = dtype

    @property
    def task(self) -> str:
        return self.cfg.head.task

    def features(self, batch: ModelInput) -> tuple[Tensor, Tensor | None]:
        """Feature path -> ``B x T x F`` tensor (plus SACC weights ``B x T x M`` when present)."""
        path = self.cfg.feature_path
        values = np.asarray(batch.values, dtype=self.dtype)
        if path == "logmel":
            if values.ndim != 3 or values.shape[2] != self.cfg.input_dim:
                raise ValueError(f"logmel model expects B x T x {self.cfg.input_dim} features, got {values.shape}")
            return Tensor(values), None
        if path == "sacc":
            if values.ndim != 4 or values.shape[2] != self.cfg.num_channels:
                raise ValueError(f"SACC model expects B x T x {self.cfg.num_channels} x bins magnitudes, got {values.shape}")
            combined, weights = self.sacc(values)
            fb = Tensor(mel_filterbank(self.cfg.frontend).astype(self.dtype))
            mel = ops.log(ops.linear(ops.square(combined), fb), self.cfg.frontend.log_floor)
            mean = np.asarray(batch.mean, dtype=self.dtype)[:, None, :]
            inv_std = 1.0 / np.asarray(batch.std, dtype=self.dtype)[:, None, :]
            mel = ops.affine_const(mel, mean, inv_std)
            return mel, weights
        return self.aligner(Tensor(values)), None

    def logits(self, batch: ModelInput, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor | None]:
        x, weights = self.features(batch)
        if x.shape[2] != self.cfg.input_dim:
            raise ValueError(f"feature dimension {x.shape[2]} != model input dimension {self.cfg.input_dim}")
        h = ops.conv1d(x, self.in_w, self.in_b)
        for block in self.blocks:
            h = block(h, rng)
        return ops.conv1d(h, self.head_w, self.head_b), weights

    def posteriors(self, batch: ModelInput) -> tuple[np.ndarray, np.ndarray | None]:
        """Inference: ``B x T x C`` posteriors (and SACC weights) with dropout off."""
        was = self.training
        self.eval()
        try:
            z, w = self.logits(batch)
        finally:
            self.train(was)
        p = ops.softmax(z, axis=-1).data
        return p, (w.data if w is not None else None)


# --- decisions ---------------------------------------------------------------


def merge_joint(posterior: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3-class posteriors -> (VAD, OSD) decisions via argmax; ties go to the lower class."""
    p = np.asarray(posterior)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"merge_joint expects T x 3 posteriors, got {p.shape}")
    c = np.argmax(p, axis=1)  # first maximum = lowest index
    return (c >= 1).astype(np.int8), (c == 2).astype(np.int8)


def binarize_2class(posterior: np.ndarray, threshold: float) -> np.ndarray:
    """Positive iff the positive-class probability reaches ``threshold``.

    Accepts a ``T x 2`` posterior or a length-T vector of positive-class probabilities.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    p = np.asarray(posterior)
    pos = p[:, 1] if p.ndim == 2 else p
    return (pos >= threshold).astype(np.int8)


def task_targets(counts: np.ndarray, task: str) -> np.ndarray:
    """Training targets for a task from per-frame speaker counts."""
    if task == "vad":
        return (counts >= 1).astype(np.int64)
    if task == "osd":
        return (counts >= 2).astype(np.int64)
    return np.minimum(counts, 2).astype(np.int64)


# --- checkpoints -------------------------------------------------------------


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    state: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Segmenter, metadata: dict | None = None) -> ModelCheckpoint:
        return cls(model.cfg, {k: v.astype(np.float32) for k, v in model.state_dict().items()}, dict(metadata or {}))

    def build(self, dtype=np.float32) -> Segmenter:
        model = Segmenter(self.config, dtype=dtype)
        model.load_state_dict(self.state)
        return model

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.state, {"model": self.config.to_dict(), "metadata": self.metadata})

    @classmethod
    def load(cls, path: str | Path) -> ModelCheckpoint:
        arrays, blob = checkpoint.load(path)
        return cls(ModelConfig.from_dict(blob["model"]), arrays, blob.get("metadata", {}))


def count_parameters(cfg: ModelConfig) -> int:
    return Segmenter(cfg).num_parameters()


def receptive_field(cfg: TcnConfig) -> int:
    return cfg.receptive_field


__all__ = [
    "HeadConfig",
    "ModelCheckpoint",
    "ModelConfig",
    "ModelInput",
    "Segmenter",
    "TcnConfig",
    "binarize_2class",
    "count_parameters",
    "merge_joint",
    "receptive_field",
    "task_targets",
]
