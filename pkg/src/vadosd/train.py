"""Training loop: on-the-fly overlap-sum and noise augmentation, masked
cross-entropy with Adam, dev-F1 early stopping and training-cost accounting.

Determinism: every random draw (initialization, shuffling, augmentation,
dropout) comes from generators seeded by ``TrainConfig.seed`` and the loop is
single-lane, so two runs with the same config and data produce identical
reports apart from wall-clock fields.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus_io import HOP_SAMPLES, DatasetManifest
from .dsp import FrontendConfig
from .model import (
    FEATURE_PATHS,
    TASKS,
    HeadConfig,
    ModelCheckpoint,
    ModelConfig,
    Segmenter,
    TcnConfig,
    binarize_2class,
    merge_joint,
    task_targets,
)
from .nn import Adam, OptimizerConfig, ops
from .pipeline import (
    Recording,
    build_input,
    load_partition,
    predict,
    recording_windows,
    window_embedding_rows,
)
from .sacc import SaccConfig


@dataclass(frozen=True)
class TrainConfig:
    task: str = "joint"
    feature_path: str = "logmel"
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 10
    augment_prob: float = 0.5
    noise_prob: float = 0.0
    noise_snr_range_db: tuple[float, float] = (5.0, 20.0)
    noise_color: str = "white"
    seed: int = 0
    warm_start: str | None = None
    lr: float = 1e-3
    hidden_channels: int = 128
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16)
    dropout: float = 0.1
    sacc_init_gain: float = 0.1
    train_hop: float = 2.0  # hop between training windows, seconds
    dev_hop: float = 2.0  # inference hop used for the per-epoch dev F1
    max_seconds: float | None = None  # wall-clock budget; stops after the epoch that exceeds it
    target_train_accuracy: float | None = None  # stop once train-set frame accuracy reaches this
    track_train_accuracy: bool = False

    def __post_init__(self):
        object.__setattr__(self, "noise_snr_range_db", tuple(float(v) for v in self.noise_snr_range_db))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.feature_path not in FEATURE_PATHS:
            raise ValueError(f"unknown feature path {self.feature_path!r}, expected one of {FEATURE_PATHS}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")
        for name in ("augment_prob", "noise_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.noise_snr_range_db
        if lo > hi:
            raise ValueError("noise_snr_range_db must be (low, high)")
        if self.noise_color not in ("white", "pink"):
            raise ValueError("noise_color must be 'white' or 'pink'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise_snr_range_db"] = list(self.noise_snr_range_db)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields {sorted(unknown)}")
        return cls(**d)

    def tcn(self) -> TcnConfig:
        return TcnConfig(kernel_size=self.kernel_size, hidden_channels=self.hidden_channels, dilations=self.dilations, dropout=self.dropout)


# --- augmentation ------------------------------------------------------------


def mix_augment(window_a: tuple[np.ndarray, np.ndarray], window_b: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Sum two windows and their speaker counts.

    If the summed waveform peaks above 1 it is rescaled to peak 1 (then
    clipped to [-1, 1] for safety). Class labels follow as ``min(count, 2)``.
    """
    audio_a, counts_a = window_a
    audio_b, counts_b = window_b
    audio_a, audio_b = np.asarray(audio_a), np.asarray(audio_b)
    if audio_a.shape != audio_b.shape or np.shape(counts_a) != np.shape(counts_b):
        raise ValueError(f"window shapes differ: audio {audio_a.shape} vs {audio_b.shape}, counts {np.shape(counts_a)} vs {np.shape(counts_b)}")
    mixed = audio_a.astype(np.float32) + audio_b.astype(np.float32)
    peak = float(np.abs(mixed).max()) if mixed.size else 0.0
    if peak > 1.0:
        mixed /= peak
    np.clip(mixed, -1.0, 1.0, out=mixed)
    counts = np.asarray(counts_a, dtype=np.int16) + np.asarray(counts_b, dtype=np.int16)
    return mixed, counts


def _pink(rng: np.random.Generator, n: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n)


def add_noise(
    audio: np.ndarray,
    snr_db: float,
    rng: np.random.Generator,
    speech_frames: np.ndarray | None = None,
    color: str = "white",
) -> np.ndarray:
    """Mix noise at ``snr_db`` relative to the signal power over active-speech frames.

    ``speech_frames`` marks 10 ms frames holding speech; if it is missing or
    selects nothing, the SNR is measured over the whole window. ``+inf``
    disables mixing. ``audio`` is ``N`` or ``M x N``; channels receive
    independent noise at a common level set from the channel-pooled power.
    """
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    x = np.asarray(audio, dtype=np.float32)
    if snr_db == math.inf:
        return x.copy()
    n = x.shape[-1]
    sample_mask = np.ones(n, dtype=bool)
    if speech_frames is not None:
        m = np.repeat(np.asarray(speech_frames, dtype=bool), HOP_SAMPLES)[:n]
        m = np.pad(m, (0, n - len(m)))
        if m.any():
            sample_mask = m
    signal_power = float(np.mean(np.square(x[..., sample_mask], dtype=np.float64)))
    if color == "white":
        noise = rng.standard_normal(x.shape)
    elif color == "pink":
        noise = np.stack([_pink(rng, n) for _ in range(int(np.prod(x.shape[:-1])))]).reshape(x.shape)
    else:
        raise ValueError(f"unknown noise color {color!r}")
    noise_power = float(np.mean(np.square(noise[..., sample_mask])))
    if signal_power == 0.0 or noise_power == 0.0:
        return x.copy()
    gain = math.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    return (x + gain * noise).astype(np.float32)


# --- reports -----------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float | None  # None for epoch 0 (before any update)
    dev_f1: dict[str, float]
    selection_f1: float
    elapsed_seconds: float
    train_accuracy: float | None = None


@dataclass
class TrainReport:
    task: str
    feature_path: str
    num_parameters: int
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = float("-inf")
    seconds_to_best: float = 0.0
    epochs_run: int = 0
    diverged: bool = False
    stop_reason: str = ""

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("seconds_to_best")
            for e in d["epochs"]:
                e.pop("elapsed_seconds")
        return d

    def deterministic_view(self) -> dict:
        """Report content that must be identical across same-seed runs (wall-clock removed)."""
        return self.to_dict(include_timing=False)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "dev_f1_vad", "dev_f1_osd", "selection_f1", "elapsed_seconds", "train_accuracy"])
        for e in self.epochs:
            w.writerow([
                e.epoch,
                "" if e.train_loss is None else repr(e.train_loss),
                repr(e.dev_f1["vad"]) if "vad" in e.dev_f1 else "",
                repr(e.dev_f1["osd"]) if "osd" in e.dev_f1 else "",
                repr(e.selection_f1),
                f"{e.elapsed_seconds:.3f}",
                "" if e.train_accuracy is None else repr(e.train_accuracy),
            ])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> TrainReport:
        d = dict(d)
        epochs = [EpochRecord(**e) for e in d.pop("epochs", [])]
        return cls(epochs=epochs, **d)

    @classmethod
    def load(cls, path: str | Path) -> TrainReport:
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- evaluation helpers used during training ---------------------------------


def f1_score(ref: np.ndarray, hyp: np.ndarray) -> float:
    """Frame F1 with the all-negative convention (no positives anywhere -> 1.0)."""
    ref = np.asarray(ref, dtype=bool)
    hyp = np.asarray(hyp, dtype=bool)
    tp = int(np.sum(ref & hyp))
    fp = int(np.sum(~ref & hyp))
    fn = int(np.sum(ref & ~hyp))
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def task_decisions(posteriors: np.ndarray, task: str, threshold: float = 0.5) -> dict[str, np.ndarray]:
    """Frame decisions per track: joint -> merged VAD/OSD, 2-class -> own track at ``threshold``."""
    if task == "joint":
        vad, osd = merge_joint(posteriors)
        return {"vad": vad, "osd": osd}
    return {task: binarize_2class(posteriors, threshold)}


def dev_scores(model: Segmenter, recordings: list[Recording], hop: float = 2.0, threshold: float = 0.5) -> dict[str, float]:
    """Micro F1 per track over ``recordings`` (argmax merge for joint, ``threshold`` for 2-class)."""
    refs: dict[str, list] = {}
    hyps: dict[str, list] = {}
    for rec in recordings:
        post = predict(model, rec, hop=hop).posteriors
        for track, dec in task_decisions(post, model.task, threshold).items():
            refs.setdefault(track, []).append(rec.counts >= (1 if track == "vad" else 2))
            hyps.setdefault(track, []).append(dec)
    return {k: f1_score(np.concatenate(refs[k]), np.concatenate(hyps[k])) for k in refs}


def frame_accuracy(model: Segmenter, recordings: list[Recording], hop: float = 2.0) -> float:
    correct = total = 0
    for rec in recordings:
        post = predict(model, rec, hop=hop).posteriors
        target = task_targets(rec.counts, model.task)
        correct += int(np.sum(np.argmax(post, axis=1) == target))
        total += len(target)
    return correct / max(total, 1)


def selection_metric(scores: dict[str, float]) -> float:
    return float(np.mean(list(scores.values())))


# --- training ----------------------------------------------------------------


@dataclass
class _Sample:
    rec: int
    start: int
    audio: np.ndarray
    counts: np.ndarray
    mask: np.ndarray


def _partner_pools(recs: list[Recording]) -> list[np.ndarray]:
    """For each recording, the recordings it may be mixed with.

    Preferred partners share no speaker with it (summing the same synthetic
    voice twice would be labeled as overlap while sounding like one speaker);
    if none exist, any other recording; with a single recording, itself.
    """
    pools = []
    for i, r in enumerate(recs):
        disjoint = [j for j, o in enumerate(recs) if j != i and not (r.speakers & o.speakers)]
        others = [j for j in range(len(recs)) if j != i]
        pools.append(np.array(disjoint or others or [i]))
    return pools


def build_model_config(cfg: TrainConfig, num_channels: int, embedding_dim: int) -> ModelConfig:
    return ModelConfig(
        feature_path=cfg.feature_path,
        tcn=cfg.tcn(),
        head=HeadConfig(cfg.task),
        frontend=FrontendConfig(),
        sacc=SaccConfig(init_gain=cfg.sacc_init_gain),
        num_channels=num_channels,
        embedding_dim=embedding_dim,
        seed=cfg.seed,
    )


def _init_model(cfg: TrainConfig, recs: list[Recording]) -> Segmenter:
    if cfg.warm_start:
        ckpt = ModelCheckpoint.load(cfg.warm_start)
        mc = ckpt.config
        if mc.head.task != cfg.task or mc.feature_path != cfg.feature_path:
            raise ValueError(
                f"warm-start checkpoint is {mc.head.task}/{mc.feature_path}, config asks for {cfg.task}/{cfg.feature_path}"
            )
        return ckpt.build()
    num_channels = recs[0].clip.num_channels
    emb_dim = recs[0].embeddings.shape[1] if recs[0].embeddings is not None else 64
    return Segmenter(build_model_config(cfg, num_channels, emb_dim))


def _batch(model: Segmenter, recs: list[Recording], samples: list[_Sample], norms_from: list[int]):
    if model.cfg.feature_path == "embedding":
        return build_input(model, None, [], [window_embedding_rows(recs[s.rec], s.start) for s in samples])
    audio = np.stack([s.audio for s in samples])
    return build_input(model, audio, [recs[i].norm for i in norms_from])


def train(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    train_recs: list[Recording] | None = None,
    dev_recs: list[Recording] | None = None,
    log=None,
) -> tuple[ModelCheckpoint, TrainReport]:
    """Train one system; returns the best-dev checkpoint and the report.

    ``train_recs`` / ``dev_recs`` may be passed pre-loaded to skip reading
    the manifest partitions.
    """
    t0 = time.perf_counter()
    if train_recs is None:
        train_recs = load_partition(manifest, "train", cfg.feature_path)
    if dev_recs is None:
        dev_recs = load_partition(manifest, "dev", cfg.feature_path)
    if not train_recs or not dev_recs:
        raise ValueError("training needs non-empty train and dev partitions")

    model = _init_model(cfg, train_recs)
    task = model.task
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    opt = Adam(model.parameters(), OptimizerConfig(lr=cfg.lr))

    samples = [
        _Sample(i, w.start_frame, w.audio, w.counts, w.mask)
        for i, rec in enumerate(train_recs)
        for w in recording_windows(rec, cfg.train_hop)
    ]
    by_rec: dict[int, list[int]] = {}
    for k, s in enumerate(samples):
        by_rec.setdefault(s.rec, []).append(k)
    pools = _partner_pools(train_recs)
    waveform_aug = cfg.feature_path != "embedding"
    single_channel = model.cfg.feature_path == "logmel" or model.cfg.num_channels == 1

    report = TrainReport(task, cfg.feature_path, model.num_parameters())

    def evaluate_epoch(epoch: int, loss: float | None) -> EpochRecord:
        scores = dev_scores(model, dev_recs, cfg.dev_hop)
        acc = frame_accuracy(model, train_recs) if (cfg.track_train_accuracy or cfg.target_train_accuracy) else None
        rec = EpochRecord(epoch, loss, scores, selection_metric(scores), time.perf_counter() - t0, acc)
        report.epochs.append(rec)
        return rec

    def log_line(e: EpochRecord) -> None:
        if log is not None:
            loss = "-" if e.train_loss is None else f"{e.train_loss:.4f}"
            acc = "" if e.train_accuracy is None else f" train_acc={e.train_accuracy:.4f}"
            log(f"epoch {e.epoch:3d} loss={loss} dev={e.dev_f1} sel={e.selection_f1:.4f}{acc} t={e.elapsed_seconds:.1f}s")

    first = evaluate_epoch(0, None)
    log_line(first)
    best_state = model.state_dict()
    report.best_epoch, report.best_f1, report.seconds_to_best = 0, first.selection_f1, first.elapsed_seconds
    stale = 0
    report.stop_reason = "max_epochs"

    def reached_target(e: EpochRecord) -> bool:
        return cfg.target_train_accuracy is not None and e.train_accuracy is not None and e.train_accuracy >= cfg.target_train_accuracy

    if reached_target(first):
        report.stop_reason = "target_train_accuracy"
    else:
        for epoch in range(1, cfg.max_epochs + 1):
            model.train()
            order = rng.permutation(len(samples))
            losses = []
            diverged = False
            for b in range(0, len(order), cfg.batch_size):
                chosen = []
                norms = []
                for k in order[b : b + cfg.batch_size]:
                    s = samples[k]
                    audio, counts = s.audio, s.counts
                    if waveform_aug and rng.random() < cfg.augment_prob:
                        partner_rec = int(rng.choice(pools[s.rec]))
                        p = samples[int(rng.choice(by_rec[partner_rec]))]
                        audio, counts = mix_augment((audio, counts * s.mask), (p.audio, p.counts * s.mask))
                    if waveform_aug and single_channel and cfg.noise_prob > 0 and rng.random() < cfg.noise_prob:
                        snr = float(rng.uniform(*cfg.noise_snr_range_db))
                        audio = add_noise(audio, snr, rng, (counts > 0) & s.mask, cfg.noise_color)
                    chosen.append(_Sample(s.rec, s.start, audio, counts, s.mask))
                    norms.append(s.rec)
                batch = _batch(model, train_recs, chosen, norms)
                targets = np.stack([task_targets(c, task) for c in (x.counts for x in chosen)])
                mask = np.stack([x.mask for x in chosen])
                opt.zero_grad()
                logits, _ = model.logits(batch, drop_rng)
                loss = ops.masked_cross_entropy(logits, targets, mask)
                value = float(loss.data)
                if not math.isfinite(value):
                    diverged = True
                    break
                loss.backward()
                try:
                    opt.step()
                except FloatingPointError:
                    diverged = True
                    break
                losses.append(value)
            if diverged:
                report.diverged = True
                report.stop_reason = "diverged"
                report.epochs_run = epoch
                if log is not None:
                    log(f"epoch {epoch}: non-finite loss or gradient, keeping epoch {report.best_epoch}")
                break
            e = evaluate_epoch(epoch, float(np.mean(losses)) if losses else 0.0)
            log_line(e)
            report.epochs_run = epoch
            if e.selection_f1 > report.best_f1:
                report.best_epoch, report.best_f1, report.seconds_to_best = epoch, e.selection_f1, e.elapsed_seconds
                best_state = model.state_dict()
                stale = 0
            else:
                stale += 1
            if reached_target(e):
                report.stop_reason = "target_train_accuracy"
                break
            if stale >= cfg.patience:
                report.stop_reason = "patience"
                break
            if cfg.max_seconds is not None and e.elapsed_seconds >= cfg.max_seconds:
                report.stop_reason = "max_seconds"
                break

    model.load_state_dict(best_state)
    meta = {
        "train_config": cfg.to_dict(),
        "best_epoch": report.best_epoch,
        "best_dev_f1": report.epochs[report.best_epoch].dev_f1 if report.best_epoch < len(report.epochs) else {},
        "manifest_fingerprint": manifest.fingerprint() if manifest is not None else None,
    }
    return ModelCheckpoint.from_model(model, meta), report


def resolve_config(cfg: TrainConfig, **overrides) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


__all__ = [
    "EpochRecord",
    "TrainConfig",
    "TrainReport",
    "add_noise",
    "dev_scores",
    "f1_score",
    "frame_accuracy",
    "mix_augment",
    "resolve_config",
    "task_decisions",
    "train",
]
