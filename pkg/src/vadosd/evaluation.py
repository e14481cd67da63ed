"""Frame-level scoring, dev-set threshold sweep, per-domain F1 distributions,
system comparison tables and per-room channel-weight summaries."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus_io import DatasetManifest
from .model import ModelCheckpoint, Segmenter, binarize_2class, merge_joint
from .pipeline import Prediction, Recording, load_partition, predict
from .sacc import export_weights
from .train import TrainReport

MODES = ("2class", "3class")
DEFAULT_GRID = np.round(np.arange(1, 100) * 0.01, 2)


@dataclass(frozen=True)
class Score:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        if self.tp + self.fp + self.fn == 0:
            return 1.0
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        if self.tp + self.fp + self.fn == 0:
            return 1.0
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def has_reference(self) -> bool:
        return self.tp + self.fn > 0

    def __add__(self, other: Score) -> Score:
        return Score(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def score(ref: np.ndarray, hyp: np.ndarray) -> Score:
    """Frame counts of a binary hypothesis against a binary reference.

    With no positives in either sequence, precision, recall and F1 are all 1.
    """
    ref = np.asarray(ref)
    hyp = np.asarray(hyp)
    if ref.shape != hyp.shape or ref.ndim != 1:
        raise ValueError(f"ref and hyp must be equal-length 1-d sequences, got {ref.shape} and {hyp.shape}")
    r = ref.astype(bool)
    h = hyp.astype(bool)
    return Score(int(np.count_nonzero(r & h)), int(np.count_nonzero(~r & h)), int(np.count_nonzero(r & ~h)))


def sweep_threshold(
    probs: np.ndarray | list[np.ndarray],
    refs: np.ndarray | list[np.ndarray],
    grid: np.ndarray | None = None,
) -> tuple[float, float]:
    """Grid threshold maximizing micro F1 over all frames; ties go to the smaller threshold.

    ``probs`` are positive-class probabilities (one array per recording, or
    one concatenated array); a frame is positive when ``p >= threshold``.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    if isinstance(probs, list):
        if not probs:
            raise ValueError("threshold sweep needs a non-empty dev set")
        probs = np.concatenate([np.asarray(p) for p in probs])
        refs = np.concatenate([np.asarray(r) for r in refs])
    p = np.asarray(probs, dtype=np.float64).ravel()
    r = np.asarray(refs).astype(bool).ravel()
    if p.size == 0:
        raise ValueError("threshold sweep needs a non-empty dev set")
    if p.shape != r.shape:
        raise ValueError(f"posterior and reference lengths differ: {p.shape} vs {r.shape}")
    best_theta, best_f1 = float(grid[0]), -1.0
    for theta in np.sort(grid):
        f1 = score(r, p >= theta).f1
        if f1 > best_f1:
            best_theta, best_f1 = float(theta), f1
    return best_theta, best_f1


# --- reports -----------------------------------------------------------------


def distribution_summary(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"n": 0}
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return {"n": int(v.size), "min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4]}


@dataclass
class RecordingScore:
    recording_id: str
    domain: str
    score: Score


@dataclass
class TrackReport:
    track: str  # "vad" or "osd"
    threshold: float | str  # 2-class threshold, or "argmax" for merged 3-class decisions
    recordings: list[RecordingScore]

    @property
    def micro(self) -> Score:
        total = Score(0, 0, 0)
        for r in self.recordings:
            total = total + r.score
        return total

    @property
    def macro_f1(self) -> float:
        f = [r.score.f1 for r in self.recordings if r.score.has_reference]
        return float(np.mean(f)) if f else float("nan")

    def domains(self) -> dict[str, dict]:
        """Per-domain F1 distribution; recordings without reference positives are left out."""
        groups: dict[str, list[float]] = {}
        for r in self.recordings:
            if r.score.has_reference:
                groups.setdefault(r.domain, []).append(r.score.f1)
        return {d: distribution_summary(v) for d, v in sorted(groups.items())}

    def to_dict(self) -> dict:
        return {
            "track": self.track,
            "threshold": self.threshold,
            "micro": self.micro.to_dict(),
            "macro_f1": self.macro_f1,
            "domains": self.domains(),
            "recordings": [{"recording_id": r.recording_id, "domain": r.domain, **r.score.to_dict()} for r in self.recordings],
        }


@dataclass
class ScoreReport:
    mode: str
    task: str
    tracks: dict[str, TrackReport]
    manifest_fingerprint: str | None = None
    partition: str = "eval"
    predictions: dict[str, Prediction] = field(default_factory=dict, repr=False)

    def f1(self, track: str) -> float:
        return self.tracks[track].micro.f1

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "task": self.task,
            "partition": self.partition,
            "manifest_fingerprint": self.manifest_fingerprint,
            "tracks": {k: v.to_dict() for k, v in self.tracks.items()},
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> ScoreReport:
        tracks = {}
        for name, t in d["tracks"].items():
            recs = [RecordingScore(r["recording_id"], r["domain"], Score(r["tp"], r["fp"], r["fn"])) for r in t["recordings"]]
            tracks[name] = TrackReport(name, t["threshold"], recs)
        return cls(d["mode"], d["task"], tracks, d.get("manifest_fingerprint"), d.get("partition", "eval"))

    @classmethod
    def load(cls, path: str | Path) -> ScoreReport:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def table(self) -> str:
        lines = [f"{'track':<6} {'threshold':>9} {'P':>7} {'R':>7} {'F1':>7} {'macroF1':>8}"]
        for name, t in self.tracks.items():
            m = t.micro
            th = t.threshold if isinstance(t.threshold, str) else f"{t.threshold:.2f}"
            lines.append(f"{name:<6} {th:>9} {m.precision:7.4f} {m.recall:7.4f} {m.f1:7.4f} {t.macro_f1:8.4f}")
        return "\n".join(lines)

    def domain_csv(self, path: str | Path | None = None) -> str:
        """Per-file F1 rows ``track, recording_id, domain, f1`` (recordings with reference positives only)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["track", "recording_id", "domain", "f1"])
        for name, t in self.tracks.items():
            for r in t.recordings:
                if r.score.has_reference:
                    w.writerow([name, r.recording_id, r.domain, repr(r.score.f1)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _reference(counts: np.ndarray, track: str) -> np.ndarray:
    return counts >= (1 if track == "vad" else 2)


def score_posteriors(
    posteriors: dict[str, np.ndarray],
    recordings: list[Recording],
    task: str,
    threshold: float | None = None,
) -> dict[str, TrackReport]:
    """Score per-recording posteriors: merged argmax for the joint task, ``threshold`` otherwise."""
    if task == "joint":
        tracks = {"vad": TrackReport("vad", "argmax", []), "osd": TrackReport("osd", "argmax", [])}
    else:
        if threshold is None:
            raise ValueError("a 2-class task needs a threshold")
        tracks = {task: TrackReport(task, float(threshold), [])}
    for rec in recordings:
        post = posteriors[rec.recording_id]
        if task == "joint":
            vad, osd = merge_joint(post)
            hyps = {"vad": vad, "osd": osd}
        else:
            hyps = {task: binarize_2class(post, threshold)}
        for name, hyp in hyps.items():
            tracks[name].recordings.append(RecordingScore(rec.recording_id, rec.domain, score(_reference(rec.counts, name), hyp)))
    return tracks


def infer(model: Segmenter, recordings: list[Recording], hop: float = 0.5) -> dict[str, Prediction]:
    return {rec.recording_id: predict(model, rec, hop=hop) for rec in recordings}


def mode_for_task(task: str) -> str:
    return "3class" if task == "joint" else "2class"


def evaluate(
    checkpoint: ModelCheckpoint,
    manifest: DatasetManifest,
    mode: str,
    partition: str = "eval",
    threshold: float | None = None,
    hop: float = 0.5,
    recordings: list[Recording] | None = None,
    dev_recordings: list[Recording] | None = None,
) -> ScoreReport:
    """Score a checkpoint on a manifest partition.

    2-class mode sweeps the decision threshold on the dev partition unless
    ``threshold`` is given; 3-class mode merges argmax decisions into VAD and
    OSD tracks.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    task = checkpoint.config.head.task
    if mode != mode_for_task(task):
        raise ValueError(f"checkpoint task {task!r} is incompatible with mode {mode!r}")
    fp = checkpoint.config.feature_path
    model = checkpoint.build()
    if recordings is None:
        recordings = load_partition(manifest, partition, fp)
    if not recordings:
        raise ValueError(f"partition {partition!r} is empty")
    if mode == "2class" and threshold is None:
        if dev_recordings is None:
            dev_recordings = load_partition(manifest, "dev", fp)
        if not dev_recordings:
            raise ValueError("2-class evaluation needs a dev partition to choose the threshold")
        dev_post = infer(model, dev_recordings, hop)
        threshold, _ = sweep_threshold(
            [dev_post[r.recording_id].posteriors[:, 1] for r in dev_recordings],
            [_reference(r.counts, task) for r in dev_recordings],
        )
    preds = infer(model, recordings, hop)
    tracks = score_posteriors({k: p.posteriors for k, p in preds.items()}, recordings, task, threshold)
    return ScoreReport(mode, task, tracks, manifest.fingerprint() if manifest is not None else None, partition, preds)


# --- system comparison -------------------------------------------------------


@dataclass
class SystemRow:
    system: str
    vad_f1: float | None
    osd_f1: float | None
    seconds_to_best: float | None
    epochs_to_best: int | None


@dataclass
class Comparison:
    rows: list[SystemRow]
    delta_f1: dict[str, float]  # joint minus dedicated, per track
    dedicated_seconds_total: float | None
    joint_seconds: float | None
    dedicated_epochs_total: int | None
    joint_epochs: int | None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["system", "vad_f1", "osd_f1", "seconds_to_best", "epochs_to_best"])
        for r in self.rows:
            w.writerow([r.system, *("" if v is None else v for v in (r.vad_f1, r.osd_f1, r.seconds_to_best, r.epochs_to_best))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def table(self) -> str:
        def fmt(v, spec):
            if v is None:
                return "-".rjust(int(spec.rstrip("dfs").split(".")[0]))
            return format(v, spec)

        lines = [f"{'system':<8} {'VAD F1':>7} {'OSD F1':>7} {'s-to-best':>10} {'ep-to-best':>10}"]
        for r in self.rows:
            lines.append(
                f"{r.system:<8} {fmt(r.vad_f1, '7.4f')} {fmt(r.osd_f1, '7.4f')} {fmt(r.seconds_to_best, '10.1f')} {fmt(r.epochs_to_best, '10d')}"
            )
        lines.append("delta F1 (joint - dedicated): " + ", ".join(f"{k}={v:+.4f}" for k, v in self.delta_f1.items()))
        if self.dedicated_seconds_total is not None and self.joint_seconds is not None:
            lines.append(f"seconds to best: joint {self.joint_seconds:.1f} vs dedicated total {self.dedicated_seconds_total:.1f}")
        return "\n".join(lines)


def compare_systems(
    vad: ScoreReport,
    osd: ScoreReport,
    joint: ScoreReport,
    train_reports: dict[str, TrainReport] | None = None,
) -> Comparison:
    """Three-row table (dedicated VAD, dedicated OSD, joint) with F1 deltas and training cost."""
    if vad.task != "vad" or osd.task != "osd" or joint.task != "joint":
        raise ValueError(f"expected vad, osd and joint reports, got {vad.task}, {osd.task}, {joint.task}")
    fps = {vad.manifest_fingerprint, osd.manifest_fingerprint, joint.manifest_fingerprint}
    parts = {vad.partition, osd.partition, joint.partition}
    if len(fps) != 1 or len(parts) != 1:
        raise ValueError("reports were computed on different manifests or partitions")
    train_reports = train_reports or {}

    def cost(name):
        rep = train_reports.get(name)
        return (rep.seconds_to_best, rep.best_epoch) if rep is not None else (None, None)

    rows = [
        SystemRow("vad", vad.f1("vad"), None, *cost("vad")),
        SystemRow("osd", None, osd.f1("osd"), *cost("osd")),
        SystemRow("joint", joint.f1("vad"), joint.f1("osd"), *cost("joint")),
    ]
    delta = {"vad": joint.f1("vad") - vad.f1("vad"), "osd": joint.f1("osd") - osd.f1("osd")}
    ded_s = None if rows[0].seconds_to_best is None or rows[1].seconds_to_best is None else rows[0].seconds_to_best + rows[1].seconds_to_best
    ded_e = None if rows[0].epochs_to_best is None or rows[1].epochs_to_best is None else rows[0].epochs_to_best + rows[1].epochs_to_best
    return Comparison(rows, delta, ded_s, rows[2].seconds_to_best, ded_e, rows[2].epochs_to_best)


# --- spatial analysis --------------------------------------------------------


@dataclass
class SpatialReport:
    """Mean channel weights per room (or per recording when rooms are unknown), max-normalized per row."""

    group_by: str  # "room" or "recording"
    rows: dict[str, np.ndarray]
    frames: dict[str, int]
    raw: dict[str, np.ndarray] = field(default_factory=dict)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        m = len(next(iter(self.rows.values()))) if self.rows else 0
        w.writerow([self.group_by, *(f"ch{i}" for i in range(m)), "frames"])
        for k, v in self.rows.items():
            w.writerow([k, *(repr(float(x)) for x in v), self.frames[k]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _normalize_row(w: np.ndarray) -> np.ndarray:
    return export_weights(w[None, :], "max")[0]


def spatial_report(
    model: Segmenter,
    recordings: list[Recording],
    rooms: dict[str, str] | None = None,
    hop: float = 0.5,
    predictions: dict[str, Prediction] | None = None,
) -> SpatialReport:
    """Average SACC weights over each speaker's solo frames and group them by the speaker's room.

    ``rooms`` maps speaker id to room tag and defaults to the tags stored on
    each recording. Speakers without a tag are skipped; if no speaker has one
    the weights are averaged over all speech frames per recording instead.
    """
    if model.cfg.feature_path != "sacc":
        raise ValueError("spatial_report needs a model with a SACC front end")
    sums: dict[str, np.ndarray] = {}
    frames: dict[str, int] = {}
    by_room = False
    for rec in recordings:
        pred = predictions[rec.recording_id] if predictions else predict(model, rec, hop=hop)
        w = pred.weights
        tags = rooms if rooms is not None else rec.speaker_rooms
        solo = rec.counts == 1
        for spk, active in rec.speaker_activity.items():
            room = tags.get(spk) if tags else None
            if room is None:
                continue
            sel = active & solo
            if sel.any():
                by_room = True
                sums[room] = sums.get(room, 0) + w[sel].sum(axis=0)
                frames[room] = frames.get(room, 0) + int(sel.sum())
    if not by_room:
        sums, frames = {}, {}
        for rec in recordings:
            pred = predictions[rec.recording_id] if predictions else predict(model, rec, hop=hop)
            sel = rec.counts > 0
            if not sel.any():
                sel = np.ones(len(rec.counts), dtype=bool)
            sums[rec.recording_id] = pred.weights[sel].sum(axis=0)
            frames[rec.recording_id] = int(sel.sum())
    raw = {k: sums[k] / frames[k] for k in sorted(sums)}
    rows = {k: _normalize_row(v) for k, v in raw.items()}
    return SpatialReport("room" if by_room else "recording", rows, {k: frames[k] for k in rows}, raw)


__all__ = [
    "Comparison",
    "RecordingScore",
    "Score",
    "ScoreReport",
    "SpatialReport",
    "SystemRow",
    "TrackReport",
    "compare_systems",
    "distribution_summary",
    "evaluate",
    "infer",
    "mode_for_task",
    "score",
    "score_posteriors",
    "spatial_report",
    "sweep_threshold",
]
