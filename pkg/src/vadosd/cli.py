"""Command-line entry point: ``vadosd <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .corpus_io import format_rttm, load_audio, load_manifest
from .evaluation import ScoreReport, compare_systems, evaluate, infer, mode_for_task, spatial_report, sweep_threshold
from .model import ModelCheckpoint, binarize_2class, merge_joint
from .pipeline import load_partition, predict, recording_from_clip
from .sacc import write_weights_csv
from .synth import SynthSpec, generate, write_corpus
from .train import TrainConfig, TrainReport, train

log = logging.getLogger("vadosd")

CHECKPOINT_NAME = "model.ckpt"
TRAIN_REPORT_NAME = "train_report.json"
SCORE_REPORT_NAME = "score_report.json"


class CliError(Exception):
    """A user-facing error: printed without a traceback, exit code 1."""


def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise CliError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CliError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out: Path, args: argparse.Namespace, **resolved) -> None:
    cli = {k: v for k, v in vars(args).items() if k not in ("func",)}
    payload = {"version": __version__, "command": args.command, "args": cli, **resolved}
    (out / "resolved_config.json").write_text(json.dumps(payload, indent=2, default=str))


def _read_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc


def _load_checkpoint(path: str) -> ModelCheckpoint:
    try:
        return ModelCheckpoint.load(path)
    except Exception as exc:  # noqa: BLE001 - any decode failure is a user error here
        raise CliError(f"cannot load checkpoint {path}: {exc}") from exc


def _checkpoint_path(path: str) -> str:
    p = Path(path)
    return str(p / CHECKPOINT_NAME) if p.is_dir() else str(p)


# --- subcommands -------------------------------------------------------------


def cmd_synth(args) -> None:
    d = _read_json(args.spec or args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        spec = SynthSpec.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid synth spec: {exc}") from exc
    out = _prepare_out(args.out, args.force)
    path = write_corpus(generate(spec), out, embeddings=args.embeddings)
    _snapshot(out, args, synth_spec=spec.to_dict())
    log.info("wrote %d recordings, manifest %s", spec.num_recordings, path)


def cmd_train(args) -> None:
    d = _read_json(args.config)
    try:
        cfg = TrainConfig.from_dict(d)
        overrides = {}
        if args.task:
            overrides["task"] = args.task
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.warm_start:
            overrides["warm_start"] = args.warm_start
        if args.max_epochs is not None:
            overrides["max_epochs"] = args.max_epochs
        cfg = replace(cfg, **overrides)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid train config: {exc}") from exc
    manifest = load_manifest(args.manifest)
    out = _prepare_out(args.out, args.force)
    _snapshot(out, args, train_config=cfg.to_dict())
    ckpt, report = train(manifest, cfg, log=log.info)
    ckpt.save(out / CHECKPOINT_NAME)
    report.to_json(out / TRAIN_REPORT_NAME)
    report.to_csv(out / "train_report.csv")
    log.info("best epoch %d, dev F1 %.4f, %.1f s to best", report.best_epoch, report.best_f1, report.seconds_to_best)


def cmd_evaluate(args) -> None:
    ckpt_path = _checkpoint_path(args.checkpoint)
    ckpt = _load_checkpoint(ckpt_path)
    mode = args.mode or mode_for_task(ckpt.config.head.task)
    if args.task and args.task != ckpt.config.head.task:
        raise CliError(f"checkpoint was trained for {ckpt.config.head.task!r}, not {args.task!r}")
    manifest = load_manifest(args.manifest)
    out = _prepare_out(args.out, args.force)
    try:
        report = evaluate(ckpt, manifest, mode, partition=args.partition, threshold=args.threshold, hop=args.hop)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    report.to_json(out / SCORE_REPORT_NAME)
    (out / "score_table.txt").write_text(report.table() + "\n")
    report.domain_csv(out / "domain_f1.csv")
    if args.dump_posteriors:
        pdir = out / "posteriors"
        pdir.mkdir(exist_ok=True)
        for rid, pred in report.predictions.items():
            _write_posteriors(pdir / f"{rid}.csv", pred.posteriors)
    train_report = Path(ckpt_path).parent / TRAIN_REPORT_NAME
    if train_report.exists():
        shutil.copyfile(train_report, out / TRAIN_REPORT_NAME)
    _snapshot(out, args, mode=mode, task=report.task)
    print(report.table())


def _write_posteriors(path: Path, post: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", *(f"p{c}" for c in range(post.shape[1]))])
        for t, row in enumerate(post):
            w.writerow([t, *(f"{v:.6g}" for v in row)])


def cmd_sweep(args) -> None:
    ckpt = _load_checkpoint(_checkpoint_path(args.checkpoint))
    task = ckpt.config.head.task
    if task == "joint":
        raise CliError("threshold sweep applies to 2-class (vad or osd) checkpoints")
    manifest = load_manifest(args.manifest)
    recs = load_partition(manifest, args.partition, ckpt.config.feature_path)
    if not recs:
        raise CliError(f"partition {args.partition!r} is empty")
    out = _prepare_out(args.out, args.force)
    preds = infer(ckpt.build(), recs, args.hop)
    theta, f1 = sweep_threshold(
        [preds[r.recording_id].posteriors[:, 1] for r in recs],
        [r.counts >= (1 if task == "vad" else 2) for r in recs],
    )
    (out / "threshold.json").write_text(json.dumps({"task": task, "partition": args.partition, "threshold": theta, "f1": f1}, indent=2))
    _snapshot(out, args)
    print(f"{task} threshold {theta:.2f} (F1 {f1:.4f} on {args.partition})")


def cmd_segment(args) -> None:
    ckpt = _load_checkpoint(_checkpoint_path(args.checkpoint))
    task = ckpt.config.head.task
    if args.task and args.task != task:
        raise CliError(f"checkpoint was trained for {task!r}, not {args.task!r}")
    if ckpt.config.feature_path == "embedding":
        raise CliError("segment works from audio; embedding-path checkpoints need precomputed embeddings")
    try:
        clip = load_audio(args.audio)
    except Exception as exc:  # noqa: BLE001
        raise CliError(f"cannot read audio {args.audio}: {exc}") from exc
    if clip.num_channels != ckpt.config.num_channels and ckpt.config.feature_path == "sacc":
        raise CliError(f"checkpoint expects {ckpt.config.num_channels} channels, audio has {clip.num_channels}")
    out = _prepare_out(args.out, args.force)
    rec = recording_from_clip(clip, ckpt.config.feature_path)
    post = predict(ckpt.build(), rec, hop=args.hop).posteriors
    if task == "joint":
        vad, osd = merge_joint(post)
        tracks = {"vad": vad, "osd": osd}
    else:
        theta = 0.5 if args.threshold is None else args.threshold
        tracks = {task: binarize_2class(post, theta)}
    from .corpus_io import decisions_to_segments

    for name, dec in tracks.items():
        segs = decisions_to_segments(dec, clip.recording_id, name.upper(), args.gap_close_ms / 1000.0, args.min_dur_ms / 1000.0)
        (out / f"{name}.rttm").write_text(format_rttm(segs))
    if args.dump_posteriors:
        _write_posteriors(out / "posteriors.csv", post)
    _snapshot(out, args, task=task)


def cmd_export_weights(args) -> None:
    ckpt = _load_checkpoint(_checkpoint_path(args.checkpoint))
    if ckpt.config.feature_path != "sacc":
        raise CliError("export-weights needs a SACC (multi-channel) checkpoint")
    if not args.audio and not args.manifest:
        raise CliError("give --audio or --manifest")
    out = _prepare_out(args.out, args.force)
    model = ckpt.build()
    if args.audio:
        clip = load_audio(args.audio)
        rec = recording_from_clip(clip, "sacc")
        w = predict(model, rec, hop=args.hop).weights
        write_weights_csv(out / f"{clip.recording_id}_weights.csv", w, clip.recording_id, args.normalization)
    else:
        manifest = load_manifest(args.manifest)
        recs = load_partition(manifest, args.partition, "sacc")
        preds = infer(model, recs, args.hop)
        for r in recs:
            write_weights_csv(out / f"{r.recording_id}_weights.csv", preds[r.recording_id].weights, r.recording_id, args.normalization)
        rep = spatial_report(model, recs, predictions=preds)
        rep.to_csv(out / "spatial_report.csv")
        print(rep.to_csv(), end="")
    _snapshot(out, args)


def _score_dir(path: str) -> tuple[ScoreReport, TrainReport | None]:
    p = Path(path)
    report_path = p / SCORE_REPORT_NAME if p.is_dir() else p
    if not report_path.exists():
        raise CliError(f"no score report at {report_path}")
    train_path = report_path.parent / TRAIN_REPORT_NAME
    return ScoreReport.load(report_path), (TrainReport.load(train_path) if train_path.exists() else None)


def cmd_compare(args) -> None:
    vad, vad_t = _score_dir(args.vad)
    osd, osd_t = _score_dir(args.osd)
    joint, joint_t = _score_dir(args.joint)
    train_reports = {k: v for k, v in (("vad", vad_t), ("osd", osd_t), ("joint", joint_t)) if v is not None}
    try:
        comp = compare_systems(vad, osd, joint, train_reports)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = _prepare_out(args.out, args.force)
    comp.to_csv(out / "comparison.csv")
    comp.to_json(out / "comparison.json")
    (out / "comparison.txt").write_text(comp.table() + "\n")
    _snapshot(out, args)
    print(comp.table())


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vadosd", description="Joint and dedicated voice activity / overlapped speech detection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
            sp.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--spec", help="SynthSpec JSON")
    s.add_argument("--config", help="alias of --spec")
    s.add_argument("--seed", type=int)
    s.add_argument("--embeddings", action="store_true", help="also write surrogate embedding files")
    common(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a VAD, OSD or joint model")
    s.add_argument("--config", help="TrainConfig JSON")
    s.add_argument("--manifest", required=True)
    s.add_argument("--task", choices=("vad", "osd", "joint"))
    s.add_argument("--seed", type=int)
    s.add_argument("--warm-start", help="checkpoint to fine-tune")
    s.add_argument("--max-epochs", type=int)
    common(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint on a manifest partition")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=("2class", "3class"))
    s.add_argument("--task", choices=("vad", "osd", "joint"))
    s.add_argument("--partition", default="eval")
    s.add_argument("--threshold", type=float, help="fixed 2-class threshold (default: sweep on dev)")
    s.add_argument("--hop", type=float, default=0.5, help="inference window hop in seconds")
    s.add_argument("--dump-posteriors", action="store_true")
    s.add_argument("--config", help="unused; accepted for symmetry")
    s.add_argument("--seed", type=int)
    common(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep-threshold", help="choose a 2-class threshold on a partition")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--partition", default="dev")
    s.add_argument("--hop", type=float, default=0.5)
    common(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("segment", help="write VAD/OSD RTTM for an audio file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--audio", required=True)
    s.add_argument("--task", choices=("vad", "osd", "joint"))
    s.add_argument("--threshold", type=float)
    s.add_argument("--gap-close-ms", type=float, default=0.0)
    s.add_argument("--min-dur-ms", type=float, default=0.0)
    s.add_argument("--hop", type=float, default=0.5)
    s.add_argument("--dump-posteriors", action="store_true")
    common(s)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("export-weights", help="dump SACC channel weights and a per-room summary")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--audio")
    s.add_argument("--manifest")
    s.add_argument("--partition", default="eval")
    s.add_argument("--normalization", choices=("none", "max"), default="none")
    s.add_argument("--hop", type=float, default=0.5)
    common(s)
    s.set_defaults(func=cmd_export_weights)

    s = sub.add_parser("compare", help="compare dedicated and joint systems")
    s.add_argument("--vad", required=True, help="evaluate output directory (or score report) of the VAD system")
    s.add_argument("--osd", required=True)
    s.add_argument("--joint", required=True)
    common(s)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"vadosd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
