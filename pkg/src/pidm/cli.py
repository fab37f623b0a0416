"""``pidm`` command line: synth-data, train, generate, evaluate, stillface.

Exit status 0 on success, 1 on a runtime error (one line on stderr), 2 on
a usage error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .dyaddata import Coupling, DyadClip, SynthConfig, corpus_clips, load_dataset, read_fseq, synth_corpus
from .dyaddata.fseq import atomic_write_bytes, write_fseq, write_manifest
from .evalsuite import MIN_EVAL_CLIPS, evaluate_model, format_metrics, stillface_compare
from .model import generate
from .trainer import PRESETS, TrainConfig, load_checkpoint, train


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pidm", description="Dyadic facial-response model: data, training, evaluation.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth-data", help="write synthetic dyad sessions as FSEQ files plus a manifest")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--sessions", required=True, type=int)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--coupled", dest="coupled", action="store_true", default=True)
    mode.add_argument("--decoupled", dest="coupled", action="store_false")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seconds", type=float, default=120.0, help="session length")
    p.add_argument("--fps", type=float, default=10.0)

    p = sub.add_parser("train", help="train on windows drawn from a dataset directory")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="run directory (logs, checkpoints, model.pidm)")
    p.add_argument("--config", type=Path, help="key=value file; overrides the preset")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--seed", type=int)
    p.add_argument("--clips", type=int, default=200, help="number of training windows to draw")
    p.add_argument("--val-data", type=Path)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p = sub.add_parser("generate", help="generate B's response to the A half of an FSEQ file")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("evaluate", help="MAE/FD table for baselines and the model")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out-csv", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips", type=int, default=MIN_EVAL_CLIPS)

    p = sub.add_parser("stillface", help="coupled vs decoupled per-clip error comparison")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--coupled-data", required=True, type=Path)
    p.add_argument("--decoupled-data", required=True, type=Path)
    p.add_argument("--out-csv", type=Path, help="per-clip errors; the summary goes next to it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips", type=int, default=64, help="clips per condition")
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def _clips(root: Path, frames: int, n: int, seed: int) -> list[DyadClip]:
    return corpus_clips(load_dataset(root), frames, n, seed=seed)


def cmd_synth_data(args) -> None:
    if args.sessions < 1:
        raise ValueError("--sessions must be at least 1")
    cfg = SynthConfig(fps=args.fps, session_seconds=args.seconds, seed=args.seed, coupled=args.coupled)
    args.out.mkdir(parents=True, exist_ok=True)
    names = []
    for clip in synth_corpus(cfg, args.sessions):
        name = f"{clip.session_id}.fseq"
        write_fseq(args.out / name, clip)
        names.append(name)
    write_manifest(args.out / "manifest.txt", names)
    print(f"wrote {len(names)} sessions to {args.out}")


def cmd_train(args) -> None:
    cfg = TrainConfig.from_preset(args.preset)
    if args.config is not None:
        cfg = TrainConfig.load(args.config, base=cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    resume = load_checkpoint(args.resume) if args.resume is not None else None
    train_set = _clips(args.data, cfg.clip_frames, args.clips, cfg.seed)
    val_set = _clips(args.val_data, cfg.clip_frames, 32, cfg.seed) if args.val_data is not None else None
    res = train(cfg, train_set, val_set, out_dir=args.out, resume=resume)
    last = res.log[-1] if res.log else None
    print(f"trained {res.step} steps" + (f", final loss {last.total:.4f}" if last else "") + f"; model at {res.checkpoint}")


def cmd_generate(args) -> None:
    ck = load_checkpoint(args.checkpoint)
    if ck.stats is None:
        raise ValueError(f"{args.checkpoint} carries no normalization stats")
    clip = read_fseq(args.input)
    b_hat = generate(clip.a, ck.params, ck.stats, args.seed)
    write_fseq(args.out, DyadClip(clip.a, b_hat, clip.session_id, 0, Coupling.UNLABELED))


def cmd_evaluate(args) -> None:
    ck = load_checkpoint(args.checkpoint)
    if args.clips < MIN_EVAL_CLIPS:
        raise ValueError(f"evaluation needs at least {MIN_EVAL_CLIPS} test clips, got --clips {args.clips}")
    clips = _clips(args.data, ck.cfg.clip_frames, args.clips, args.seed)
    rows = evaluate_model(ck.params, clips, ck.stats, seed=args.seed)
    text = format_metrics(rows)
    atomic_write_bytes(args.out_csv, text.encode())
    sys.stdout.write(text)


def cmd_stillface(args) -> None:
    ck = load_checkpoint(args.checkpoint)
    coupled = _clips(args.coupled_data, ck.cfg.clip_frames, args.clips, args.seed)
    decoupled = _clips(args.decoupled_data, ck.cfg.clip_frames, args.clips, args.seed)
    rep = stillface_compare(ck.params, coupled, decoupled, ck.stats, seed=args.seed)
    if args.out_csv is not None:
        atomic_write_bytes(args.out_csv, rep.per_clip_csv().encode())
        summary = args.out_csv.with_name(args.out_csv.stem + "_summary.csv")
        atomic_write_bytes(summary, rep.summary_csv().encode())
    sys.stdout.write(rep.summary_csv())


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "stillface": cmd_stillface,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as e:  # argparse: 2 on usage errors, 0 for --help
        return int(e.code or 0)
    try:
        COMMANDS[args.command](args)
    except Exception as e:  # noqa: BLE001 - every failure becomes one diagnostic line
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"pidm {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
