"""Command-line entry point: ``sgvad <command> [flags]``.

Exit codes: 0 on success, 1 on a runtime error (one ``error: Type: message``
line on stderr), 2 on a usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import dsp, evaluate, infer, train
from .classifier import ClassifierConfig, count_params
from .errors import ConfigError, SgvadError
from .gates import deterministic_gates


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgvad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("features", help="dump MFCC features (and optionally gates) for one WAV file")
    p.add_argument("wav", help="16 kHz mono PCM16 WAV file")
    p.add_argument("--out", required=True, help="output feature dump (SGF1: magic, channels, frames, float32)")
    p.add_argument("--model", help="gate checkpoint; required with --gates")
    p.add_argument("--gates", help="also write deterministic gates here (SGZ1 layout)")

    p = sub.add_parser("toygen", help="write the synthetic toy corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    p.add_argument("--per-class", type=_positive, default=200, help="clips per class (default 200)")
    p.add_argument("--speech-classes", type=int, default=5, help="number of speech classes (default 5)")

    p = sub.add_parser("train", help="train the gate network (and auxiliary classifier)")
    p.add_argument("--config", default="default", help="key = value config file, or 'default'")
    p.add_argument("--mode", choices=train.MODES, help="objective; overrides the config")
    p.add_argument("--seed", type=int, help="training seed; overrides the config")
    p.add_argument("--epochs", type=_positive, help="overrides the config")
    p.add_argument("--batch-size", type=_positive, help="overrides the config")
    p.add_argument("--train", required=True, help="training manifest (path<TAB>label<TAB>seconds)")
    p.add_argument("--val", required=True, help="validation manifest")
    p.add_argument("--out", required=True, help="best checkpoint; metrics go to OUT.metrics.csv")

    p = sub.add_parser("infer", help="score segments with a trained gate network")
    p.add_argument("--model", required=True, help="training checkpoint or gate export")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--segments", help="CSV with audio_path,start_s,end_s,label")
    src.add_argument("--test", help="manifest to score as whole clips, labelled by class name")
    p.add_argument("--out", required=True, help="scored CSV (adds a score column)")
    p.add_argument("--jobs", type=_positive, default=1, help="concurrent scoring workers (default 1)")
    p.add_argument("--threshold", type=float,
                   help="print speech/non_speech counts at this score threshold in [0, 32]")

    p = sub.add_parser("eval", help="AUC-ROC report over a scored CSV")
    p.add_argument("--scored", required=True, help="scored CSV from 'infer'")
    p.add_argument("--map", required=True, help="label map: label<TAB>pos|neg per line")
    p.add_argument("--weighted-auc", type=_bool, default=False, metavar="BOOL",
                   help="headline AUC weights segments by duration (default false)")
    p.add_argument("--out", help="also write the report to this file")

    p = sub.add_parser("params", help="print parameter counts")
    p.add_argument("--config", default="default", help="key = value config file, or 'default'")
    return parser


def _features(args):
    f = dsp.normalize_features(dsp.compute_mfcc(dsp.load_wav(args.wav)))
    dsp.write_matrix_dump(args.out, f, dsp.FEATURE_MAGIC)
    print(f"features: {f.shape[0]} x {f.shape[1]} -> {args.out}")
    if args.gates:
        if not args.model:
            raise ConfigError("--gates needs --model")
        net = infer.load_gate_network(args.model)
        z = deterministic_gates(net.forward(f[None])[0])
        dsp.write_matrix_dump(args.gates, z.astype("float32"), dsp.GATE_MAGIC)
        print(f"gates: open rate {z.mean():.6f} -> {args.gates}")


def _toygen(args):
    paths = evaluate.make_toy_corpus(args.out, args.seed, args.per_class, args.speech_classes)
    for name, path in paths.items():
        print(f"{name}: {path}")


def _train(args):
    cfg = train.load_config(args.config)
    overrides = {"mode": args.mode, "seed": args.seed, "epochs": args.epochs, "batch_size": args.batch_size}
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    _, history = train.train_run(cfg, args.train, args.val, args.out)
    best = max(history, key=lambda m: (m.val_acc, m.epoch))
    print(f"trained {len(history)} epochs ({cfg.mode}); best val_acc {best.val_acc:.6f} at epoch {best.epoch}")
    print(f"checkpoint: {args.out}")
    print(f"metrics: {args.out}.metrics.csv")


def _infer(args):
    net = infer.load_gate_network(args.model)
    if args.segments:
        segments, base = infer.read_segments(args.segments), Path(args.segments).parent
    else:
        segments = [infer.SegmentRecord(e.audio_path, 0.0, e.duration_s, evaluate.class_name(e.label))
                    for e in train.read_manifest(args.test)]
        base = None
    scored = infer.Scorer(net, base).score_all(segments, args.jobs)
    infer.write_scored(args.out, scored)
    print(f"scored {len(scored)} segments -> {args.out}")
    if args.threshold is not None:
        if not 0 <= args.threshold <= 32:
            raise ValueError("--threshold must lie in [0, 32]")
        speech = sum(infer.decide(s.score, args.threshold) == "speech" for s in scored)
        print(f"threshold {args.threshold:g}: {speech} speech, {len(scored) - speech} non_speech")


def _eval(args):
    report = evaluate.evaluate(evaluate.read_scored(args.scored), evaluate.read_label_map(args.map))
    text = evaluate.format_report(report, args.weighted_auc)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)


def _params(args):
    cfg = train.load_config(args.config)
    counts = count_params(clf_cfg=ClassifierConfig(n_classes=cfg.n_classes))
    print(f"gate_network {counts['gate']}")
    print(f"classifier {counts['classifier']}")
    print(f"total {counts['total']}")


COMMANDS = {"features": _features, "toygen": _toygen, "train": _train, "infer": _infer,
            "eval": _eval, "params": _params}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (SgvadError, OSError, ValueError, KeyError, FloatingPointError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else ""
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
