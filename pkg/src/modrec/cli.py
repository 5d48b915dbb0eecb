"""Command-line front end: generate, train, eval, infer, info.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure. Configuration files are UTF-8 JSON; command-line flags
override file values.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import SplitSpec, read_dataset, split
from .errors import ConfigError, DataError, ModrecError, NumericError
from .model import ModelConfig, forward, load_params, save_params
from .signals import DatasetSpec, SchemeSpec, generate_dataset
from .training import TrainConfig, emit_report, evaluate, train, write_history


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; the contract says 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="modrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[], help="synthesize a labeled IQ dataset")
    p.add_argument("--spec", required=True, help="JSON dataset spec file")
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--threads", type=int, default=1,
                   help="frame-generation workers; 1 guarantees reproducible runs")

    p = sub.add_parser("train", help="train a classifier on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--config", help="JSON file with 'model', 'train', 'split' sections")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int, help="override both model and train seeds")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--history", help="history CSV path (default: next to the model)")

    p = sub.add_parser("eval", help="evaluate a model, emit confusion/accuracy reports")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", required=True, help="report output directory")

    p = sub.add_parser("infer", help="classify one frame from a dataset file")
    p.add_argument("--model", required=True)
    p.add_argument("--frame", required=True, help="dataset file holding the frame")
    p.add_argument("--index", type=int, default=0, help="record index within the file")

    p = sub.add_parser("info", help="print a dataset header")
    p.add_argument("--data", required=True)
    return parser


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise DataError(f"{path}: top-level JSON value must be an object")
    return loaded


def _dataset_spec_from_json(blob: dict) -> DatasetSpec:
    known = {"schemes", "snr_grid_db", "frames_per_class_per_snr", "master_seed", "frame_length"}
    unknown = set(blob) - known
    if unknown:
        raise DataError(f"unknown dataset spec keys: {sorted(unknown)}")
    if "schemes" not in blob:
        raise DataError("dataset spec needs a 'schemes' list")
    schemes = []
    for entry in blob["schemes"]:
        if isinstance(entry, str):
            schemes.append(SchemeSpec(name=entry))
        elif isinstance(entry, dict):
            schemes.append(SchemeSpec(**entry))
        else:
            raise DataError(f"scheme entries must be names or objects, got {entry!r}")
    kwargs = {k: blob[k] for k in known - {"schemes"} if k in blob}
    return DatasetSpec(schemes=schemes, **kwargs)


def _cmd_generate(args) -> int:
    spec = _dataset_spec_from_json(_load_json(args.spec))
    header = generate_dataset(spec, args.out, threads=max(1, args.threads))
    print(f"wrote {header.total_frames} frames "
          f"({len(header.classes)} classes x {len(header.snr_grid_db)} SNRs) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    blob = _load_json(args.config) if args.config else {}
    unknown = set(blob) - {"model", "train", "split"}
    if unknown:
        raise DataError(f"unknown config sections: {sorted(unknown)}")

    header, frames = read_dataset(args.data)
    model_dict = dict(blob.get("model", {}))
    model_dict.setdefault("num_classes", len(header.classes))
    model_dict.setdefault("frame_length", header.frame_length)
    train_dict = dict(blob.get("train", {}))
    split_dict = dict(blob.get("split", {}))

    if args.epochs is not None:
        train_dict["epochs"] = args.epochs
    if args.batch_size is not None:
        train_dict["batch_size"] = args.batch_size
    if args.learning_rate is not None:
        train_dict["learning_rate"] = args.learning_rate
    if args.seed is not None:
        train_dict["seed"] = args.seed
        model_dict["seed"] = args.seed
    if args.train_fraction is not None:
        split_dict["train_fraction"] = args.train_fraction

    cfg_model = ModelConfig.from_dict(model_dict)
    cfg_train = TrainConfig.from_dict(train_dict)
    split_spec = SplitSpec(**split_dict)
    train_set, val_set = split(frames, split_spec)
    params, history = train(cfg_model, cfg_train, train_set, val_set)

    save_params(params, cfg_model, args.model_out, class_names=header.classes)
    history_path = args.history or str(Path(args.model_out).parent / "history.csv")
    write_history(history, history_path)
    final = history.val_acc[-1] if history.val_acc else float("nan")
    print(f"trained {cfg_train.epochs} epochs on {len(train_set)} frames; "
          f"final val acc {final:.4f}; model -> {args.model_out}")
    return 0


def _cmd_eval(args) -> int:
    header, frames = read_dataset(args.data)
    params, cfg, class_names = load_params(args.model)
    if len(header.classes) != cfg.num_classes:
        raise DataError(f"dataset has {len(header.classes)} classes, "
                        f"model expects {cfg.num_classes}")
    confusion, acc_by_snr, overall = evaluate(params, cfg, frames,
                                              class_names=class_names or header.classes)
    written = emit_report(confusion, acc_by_snr, args.report)
    echo = Path(args.report) / "effective_config.json"
    echo.write_text(json.dumps({"model": cfg.to_dict(),
                                "class_names": class_names or header.classes},
                               indent=2, sort_keys=True),
                    encoding="utf-8")
    print(f"overall accuracy {overall:.4f} over {len(frames)} frames; "
          f"{len(written)} report files in {args.report}")
    for snr in sorted(acc_by_snr):
        print(f"  snr {snr:+d} dB: accuracy {acc_by_snr[snr]:.4f}")
    return 0


def _cmd_infer(args) -> int:
    params, cfg, class_names = load_params(args.model)
    header, frames = read_dataset(args.frame)
    if not 0 <= args.index < len(frames):
        raise DataError(f"frame index {args.index} out of range [0, {len(frames)})")
    names = class_names or header.classes
    probs = forward(params, cfg, frames[args.index]).data
    best = int(np.argmax(probs))
    label = names[best] if best < len(names) else str(best)
    print(f"predicted {label} (p={probs[best]:.4f})")
    print("probabilities: " + " ".join(f"{n}={p:.4f}" for n, p in zip(names, probs)))
    return 0


def _cmd_info(args) -> int:
    header, frames = read_dataset(args.data)
    print(f"classes: {', '.join(header.classes)}")
    print(f"snr grid (dB): {' '.join(str(s) for s in header.snr_grid_db)}")
    print(f"frame length: {header.frame_length}")
    print(f"total frames: {header.total_frames}")
    for (ci, snr), n in sorted(header.counts.items()):
        print(f"  {header.classes[ci]} @ {snr:+d} dB: {n}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "info": _cmd_info,
}


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, ConfigError, ModrecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
