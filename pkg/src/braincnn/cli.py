"""Command-line entry point: train, evaluate, predict, make-fixtures."""

from __future__ import annotations

import argparse
import datetime
import sys
from pathlib import Path

from .config import RunConfig
from .data import load_and_preprocess, make_fixtures, scan_dataset, stratified_split
from .errors import (CheckpointError, ClassMismatchError, ConfigError,
                     DataError, ShapeError, TrainingDiverged)
from .layers import forward_pass
from .train import (evaluate, export_history, load_checkpoint, train)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CHECKPOINT = 5


def _fail(code: int, kind: str, msg: str) -> int:
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "dataset", None):
        cfg.set("dataset.root", args.dataset)
    if getattr(args, "out", None):
        cfg.set("output.dir", args.out)
    if getattr(args, "seed", None) is not None:
        cfg.set("seeds.init", args.seed)
        cfg.set("seeds.shuffle", args.seed + 1)
        cfg.set("seeds.augment", args.seed + 2)
        cfg.set("split.seed", args.seed + 3)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    name = cfg["output.dir"]
    if not name:
        name = "run-" + datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
        cfg.set("output.dir", name)
    d = Path(name)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_train(args) -> int:
    try:
        cfg = _load_config(args)
        if not cfg["dataset.root"]:
            raise ConfigError("dataset.root is required (flag --dataset or config)")
        out = _out_dir(cfg)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", str(e))
    try:
        index = scan_dataset(cfg["dataset.root"])
        train_idx, val_idx, test_idx = stratified_split(index, cfg.split_spec())
    except DataError as e:
        return _fail(EXIT_DATA, "data", str(e))
    try:
        model = cfg.build_model(len(index.class_names))
        tconf = cfg.train_config(checkpoint_path=str(out / "model.ckpt"))
        history, best = train(model, train_idx, val_idx, tconf)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", str(e))
    except (ShapeError, DataError) as e:
        return _fail(EXIT_DATA, "data", str(e))
    except TrainingDiverged as e:
        return _fail(EXIT_DIVERGED, "diverged", str(e))
    export_history(history, out)
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    (out / "manifest.cfg").write_text(f"# generated: {stamp}\n" + cfg.to_text())
    best_rec = history.records[history.best_epoch - 1]
    print(f"trained {len(history.records)} epochs ({history.stop_reason}); "
          f"best epoch {history.best_epoch}: "
          f"val_loss {best_rec.val_loss:.6f} val_acc {best_rec.val_acc:.4f}")
    print(f"outputs in {out}")
    return 0


def _report_csv(report) -> str:
    lines = ["class,precision,recall,f1,support"]
    for i, name in enumerate(report.class_names):
        lines.append(f"{name},{report.precision[i]:.6f},{report.recall[i]:.6f},"
                     f"{report.f1[i]:.6f},{report.support[i]}")
    return "\n".join(lines) + "\n"


def _confusion_csv(report) -> str:
    lines = ["true\\pred," + ",".join(report.class_names)]
    for i, name in enumerate(report.class_names):
        lines.append(name + "," + ",".join(str(int(v)) for v in report.confusion[i]))
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", str(e))
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (CheckpointError, OSError) as e:
        return _fail(EXIT_CHECKPOINT, "checkpoint", str(e))
    try:
        index = scan_dataset(args.dataset)
        parts = dict(zip(("train", "val", "test"),
                         stratified_split(index, cfg.split_spec())))
        report = evaluate(ckpt, parts[args.split],
                          batch_size=cfg["train.batch_size"])
    except ClassMismatchError as e:
        return _fail(EXIT_CHECKPOINT, "class-mismatch", str(e))
    except DataError as e:
        return _fail(EXIT_DATA, "data", str(e))
    print(f"split: {args.split} ({int(report.support.sum())} samples)")
    print(f"loss: {report.loss:.6f}")
    print(f"accuracy: {report.accuracy:.6f}")
    print(_report_csv(report), end="")
    print(f"Incorrect Predictions: {report.incorrect}")
    print(f"Percentage of Incorrect Predictions: {report.incorrect_pct:.3f}%")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"metrics_{args.split}.csv").write_text(_report_csv(report))
        (out / f"confusion_{args.split}.csv").write_text(_confusion_csv(report))
    return 0


def cmd_predict(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (CheckpointError, OSError) as e:
        return _fail(EXIT_CHECKPOINT, "checkpoint", str(e))
    try:
        img = load_and_preprocess(args.image, ckpt.model.input_shape[0])
    except DataError as e:
        return _fail(EXIT_DATA, "data", str(e))
    probs, _ = forward_pass(ckpt.model, ckpt.pset, img[None], "infer")
    pred = int(probs[0].argmax())
    print(f"predicted: {ckpt.class_names[pred]}")
    for name, p in zip(ckpt.class_names, probs[0]):
        print(f"{name}: {p:.6f}")
    return 0


def cmd_make_fixtures(args) -> int:
    try:
        n = make_fixtures(args.out, per_class=args.per_class, seed=args.seed or 0,
                          size=args.size)
    except DataError as e:
        return _fail(EXIT_DATA, "data", str(e))
    print(f"wrote {n} images to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="braincnn",
                                description="From-scratch CNN image-classification pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a class-per-directory dataset")
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--dataset", help="dataset root directory")
    t.add_argument("--out", help="run output directory")
    t.add_argument("--seed", type=int, help="base seed overriding all config seeds")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--config", help="config supplying the split spec")
    e.add_argument("--out", help="directory for report CSV files")
    e.add_argument("--seed", type=int, help="base seed overriding all config seeds")
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="classify a single image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("image")
    pr.set_defaults(func=cmd_predict)

    f = sub.add_parser("make-fixtures", help="generate a synthetic 4-class dataset")
    f.add_argument("--out", required=True)
    f.add_argument("--per-class", type=int, default=25)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--size", type=int, default=64)
    f.set_defaults(func=cmd_make_fixtures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
