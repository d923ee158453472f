"""``signgan`` command line: one subcommand per pipeline step.

Everything is written below an output root (``--out``, else ``$SIGNGAN_OUT``,
else ``./signgan_out``)::

    datasets/<name>/   train.snf [test.snf split.json emission_log.csv]
    gans/<name>/class_<c>/   checkpoint.ganc loss.csv
    models/<name>/     checkpoint.clfc loss.csv
    evals/<name>/      metrics.csv plot_series.txt report.json
    reports/<name>/    comparison.csv plot_series.txt

Each of those directories also receives ``config.ini`` (resolved settings plus
the command's arguments) and ``config.sha256``.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import augment
from .classifier import ClfCheckpoint, TrainConfig, predict_batch, train_classifier
from .config import PipelineConfig, output_root
from .dataio import (IMAGE_SIZE, NUM_CLASSES, concat_datasets, dataset_hash, ingest_directory,
                     load_snf, save_snf, split_dataset)
from .errors import DataError, SignGanError, UsageError
from .evalreport import (ComparisonTable, PerClassAccuracy, RunReport, emit_csv,
                         emit_plot_series, per_class_accuracy)
from .gan import GanCheckpoint, GanConfig, synthesize_labeled_set, train_gan


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data if isinstance(data, bytes) else data.encode("utf-8"))
    tmp.replace(path)


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    def dataset_dir(self, name):
        return self.root / "datasets" / name

    def load_dataset(self, name, part="train"):
        path = self.dataset_dir(name) / f"{part}.snf"
        if not path.is_file():
            raise DataError(f"dataset {name!r} has no {part} split (looked for {path})")
        return load_snf(path)

    def gan_dir(self, name, class_id):
        return self.root / "gans" / name / f"class_{class_id}"

    def model_dir(self, name):
        return self.root / "models" / name

    def load_model(self, name):
        path = self.model_dir(name) / "checkpoint.clfc"
        if not path.is_file():
            raise DataError(f"no classifier checkpoint for model {name!r} ({path})")
        return ClfCheckpoint.from_bytes(path.read_bytes())


# ---------------------------------------------------------------- commands

def cmd_ingest(args, cfg, ws):
    cfg.override("ingest", test_fraction=args.test_fraction, seed=args.seed,
                  per_class=args.per_class)
    parts = [ingest_directory(src) for src in args.source]
    data = concat_datasets(parts)
    if len(data) == 0:
        raise DataError("no images found under " + ", ".join(args.source))
    cap = cfg.get("ingest", "per_class", int)
    if cap > 0:
        keep = np.concatenate([np.flatnonzero(data.labels == c)[:cap] for c in range(NUM_CLASSES)])
        data = data.subset(np.sort(keep))
    out = ws.dataset_dir(args.name)
    fraction = cfg.get("ingest", "test_fraction", float)
    cfg.snapshot(out, {"command": "ingest", "name": args.name, "source": " ".join(args.source)})
    if fraction == 0:
        save_snf(data, out / "train.snf")
        print(f"{args.name}: {len(data)} images, no test split")
        return
    split = split_dataset(data, fraction, cfg.get("ingest", "seed", int))
    save_snf(split.train, out / "train.snf")
    save_snf(split.test, out / "test.snf")
    _atomic_write(out / "split.json", json.dumps({
        "seed": split.seed, "test_fraction": split.test_fraction,
        "train_indices": split.train_indices.tolist(), "test_indices": split.test_indices.tolist(),
        "test_hash": dataset_hash(split.test)}, indent=1) + "\n")
    print(f"{args.name}: {len(split.train)} train / {len(split.test)} test images")


def cmd_augment(args, cfg, ws):
    cfg.override("augment", multiplier=args.multiplier, seed=args.seed, policy=args.policy)
    policy_path = cfg.get("augment", "policy")
    policy = augment.DEFAULT_POLICY
    if policy_path:
        try:
            policy = augment.ClassPolicy.from_text(Path(policy_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read policy file {policy_path}: {exc.strerror}") from None
    plan = augment.AugmentPlan(cfg.get("augment", "multiplier", int),
                               cfg.get("augment", "seed", int), policy)
    base = ws.load_dataset(args.dataset)
    out_ds, log = augment.build_augmented_dataset(base, plan)
    out = ws.dataset_dir(args.name)
    cfg.snapshot(out, {"command": "augment", "dataset": args.dataset, "name": args.name})
    save_snf(out_ds, out / "train.snf")
    _atomic_write(out / "emission_log.csv", augment.emission_log_csv(log))
    print(f"{args.name}: {len(base)} base + {len(log)} augmented images")


def cmd_gan_train(args, cfg, ws):
    for flag in ("input_height", "output_height"):
        value = getattr(args, flag)
        if value is not None and value != IMAGE_SIZE:
            raise DataError(f"unsupported image size --{flag}={value}: only {IMAGE_SIZE} is supported")
    if not args.train:
        raise UsageError("gan-train only trains; pass --train")
    cfg.override("gan", epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                  learning_rate=args.learning_rate)
    data = ws.load_dataset(args.dataset)
    classes = range(NUM_CLASSES) if args.class_id is None else [args.class_id]
    name = args.name or args.dataset
    for c in classes:
        gcfg = GanConfig(class_id=c, latent_dim=cfg.get("gan", "latent_dim", int),
                         epochs=cfg.get("gan", "epochs", int),
                         batch_size=cfg.get("gan", "batch_size", int),
                         learning_rate=cfg.get("gan", "learning_rate", float),
                         beta1=cfg.get("gan", "beta1", float), seed=cfg.get("gan", "seed", int))
        out = ws.gan_dir(name, c)
        cfg.snapshot(out, {"command": "gan-train", "dataset": args.dataset, "name": name,
                           "class_id": c})

        def save(ckpt, out=out):
            _atomic_write(out / "checkpoint.ganc", ckpt.to_bytes())
            _atomic_write(out / "loss.csv", ckpt.loss_csv())

        ckpt = train_gan(data.of_class(c), gcfg, on_epoch=save)
        d, g = ckpt.loss_history[-1]
        print(f"class {c}: {ckpt.epochs_completed} epochs, final d_loss {d:.4f} g_loss {g:.4f}")


def cmd_gan_sample(args, cfg, ws):
    cfg.override("sample", count=args.count, seed=args.seed)
    base = ws.root / "gans" / args.gans
    paths = sorted(base.glob("class_*/checkpoint.ganc"))
    if not paths:
        raise DataError(f"no GAN checkpoints under {base}")
    ckpts = [GanCheckpoint.from_bytes(p.read_bytes()) for p in paths]
    synthetic = synthesize_labeled_set(ckpts, cfg.get("sample", "count", int),
                                       cfg.get("sample", "seed", int))
    out = ws.dataset_dir(args.name)
    cfg.snapshot(out, {"command": "gan-sample", "gans": args.gans, "name": args.name})
    save_snf(synthetic, out / "train.snf")
    print(f"{args.name}: {len(synthetic)} synthetic images from {len(ckpts)} GANs")


def _train_config(cfg, stage, args):
    cfg.override("classifier", epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                 l1=args.l1, l2=args.l2, **{f"{stage}_learning_rate": args.learning_rate})
    return TrainConfig(stage=stage,
                       learning_rate=cfg.get("classifier", f"{stage}_learning_rate", float),
                       epochs=cfg.get("classifier", "epochs", int),
                       batch_size=cfg.get("classifier", "batch_size", int),
                       seed=cfg.get("classifier", "seed", int),
                       l1=cfg.get("classifier", "l1", float), l2=cfg.get("classifier", "l2", float))


def _save_model(ws, name, ckpt):
    out = ws.model_dir(name)
    _atomic_write(out / "checkpoint.clfc", ckpt.to_bytes())
    rows = ["epoch,batch,loss"] + [
        f"{i // ckpt.batches_per_epoch},{i % ckpt.batches_per_epoch},{float(v):.9g}"
        for i, v in enumerate(ckpt.loss_curve)]
    _atomic_write(out / "loss.csv", "\n".join(rows) + "\n")


def cmd_clf_train(args, cfg, ws):
    tcfg = _train_config(cfg, "pretrain", args)
    data = concat_datasets([ws.load_dataset(d) for d in args.dataset])
    cfg.snapshot(ws.model_dir(args.name), {"command": "clf-train", "name": args.name,
                                           "dataset": " ".join(args.dataset)})
    ckpt = train_classifier(tcfg.seed, data, tcfg)
    _save_model(ws, args.name, ckpt)
    print(f"{args.name}: pretrained on {len(data)} images, final loss {ckpt.loss_curve[-1]:.4f}"
          if len(ckpt.loss_curve) else f"{args.name}: zero epochs")


def cmd_clf_finetune(args, cfg, ws):
    tcfg = _train_config(cfg, "finetune", args)
    start = ws.load_model(args.init)
    data = concat_datasets([ws.load_dataset(d) for d in args.dataset])
    cfg.snapshot(ws.model_dir(args.name), {"command": "clf-finetune", "name": args.name,
                                           "init": args.init, "dataset": " ".join(args.dataset)})
    ckpt = train_classifier(start, data, tcfg)
    _save_model(ws, args.name, ckpt)
    print(f"{args.name}: fine-tuned {args.init} on {len(data)} images")


def _report_json(report, pc):
    return json.dumps({
        "label": report.label, "seed": report.seed, "config_hash": report.config_hash,
        "dataset_sizes": report.dataset_sizes, "test_hash": report.test_hash,
        "accuracy": {str(c): pc.accuracy[c] for c in pc.classes},
        "counts": {str(c): pc.counts[c] for c in pc.classes}}, indent=1, sort_keys=True) + "\n"


def _read_report(directory):
    path = Path(directory) / "report.json"
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        pc = PerClassAccuracy({int(k): v for k, v in raw["accuracy"].items()},
                              {int(k): v for k, v in raw["counts"].items()})
        return RunReport(raw["label"], pc, raw["seed"], raw["config_hash"],
                         raw["dataset_sizes"], raw["test_hash"])
    except OSError:
        raise DataError(f"no evaluation report at {path}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed evaluation report {path}: {exc}") from None


def cmd_evaluate(args, cfg, ws):
    ckpt = ws.load_model(args.model)
    test = ws.load_dataset(args.test, "test")
    preds, _ = predict_batch(ckpt, test.pixels)
    label = args.label or args.model
    out = ws.root / "evals" / label
    model_hash = (ws.model_dir(args.model) / "config.sha256")
    report = RunReport(label, per_class_accuracy(preds, test.labels), seed=ckpt.config.seed,
                       config_hash=model_hash.read_text().strip() if model_hash.is_file() else "",
                       dataset_sizes={"train_batches_per_epoch": ckpt.batches_per_epoch,
                                      "test": len(test)},
                       test_hash=dataset_hash(test))
    cfg.snapshot(out, {"command": "evaluate", "model": args.model, "test": args.test,
                       "label": label})
    _atomic_write(out / "metrics.csv", emit_csv(report))
    _atomic_write(out / "plot_series.txt", emit_plot_series([report]))
    _atomic_write(out / "report.json", _report_json(report, report.per_class))
    print(f"{label}: mean per-class accuracy {report.mean:.2f}%")


def cmd_report(args, cfg, ws):
    table = ComparisonTable()
    for d in args.runs:
        table.add(_read_report(d))
    series = emit_plot_series(table)
    out = ws.root / "reports" / args.name
    cfg.snapshot(out, {"command": "report", "name": args.name, "runs": " ".join(args.runs)})
    _atomic_write(out / "comparison.csv", table.summary_csv())
    _atomic_write(out / "plot_series.txt", series)
    sys.stdout.write(table.summary_csv().decode("utf-8"))
    sys.stdout.write(series)


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="signgan", description="Traffic-sign classifier with GAN-based data extension.")
    p.add_argument("--config", help="INI file with [ingest] [augment] [gan] [sample] [classifier]")
    p.add_argument("--out", help="output root (default: $SIGNGAN_OUT or ./signgan_out)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("ingest", help="decode an image tree into train/test SNF files")
    s.add_argument("--source", action="append", required=True,
                   help="directory of <class_id>/ image folders; repeatable")
    s.add_argument("--name", required=True)
    s.add_argument("--test-fraction", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--per-class", type=int, help="keep at most N images per class (0: all)")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("augment", help="classic class-safe augmentation")
    s.add_argument("--dataset", required=True)
    s.add_argument("--name", required=True)
    s.add_argument("--multiplier", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--policy", help="class_id,op,cap table replacing the built-in policy")
    s.set_defaults(fn=cmd_augment)

    s = sub.add_parser("gan-train", help="train one DCGAN per class")
    s.add_argument("--dataset", required=True)
    s.add_argument("--input_height", type=int)
    s.add_argument("--output_height", type=int)
    s.add_argument("--train", action="store_true")
    s.add_argument("--class-id", type=int, choices=range(NUM_CLASSES), metavar="{0..9}")
    s.add_argument("--name", help="GAN set name (default: the dataset name)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_gan_train)

    s = sub.add_parser("gan-sample", help="draw labeled synthetic images from trained GANs")
    s.add_argument("--gans", required=True, help="GAN set name")
    s.add_argument("--name", required=True)
    s.add_argument("--count", type=int, help="images per class")
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_gan_sample)

    for name, fn, helptext in (("clf-train", cmd_clf_train, "pretrain a classifier"),
                               ("clf-finetune", cmd_clf_finetune, "fine-tune a classifier")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--dataset", action="append", required=True,
                       help="training dataset name; repeat to train on the union")
        s.add_argument("--name", required=True)
        if name == "clf-finetune":
            s.add_argument("--init", required=True, help="pretrained model name")
        s.add_argument("--epochs", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--learning-rate", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--l1", type=float)
        s.add_argument("--l2", type=float)
        s.set_defaults(fn=fn)

    s = sub.add_parser("evaluate", help="per-class accuracy on a dataset's test split")
    s.add_argument("--model", required=True)
    s.add_argument("--test", required=True, help="dataset whose test split is used")
    s.add_argument("--label")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("report", help="compare evaluations made on one test split")
    s.add_argument("--runs", nargs="+", required=True, help="evaluation directories")
    s.add_argument("--name", default="comparison")
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = PipelineConfig.load(args.config)
        args.fn(args, cfg, Workspace(output_root(args.out)))
    except SignGanError as exc:
        print(f"signgan: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
