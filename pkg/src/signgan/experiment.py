"""Three-arm comparison on the toy corpus: baseline, classically augmented,
GAN-extended. Shared by the acceptance suite and ``scripts/trend_experiment.py``."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .augment import AugmentPlan, build_augmented_dataset
from .classifier import TrainConfig, predict_batch, train_classifier
from .dataio import NUM_CLASSES, concat_datasets, dataset_hash, split_dataset
from .evalreport import ComparisonTable, RunReport, per_class_accuracy
from .gan import GanConfig, synthesize_labeled_set, train_gan
from .toycorpus import SOURCES, render_dataset


@dataclass
class TrendConfig:
    per_source_per_class: int = 200
    base_source: str = "alpha"
    base_per_class: int = 50
    test_fraction: float = 0.3
    pretrain_epochs: int = 15
    finetune_epochs: int = 10
    clf_batch_size: int = 32
    augment_multiplier: int = 4
    gan_epochs: int = 25
    gan_batch_size: int = 16
    synthetic_per_class: int = 200
    log: bool = False


def superset_split(cfg, seed):
    superset = concat_datasets([render_dataset(s, cfg.per_source_per_class, seed)
                                for s in sorted(SOURCES)])
    return split_dataset(superset, cfg.test_fraction, seed)


def impoverished_base(train, cfg):
    """The first ``base_per_class`` training images of each class from one source."""
    tags = np.array(train.source_tags)
    idx = []
    for c in range(NUM_CLASSES):
        pool = np.flatnonzero((train.labels == c) & (tags == cfg.base_source))
        idx.extend(pool[:cfg.base_per_class])
    return train.subset(sorted(idx))


def evaluate(label, ckpt, test, seed, sizes, test_hash):
    preds, _ = predict_batch(ckpt, test.pixels)
    return RunReport(label, per_class_accuracy(preds, test.labels), seed=seed,
                     dataset_sizes=sizes, test_hash=test_hash)


def run_trend_seed(cfg, seed):
    """Returns a ComparisonTable with rows baseline, augmented, gan."""
    clock = time.perf_counter()

    def say(msg):
        if cfg.log:
            print(f"[seed {seed} +{time.perf_counter() - clock:6.1f}s] {msg}", flush=True)

    split = superset_split(cfg, seed)
    test_hash = dataset_hash(split.test)
    base = impoverished_base(split.train, cfg)
    say(f"superset train {len(split.train)} test {len(split.test)} base {len(base)}")

    def clf(stage, epochs):
        return TrainConfig(stage=stage, epochs=epochs, batch_size=cfg.clf_batch_size, seed=seed)

    baseline = train_classifier(seed, base, clf("pretrain", cfg.pretrain_epochs))
    table = ComparisonTable()
    table.add(evaluate("baseline", baseline, split.test, seed, {"train": len(base)}, test_hash))
    say(f"baseline {table.rows[-1].mean:.2f}")

    augmented, _ = build_augmented_dataset(base, AugmentPlan(cfg.augment_multiplier, seed=seed))
    aug_ckpt = train_classifier(baseline, augmented, clf("finetune", cfg.finetune_epochs))
    table.add(evaluate("augmented", aug_ckpt, split.test, seed,
                       {"train": len(augmented)}, test_hash))
    say(f"augmented {table.rows[-1].mean:.2f}")

    gans = []
    for c in range(NUM_CLASSES):
        gcfg = GanConfig(class_id=c, epochs=cfg.gan_epochs, batch_size=cfg.gan_batch_size,
                         seed=seed)
        gans.append(train_gan(split.train.of_class(c), gcfg))
        say(f"gan class {c} done")
    synthetic = synthesize_labeled_set(gans, cfg.synthetic_per_class, seed)
    extended = concat_datasets([base, synthetic])
    gan_ckpt = train_classifier(baseline, extended, clf("finetune", cfg.finetune_epochs))
    table.add(evaluate("gan", gan_ckpt, split.test, seed, {"train": len(extended)}, test_hash))
    say(f"gan {table.rows[-1].mean:.2f}")
    return table
