"""Multi-scale grayscale sign classifier with pretrain / finetune stages."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import checkpoint as container
from .dataio import NUM_CLASSES
from .errors import DataError, FormatError, NumericError
from .numcore import ops
from .numcore.layers import Conv2d, Dense, load_state, state_of
from .numcore.optim import AdamState, adam_step, elastic_net_penalty
from .numcore.tensor import Tensor, backward

CLF_MAGIC = b"CLFC"
STAGE_LEARNING_RATES = {"pretrain": 0.001, "finetune": 0.0001}
FEATURE_LENGTH = 32 * 7 * 7 + 64 * 7 * 7


class ClassifierNet:
    """conv5x5(32)+ReLU+pool -> conv5x5(64)+ReLU+pool, with the first stage
    pooled once more and fed to the head alongside the second (multi-scale)."""

    def __init__(self, rng, dtype=np.float32):
        self.conv1 = Conv2d("c.conv1", 1, 32, 5, 1, 2, rng, dtype)
        self.conv2 = Conv2d("c.conv2", 32, 64, 5, 1, 2, rng, dtype)
        self.fc1 = Dense("c.fc1", FEATURE_LENGTH, 100, rng, dtype)
        self.fc2 = Dense("c.fc2", 100, NUM_CLASSES, rng, dtype)
        self.layers = [self.conv1, self.conv2, self.fc1, self.fc2]

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def weights(self):
        """Parameters subject to the elastic-net penalty (biases excluded)."""
        return [self.conv1.kernel, self.conv2.kernel, self.fc1.weight, self.fc2.weight]

    def features(self, x):
        if x.shape[1:] != (28, 28, 1):
            raise DataError(f"classifier expects (N, 28, 28, 1) images, got {x.shape}")
        s1 = ops.max_pool2d(ops.relu(self.conv1(x)))
        s2 = ops.max_pool2d(ops.relu(self.conv2(s1)))
        return ops.concat([ops.flatten(ops.max_pool2d(s1)), ops.flatten(s2)], axis=1)

    def __call__(self, x):
        return self.fc2(ops.relu(self.fc1(self.features(x))))


def build_classifier(seed, dtype=np.float32):
    return ClassifierNet(np.random.default_rng([seed, 3]), dtype)


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    learning_rate: Optional[float] = None
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    l1: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if self.stage not in STAGE_LEARNING_RATES:
            raise DataError(f"unknown training stage {self.stage!r}")
        if self.learning_rate is None:
            self.learning_rate = STAGE_LEARNING_RATES[self.stage]
        if self.epochs < 0 or self.batch_size < 1:
            raise DataError(f"bad epochs/batch_size: {self.epochs}/{self.batch_size}")
        if self.learning_rate < 0 or self.l1 < 0 or self.l2 < 0:
            raise DataError("learning rate and elastic-net lambdas must be non-negative")


@dataclass
class ClfCheckpoint:
    config: TrainConfig
    state: dict
    adam: AdamState
    epochs_completed: int
    loss_curve: np.ndarray
    batches_per_epoch: int
    init_seed: int = 0

    def net(self):
        net = build_classifier(self.init_seed)
        load_state(net.layers, self.state)
        return net

    def to_bytes(self):
        names = _param_names()
        cfg = {"config": asdict(self.config), "epochs_completed": self.epochs_completed,
               "batches_per_epoch": self.batches_per_epoch, "init_seed": self.init_seed,
               "adam": container.adam_config(self.adam)}
        tensors = dict(self.state)
        tensors.update(container.adam_to_tensors("adam", self.adam, names))
        tensors["loss_curve"] = np.asarray(self.loss_curve, np.float32).reshape(-1)
        return container.pack(CLF_MAGIC, cfg, tensors)

    @classmethod
    def from_bytes(cls, data):
        cfg, tensors = container.unpack(data, CLF_MAGIC)
        try:
            names = _param_names()
            state = {n: tensors[n] for n in names}
            return cls(TrainConfig(**cfg["config"]), state,
                       container.adam_from("adam", cfg["adam"], tensors, names),
                       cfg["epochs_completed"], tensors["loss_curve"],
                       cfg["batches_per_epoch"], cfg["init_seed"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"classifier checkpoint is missing field {exc}") from None


def _param_names():
    return [p.name for p in build_classifier(0).params()]


def network_loss(net, images, labels, l1=0.0, l2=0.0):
    loss = ops.softmax_cross_entropy(net(Tensor(images)), labels)
    if l1 or l2:
        loss = ops.add(loss, elastic_net_penalty(net.weights(), l1, l2))
    return loss


def train_classifier(start, dataset, config):
    """Train from ``start`` (a seed for pretraining, a ClfCheckpoint for finetuning).

    Adam state starts fresh for every call, so a finetune run is a new
    optimization at its own learning rate. Partial final batches are kept.
    """
    if len(dataset) == 0:
        raise DataError("classifier training set is empty")
    if config.stage == "finetune":
        if not isinstance(start, ClfCheckpoint):
            raise DataError("finetune stage requires a pretrained classifier checkpoint")
        init_seed, net = start.init_seed, start.net()
    else:
        init_seed = start.init_seed if isinstance(start, ClfCheckpoint) else int(start)
        net = start.net() if isinstance(start, ClfCheckpoint) else build_classifier(init_seed)
    params = net.params()
    adam = AdamState.for_params(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng([config.seed, 2])
    n, bs = len(dataset), config.batch_size
    per_epoch = -(-n // bs)
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b in range(per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            loss = network_loss(net, dataset.pixels[idx], dataset.labels[idx], config.l1, config.l2)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite classifier loss at epoch {epoch} batch {b}")
            adam_step(params, backward(loss, params), adam)
            curve.append(value)
    return ClfCheckpoint(config, state_of(net.layers), adam, config.epochs,
                         np.array(curve, np.float32), per_epoch, init_seed)


def predict_batch(model, images, chunk=256):
    """Return ``(class_ids, probabilities)``; argmax ties go to the lower class id."""
    net = model.net() if isinstance(model, ClfCheckpoint) else model
    images = np.asarray(images, np.float32)
    logits = np.empty((len(images), NUM_CLASSES), np.float32)
    for s in range(0, len(images), chunk):
        logits[s:s + chunk] = net(Tensor(images[s:s + chunk])).data
    return np.argmax(logits, axis=1).astype(np.int64), ops.softmax(logits)
