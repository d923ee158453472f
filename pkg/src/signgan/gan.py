"""DCGAN for 28x28 grayscale signs: one unconditional GAN per sign class."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint as container
from .dataio import IMAGE_SIZE, SignDataset
from .errors import DataError, FormatError, NumericError
from .numcore import ops
from .numcore.layers import (Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Dense, Flatten,
                             Reshape, Sequential, load_state, state_of)
from .numcore.optim import AdamState, adam_step
from .numcore.tensor import Tensor, backward, frozen

GAN_MAGIC = b"GANC"


@dataclass
class GanConfig:
    class_id: int = 0
    latent_dim: int = 100
    epochs: int = 25
    batch_size: int = 64
    learning_rate: float = 0.0002
    beta1: float = 0.5
    leaky_alpha: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise DataError(f"GanConfig.{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.class_id < 10:
            raise DataError(f"GanConfig.class_id must be in 0..9, got {self.class_id}")


class Generator(Sequential):
    """latent -> dense 7*7*128 -> BN/ReLU -> up 14x14x64 -> BN/ReLU -> up 28x28x1 -> tanh."""

    def __init__(self, latent_dim, rng, dtype=np.float32):
        super().__init__([
            Dense("g.fc", latent_dim, 7 * 7 * 128, rng, dtype, bias=False),
            Reshape("g.reshape", (7, 7, 128)),
            BatchNorm2d("g.bn0", 128, dtype),
            Activation("g.relu0", "relu"),
            ConvTranspose2d("g.up1", 128, 64, 4, 2, 1, rng, dtype, bias=False),
            BatchNorm2d("g.bn1", 64, dtype),
            Activation("g.relu1", "relu"),
            ConvTranspose2d("g.up2", 64, 1, 4, 2, 1, rng, dtype),
            Activation("g.tanh", "tanh"),
        ])


class Discriminator(Sequential):
    """28x28x1 -> conv 14x14x64/LReLU -> conv 7x7x128/BN/LReLU -> dense 1 -> sigmoid."""

    def __init__(self, rng, alpha=0.2, dtype=np.float32):
        super().__init__([
            Conv2d("d.conv1", 1, 64, 4, 2, 1, rng, dtype),
            Activation("d.lrelu1", "leaky_relu", alpha),
            Conv2d("d.conv2", 64, 128, 4, 2, 1, rng, dtype, bias=False),
            BatchNorm2d("d.bn2", 128, dtype),
            Activation("d.lrelu2", "leaky_relu", alpha),
            Flatten("d.flatten"),
            Dense("d.head", 7 * 7 * 128, 1, rng, dtype),
            Activation("d.sigmoid", "sigmoid"),
        ])

    def logits(self, x, train=True):
        return self.forward(x, train, upto=-1)


def build_gan(config, dtype=np.float32):
    rng = np.random.default_rng([config.seed, 0])
    return Generator(config.latent_dim, rng, dtype), Discriminator(rng, config.leaky_alpha, dtype)


def audit_architecture(generator, discriminator):
    """Structural check of the DCGAN guidelines. Returns a list of violations."""
    problems = []
    for net_name, net in (("generator", generator), ("discriminator", discriminator)):
        kinds = [layer.kind for layer in net]
        if any("pool" in k for k in kinds):
            problems.append(f"{net_name} contains a pooling layer")
        if "batch_norm" not in kinds:
            problems.append(f"{net_name} has no batch-norm layer")
    if not any(isinstance(l, ConvTranspose2d) and l.stride > 1 for l in generator):
        problems.append("generator does not upsample with fractional-strided convolutions")
    if not any(isinstance(l, Conv2d) and l.stride > 1 for l in discriminator):
        problems.append("discriminator does not downsample with strided convolutions")

    g_acts = [l for l in generator if isinstance(l, Activation)]
    if not g_acts or g_acts[-1].fn != "tanh" or generator.layers[-1] is not g_acts[-1]:
        problems.append("generator output activation is not tanh")
    if any(a.fn != "relu" for a in g_acts[:-1]):
        problems.append("generator hidden activations are not all ReLU")

    d_acts = [l for l in discriminator if isinstance(l, Activation)]
    if not d_acts or d_acts[-1].fn != "sigmoid" or discriminator.layers[-1] is not d_acts[-1]:
        problems.append("discriminator output is not a sigmoid probability")
    if any(a.fn != "leaky_relu" for a in d_acts[:-1]):
        problems.append("discriminator hidden activations are not all LeakyReLU")
    d_dense = [l for l in discriminator if isinstance(l, Dense)]
    weighted = [l for l in discriminator if isinstance(l, (Dense, Conv2d))]
    if len(d_dense) > 1 or (d_dense and (weighted[-1] is not d_dense[0]
                                         or d_dense[0].weight.shape[1] != 1)):
        problems.append("discriminator has hidden fully connected layers")
    return problems


# ---------------------------------------------------------------- checkpoint

@dataclass
class GanCheckpoint:
    config: GanConfig
    generator_state: dict
    discriminator_state: dict
    g_adam: AdamState
    d_adam: AdamState
    epochs_completed: int = 0
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.float32))
    batches_per_epoch: int = 0

    def generator(self):
        gen, _ = build_gan(self.config)
        load_state(gen, self.generator_state)
        return gen

    def discriminator(self):
        _, disc = build_gan(self.config)
        load_state(disc, self.discriminator_state)
        return disc

    def to_bytes(self):
        g_names, d_names = _param_names(self.config)
        cfg = {"config": asdict(self.config), "epochs_completed": self.epochs_completed,
               "batches_per_epoch": self.batches_per_epoch,
               "g_adam": container.adam_config(self.g_adam),
               "d_adam": container.adam_config(self.d_adam)}
        tensors = dict(self.generator_state)
        tensors.update(self.discriminator_state)
        tensors.update(container.adam_to_tensors("adam.g", self.g_adam, g_names))
        tensors.update(container.adam_to_tensors("adam.d", self.d_adam, d_names))
        tensors["loss_history"] = np.asarray(self.loss_history, np.float32).reshape(-1, 2)
        return container.pack(GAN_MAGIC, cfg, tensors)

    @classmethod
    def from_bytes(cls, data):
        cfg, tensors = container.unpack(data, GAN_MAGIC)
        try:
            config = GanConfig(**cfg["config"])
            g_names, d_names = _param_names(config)
            gen, disc = build_gan(config)
            g_state = {k: tensors[k] for k in state_of(gen.layers)}
            d_state = {k: tensors[k] for k in state_of(disc.layers)}
            return cls(config, g_state, d_state,
                       container.adam_from("adam.g", cfg["g_adam"], tensors, g_names),
                       container.adam_from("adam.d", cfg["d_adam"], tensors, d_names),
                       cfg["epochs_completed"], tensors["loss_history"].reshape(-1, 2),
                       cfg["batches_per_epoch"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"GAN checkpoint is missing field {exc}") from None

    def loss_csv(self):
        buf = io.StringIO()
        buf.write("epoch,batch,d_loss,g_loss\n")
        per = max(self.batches_per_epoch, 1)
        for i, (d, g) in enumerate(self.loss_history):
            buf.write(f"{i // per},{i % per},{float(d):.9g},{float(g):.9g}\n")
        return buf.getvalue()


def _param_names(config):
    gen, disc = build_gan(config)
    return [p.name for p in gen.params()], [p.name for p in disc.params()]


# ---------------------------------------------------------------- training

def _validate_training_set(dataset, config):
    if len(dataset) == 0:
        raise DataError("GAN training set is empty")
    labels = set(dataset.labels.tolist())
    if labels != {config.class_id}:
        raise DataError(f"GAN for class {config.class_id} got labels {sorted(labels)}")
    if dataset.pixels.min() < -1 or dataset.pixels.max() > 1:
        raise DataError("GAN training images must be canonical (values in [-1, 1])")
    if len(dataset) < config.batch_size:
        raise DataError(f"{len(dataset)} images is fewer than one batch of {config.batch_size}")


def _latent(rng, n, dim):
    return rng.uniform(-1.0, 1.0, size=(n, dim)).astype(np.float32)


def discriminator_step(gen, disc, real, z, adam):
    """One Adam step on D: real images towards 1, generated towards 0. G is untouched."""
    d_params = disc.params()
    with frozen(gen.params()):
        fake = gen(Tensor(z), train=True)
    loss = ops.add(ops.binary_cross_entropy_with_logits(disc.logits(real), 1.0),
                   ops.binary_cross_entropy_with_logits(disc.logits(fake.detach()), 0.0))
    adam_step(d_params, backward(loss, d_params), adam)
    return loss


def generator_step(gen, disc, z, adam):
    """One Adam step on G with the non-saturating loss; D parameters are frozen."""
    g_params = gen.params()
    with frozen(disc.params()):
        loss = ops.binary_cross_entropy_with_logits(disc.logits(gen(Tensor(z), train=True)), 1.0)
    adam_step(g_params, backward(loss, g_params), adam)
    return loss


def train_gan(dataset, config, on_epoch=None):
    """Adversarial training; ``on_epoch(checkpoint)`` is called after every epoch.

    Per batch: one discriminator step on real (target 1) and generated (target 0)
    images, then one generator step pushing D(G(z)) towards 1. The last partial
    batch of each epoch is dropped.
    """
    _validate_training_set(dataset, config)
    gen, disc = build_gan(config)
    hyper = dict(learning_rate=config.learning_rate, beta1=config.beta1)
    g_adam = AdamState.for_params(gen.params(), **hyper)
    d_adam = AdamState.for_params(disc.params(), **hyper)
    rng = np.random.default_rng([config.seed, 1])
    n, bs = len(dataset), config.batch_size
    per_epoch = n // bs
    history = []
    ckpt = None
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b in range(per_epoch):
            real = Tensor(dataset.pixels[order[b * bs:(b + 1) * bs]])
            z_d = _latent(rng, bs, config.latent_dim)
            z_g = _latent(rng, bs, config.latent_dim)
            d_loss = discriminator_step(gen, disc, real, z_d, d_adam)
            g_loss = generator_step(gen, disc, z_g, g_adam)
            d_val, g_val = float(d_loss.data), float(g_loss.data)
            if not (np.isfinite(d_val) and np.isfinite(g_val)):
                raise NumericError(f"non-finite GAN loss at epoch {epoch} batch {b}: "
                                   f"d={d_val} g={g_val}")
            history.append((d_val, g_val))
        ckpt = GanCheckpoint(config, state_of(gen.layers), state_of(disc.layers),
                             _copy_adam(g_adam), _copy_adam(d_adam), epoch + 1,
                             np.array(history, np.float32).reshape(-1, 2), per_epoch)
        if on_epoch is not None:
            on_epoch(ckpt)
    return ckpt


def _copy_adam(state):
    out = AdamState(state.learning_rate, state.beta1, state.beta2, state.epsilon, state.step_count)
    out.first_moment = [m.copy() for m in state.first_moment]
    out.second_moment = [v.copy() for v in state.second_moment]
    return out


# ---------------------------------------------------------------- sampling

def sample_generator(ckpt, n, seed, chunk=256):
    """``n`` eval-mode generator samples, shape (n, 28, 28, 1)."""
    if n < 1:
        raise DataError(f"sample count must be at least 1, got {n}")
    gen = ckpt.generator()
    rng = np.random.default_rng(seed)
    z = _latent(rng, n, ckpt.config.latent_dim)
    out = np.empty((n, IMAGE_SIZE, IMAGE_SIZE, 1), np.float32)
    for start in range(0, n, chunk):
        out[start:start + chunk] = gen(Tensor(z[start:start + chunk]), train=False).data
    return out


def discriminator_scores(ckpt, images, chunk=256):
    disc = ckpt.discriminator()
    out = [disc(Tensor(images[s:s + chunk]), train=False).data[:, 0]
           for s in range(0, len(images), chunk)]
    return np.concatenate(out) if out else np.zeros(0, np.float32)


def discriminator_accuracy(ckpt, real, fake):
    """Fraction of real images scored > 0.5 plus fake images scored < 0.5."""
    r = discriminator_scores(ckpt, real)
    f = discriminator_scores(ckpt, fake)
    return float((np.sum(r > 0.5) + np.sum(f < 0.5)) / (len(r) + len(f)))


def synthesize_labeled_set(checkpoints, count_per_class, seed):
    """``count_per_class`` samples from each per-class GAN, labeled with its class id."""
    ids = [c.config.class_id for c in checkpoints]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise DataError(f"duplicate GAN checkpoints for classes {dup}")
    parts_px, parts_lab = [], []
    for ckpt in sorted(checkpoints, key=lambda c: c.config.class_id):
        c = ckpt.config.class_id
        parts_px.append(sample_generator(ckpt, count_per_class, [seed, c]))
        parts_lab.append(np.full(count_per_class, c, np.uint8))
    if not parts_px:
        return SignDataset.empty()
    labels = np.concatenate(parts_lab)
    return SignDataset(np.concatenate(parts_px), labels, ["synthetic"] * len(labels))
