import numpy as np
import pytest

from signgan.dataio import SignDataset
from signgan.errors import BadMagicError, DataError
from signgan.gan import (Discriminator, GanCheckpoint, GanConfig, Generator, audit_architecture,
                         build_gan, discriminator_accuracy, discriminator_step, generator_step,
                         sample_generator, synthesize_labeled_set, train_gan)
from signgan.numcore import AdamState, Tensor
from signgan.numcore.layers import Activation, Dense, MaxPool2d


def blob_dataset(n, class_id=0, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:28, 0:28]
    disk = ((xx - 13.5) ** 2 + (yy - 13.5) ** 2 < 64).astype(np.float32) * 1.6 - 0.8
    px = np.clip(disk[None, :, :, None] + rng.normal(0, 0.1, (n, 28, 28, 1)), -1, 1)
    return SignDataset(px.astype(np.float32), np.full(n, class_id), ["toy"] * n)


@pytest.fixture(scope="module")
def short_run():
    cfg = GanConfig(class_id=3, epochs=2, batch_size=16, seed=7)
    seen = []
    ckpt = train_gan(blob_dataset(40, class_id=3), cfg, on_epoch=seen.append)
    return cfg, ckpt, seen


def test_shapes():
    g, d = build_gan(GanConfig())
    z = Tensor(np.zeros((3, 100), np.float32))
    img = g(z, train=False)
    assert img.shape == (3, 28, 28, 1)
    assert d(img, train=False).shape == (3, 1)
    assert d.logits(img, train=False).shape == (3, 1)


def test_audit_clean():
    assert audit_architecture(*build_gan(GanConfig())) == []


def test_audit_flags_violations():
    rng = np.random.default_rng(0)
    g = Generator(100, rng)
    d = Discriminator(rng)
    d.layers.insert(2, MaxPool2d("d.pool"))
    d.layers.insert(-2, Dense("d.hidden", 6272, 6272, np.random.default_rng(1)))
    g.layers[3] = Activation("g.lrelu0", "leaky_relu")
    found = " ".join(audit_architecture(g, d))
    assert "pooling" in found and "fully connected" in found and "ReLU" in found


def test_loss_history_and_callback(short_run):
    cfg, ckpt, seen = short_run
    # 40 images at batch 16: 2 full batches per epoch, remainder dropped
    assert ckpt.loss_history.shape == (4, 2)
    assert np.all(np.isfinite(ckpt.loss_history))
    assert [c.epochs_completed for c in seen] == [1, 2]
    lines = ckpt.loss_csv().splitlines()
    assert lines[0] == "epoch,batch,d_loss,g_loss"
    assert [l.split(",")[:2] for l in lines[1:]] == [["0", "0"], ["0", "1"], ["1", "0"], ["1", "1"]]


def test_training_deterministic(short_run):
    cfg, ckpt, _ = short_run
    again = train_gan(blob_dataset(40, class_id=3), cfg)
    assert again.to_bytes() == ckpt.to_bytes()


def test_checkpoint_round_trip(short_run):
    _, ckpt, _ = short_run
    data = ckpt.to_bytes()
    assert data[:4] == b"GANC"
    back = GanCheckpoint.from_bytes(data)
    assert back.to_bytes() == data
    np.testing.assert_array_equal(sample_generator(back, 5, 1), sample_generator(ckpt, 5, 1))
    with pytest.raises(BadMagicError):
        GanCheckpoint.from_bytes(b"CLFC" + data[4:])


def test_samples_in_range_and_chunking(short_run):
    _, ckpt, _ = short_run
    a = sample_generator(ckpt, 10, seed=4, chunk=3)
    b = sample_generator(ckpt, 10, seed=4)
    np.testing.assert_allclose(a, b, atol=1e-6)
    assert a.min() >= -1 and a.max() <= 1


def test_discriminator_accuracy_range(short_run):
    _, ckpt, _ = short_run
    acc = discriminator_accuracy(ckpt, blob_dataset(8).pixels, sample_generator(ckpt, 8, 0))
    assert 0.0 <= acc <= 1.0


def test_synthesize_labels_and_duplicates(short_run):
    _, ckpt, _ = short_run
    out = synthesize_labeled_set([ckpt], 6, seed=2)
    assert len(out) == 6 and set(out.labels.tolist()) == {3}
    assert set(out.source_tags) == {"synthetic"}
    with pytest.raises(DataError):
        synthesize_labeled_set([ckpt, ckpt], 2, seed=2)


def test_training_set_validation():
    cfg = GanConfig(class_id=0, epochs=1, batch_size=4)
    with pytest.raises(DataError):
        train_gan(blob_dataset(8, class_id=1), cfg)
    with pytest.raises(DataError):
        train_gan(blob_dataset(3), cfg)
    bad = blob_dataset(8)
    bad.pixels[0, 0, 0, 0] = 2.0
    with pytest.raises(DataError):
        train_gan(bad, cfg)
    with pytest.raises(DataError):
        GanConfig(batch_size=0)


def test_each_step_touches_only_its_network():
    gen, disc = build_gan(GanConfig(seed=1))
    rng = np.random.default_rng(0)
    real = Tensor(blob_dataset(4).pixels)
    z = rng.uniform(-1, 1, (4, 100)).astype(np.float32)
    snap = lambda net: [p.data.copy() for p in net.params()]

    g0, d0 = snap(gen), snap(disc)
    discriminator_step(gen, disc, real, z, AdamState.for_params(disc.params()))
    assert all(np.array_equal(a, b) for a, b in zip(g0, snap(gen)))
    assert not all(np.array_equal(a, b) for a, b in zip(d0, snap(disc)))

    g1, d1 = snap(gen), snap(disc)
    generator_step(gen, disc, z, AdamState.for_params(gen.params()))
    assert all(np.array_equal(a, b) for a, b in zip(d1, snap(disc)))
    assert not all(np.array_equal(a, b) for a, b in zip(g1, snap(gen)))
    assert all(p.requires_grad for p in gen.params() + disc.params())
