"""Procedural stand-in corpus: ten rendered sign classes at 28x28 RGB.

Each image is drawn in a canonical sign frame (u, v) in [-1, 1], posed with a
random rotation / scale / offset, composited over a background, supersampled
4x and box-filtered down, then given per-image lighting and sensor noise.
Three "sources" differ in palette, border weight, background and blur, which
plays the role of separately collected national datasets.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import IMAGE_SIZE, NUM_CLASSES, SignDataset, encode_ppm, preprocess

SUPERSAMPLE = 4

RED = np.array([0.80, 0.08, 0.10])
WHITE = np.array([0.96, 0.96, 0.94])
BLACK = np.array([0.06, 0.06, 0.07])
YELLOW = np.array([0.98, 0.80, 0.05])

DIGITS = {
    "0": ["111", "101", "101", "101", "111"],
    "1": ["010", "110", "010", "010", "111"],
    "3": ["111", "001", "111", "001", "111"],
    "5": ["111", "100", "111", "001", "111"],
    "7": ["111", "001", "010", "010", "010"],
}
SPEED_TEXT = {3: "30", 4: "50", 5: "70", 6: "100"}


@dataclass(frozen=True)
class SourceStyle:
    desaturate: float
    exposure: float
    border: float          # ring / rim thickness in sign units
    background: tuple      # base RGB of the scene behind the sign
    texture: float         # amplitude of blotchy background texture
    blur: int              # extra box blur radius at supersampled resolution
    noise: float


SOURCES = {
    "alpha": SourceStyle(0.0, 1.00, 0.22, (0.70, 0.78, 0.85), 0.05, 0, 0.02),
    "beta": SourceStyle(0.35, 0.75, 0.16, (0.30, 0.42, 0.25), 0.20, 2, 0.04),
    "gamma": SourceStyle(0.15, 1.20, 0.28, (0.55, 0.55, 0.55), 0.12, 4, 0.03),
}


def _text_mask(u, v, text, height):
    """Pixels of a 3x5 bitmap string centred at the origin, ``height`` tall."""
    cell = height / 5.0
    width = (4 * len(text) - 1) * cell
    col = np.floor((u + width / 2) / cell).astype(int)
    row = np.floor((v + height / 2) / cell).astype(int)
    inside = (col >= 0) & (col < 4 * len(text) - 1) & (row >= 0) & (row < 5)
    mask = np.zeros(u.shape, bool)
    for k, ch in enumerate(text):
        glyph = np.array([[b == "1" for b in r] for r in DIGITS[ch]])
        local = col - 4 * k
        sel = inside & (local >= 0) & (local < 3)
        mask[sel] = glyph[row[sel], local[sel]]
    return mask


def _paint(class_id, u, v, style):
    """Return (rgb, alpha) of the sign face in canonical coordinates."""
    r = np.hypot(u, v)
    b = style.border
    rgb = np.zeros(u.shape + (3,))
    alpha = np.zeros(u.shape, bool)

    def fill(mask, colour):
        rgb[mask] = colour

    if class_id in (0, 3, 4, 5, 6):
        alpha = r <= 1.0
        fill(alpha, RED)
        fill(r <= 1.0 - b, WHITE)
        if class_id in SPEED_TEXT:
            text = SPEED_TEXT[class_id]
            fill(_text_mask(u, v, text, 0.9 if len(text) == 2 else 0.62), BLACK)
    elif class_id == 1:
        alpha = r <= 1.0
        fill(alpha, RED)
        fill((np.abs(v) < 0.2) & (np.abs(u) < 0.68), WHITE)
    elif class_id == 2:
        octagon = np.maximum(np.maximum(np.abs(u), np.abs(v)),
                             (np.abs(u) + np.abs(v)) / np.sqrt(2)) <= 0.96
        alpha = octagon
        fill(alpha, RED)
        letters = (np.abs(v) < 0.2) & (np.abs(u) < 0.72) & (np.mod(u + 0.72, 0.36) < 0.24)
        fill(letters, WHITE)
    elif class_id == 7:
        alpha = r <= 1.0
        fill(alpha, WHITE)
        fill(alpha & (r > 1.0 - 0.45 * b), BLACK)
        diag = np.abs(u + v) / np.sqrt(2)
        fill((r <= 1.0 - b) & (np.mod(diag, 0.22) < 0.07) & (diag < 0.55), BLACK)
    elif class_id == 8:
        d = np.abs(u) + np.abs(v)
        alpha = d <= 1.0
        fill(alpha, BLACK)
        fill(d <= 0.93, WHITE)
        fill(d <= 0.93 - b * 1.6, YELLOW)
    elif class_id == 9:
        # inverted triangle: top edge at v = -0.55, apex at v = 0.95
        def tri(margin):
            top = v >= -0.55 + margin
            side = np.abs(u) <= (0.95 - margin * 2 - v) / np.sqrt(3) * 1.15
            return top & side
        alpha = tri(0.0)
        fill(alpha, RED)
        fill(tri(b * 0.8), WHITE)
    else:
        raise ValueError(f"no renderer for class {class_id}")
    return rgb, alpha


def _box_blur(img, radius):
    if radius <= 0:
        return img
    k = 2 * radius + 1
    padded = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    c = padded.cumsum(0).cumsum(1)
    c = np.pad(c, ((1, 0), (1, 0), (0, 0)))
    return (c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]) / (k * k)


def render_sign(class_id, rng, style):
    """One 28x28x3 uint8 rendering of ``class_id`` in ``style``."""
    n = IMAGE_SIZE * SUPERSAMPLE
    ys, xs = np.mgrid[0:n, 0:n] + 0.5
    half = n / 2
    theta = np.deg2rad(rng.uniform(-8, 8))
    radius = half * rng.uniform(0.78, 0.95)
    cx = half + rng.uniform(-1.5, 1.5) * SUPERSAMPLE
    cy = half + rng.uniform(-1.5, 1.5) * SUPERSAMPLE
    dx, dy = (xs - cx) / radius, (ys - cy) / radius
    cos, sin = np.cos(theta), np.sin(theta)
    u, v = cos * dx + sin * dy, -sin * dx + cos * dy

    face, alpha = _paint(class_id, u, v, style)
    grey = face.mean(axis=-1, keepdims=True)
    face = (1 - style.desaturate) * face + style.desaturate * grey

    bg = np.asarray(style.background) * rng.uniform(0.8, 1.2, 3)
    blobs = rng.normal(0, 1, (7, 7, 3))
    blobs = np.kron(blobs, np.ones((n // 7 + 1, n // 7 + 1, 1)))[:n, :n]
    scene = bg + style.texture * _box_blur(blobs, SUPERSAMPLE * 2)
    img = np.where(alpha[..., None], face, scene)
    img = _box_blur(img, style.blur)
    img = img.reshape(IMAGE_SIZE, SUPERSAMPLE, IMAGE_SIZE, SUPERSAMPLE, 3).mean(axis=(1, 3))

    contrast = rng.uniform(0.75, 1.15)
    brightness = rng.uniform(-0.12, 0.12)
    img = (img - 0.5) * contrast + 0.5 + brightness
    img = img * style.exposure + rng.normal(0, style.noise, img.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def render_images(source, per_class, seed):
    """``[(class_id, rgb uint8)]`` with ``per_class`` renderings of each class."""
    style = SOURCES[source]
    out = []
    for c in range(NUM_CLASSES):
        rng = np.random.default_rng([seed, sorted(SOURCES).index(source), c])
        out += [(c, render_sign(c, rng, style)) for _ in range(per_class)]
    return out


def render_dataset(source, per_class, seed):
    """Same images as :func:`write_corpus` would ingest, built in memory."""
    images = render_images(source, per_class, seed)
    px = np.stack([preprocess(rgb) for _, rgb in images])
    labels = np.array([c for c, _ in images])
    return SignDataset(px, labels, [source] * len(labels))


def write_corpus(root, per_class, seed, sources=tuple(SOURCES)):
    """Write ``<root>/<source>/<class_id>/<n>.ppm`` for each source."""
    root = Path(root)
    for source in sources:
        for i, (c, rgb) in enumerate(render_images(source, per_class, seed)):
            d = root / source / str(c)
            d.mkdir(parents=True, exist_ok=True)
            (d / f"{i:05d}.ppm").write_bytes(encode_ppm(rgb))
    return root
