"""Image ingestion, canonical 28x28 grayscale preprocessing, splitting and the SNF format.

Canonical images are float32 arrays of shape (28, 28, 1) with values in [-1, 1].
A dataset keeps all images of one collection in a single (N, 28, 28, 1) array.
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, DataError, LabelRangeError, ParseError,
                     SizeMismatchError, UnsupportedFormatError, VersionError)

IMAGE_SIZE = 28
NUM_CLASSES = 10


@dataclass(frozen=True)
class SignClass:
    id: int
    name: str
    feature_tags: tuple


SIGN_CLASSES = (
    SignClass(0, "Closed to all in both directions", ("circle", "white", "red")),
    SignClass(1, "No entry", ("circle", "white stripe", "red")),
    SignClass(2, "Stop and give way", ("white text", "red")),
    SignClass(3, "Speed limit 30", ("circle", "white", "red", "black text")),
    SignClass(4, "Speed limit 50", ("circle", "white", "red", "black text")),
    SignClass(5, "Speed limit 70", ("circle", "white", "red", "black text")),
    SignClass(6, "Speed limit 100", ("circle", "white", "red", "black text")),
    SignClass(7, "End of restriction", ("circle", "white", "black")),
    SignClass(8, "Priority road", ("diamond", "white", "yellow")),
    SignClass(9, "Give way", ("triangle", "white", "red")),
)


@dataclass
class LabeledImage:
    pixels: np.ndarray
    class_id: int
    source_tag: str = ""


@dataclass
class SignDataset:
    pixels: np.ndarray                      # (N, 28, 28, 1) float32 in [-1, 1]
    labels: np.ndarray                      # (N,) uint8
    source_tags: list = field(default_factory=list)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32).reshape(-1, IMAGE_SIZE, IMAGE_SIZE, 1)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if len(self.pixels) != len(self.labels):
            raise DataError(f"{len(self.pixels)} images but {len(self.labels)} labels")
        if not self.source_tags:
            self.source_tags = [""] * len(self.labels)
        elif len(self.source_tags) != len(self.labels):
            raise DataError("one source tag per image required")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return LabeledImage(self.pixels[i], int(self.labels[i]), self.source_tags[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, IMAGE_SIZE, IMAGE_SIZE, 1), np.float32), np.zeros(0, np.uint8), [])

    @classmethod
    def from_images(cls, images):
        images = list(images)
        if not images:
            return cls.empty()
        return cls(np.stack([im.pixels for im in images]),
                   np.array([im.class_id for im in images]),
                   [im.source_tag for im in images])

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return SignDataset(self.pixels[indices], self.labels[indices],
                           [self.source_tags[i] for i in indices])

    def of_class(self, class_id):
        return self.subset(np.flatnonzero(self.labels == class_id))

    def class_histogram(self):
        return np.bincount(self.labels, minlength=NUM_CLASSES)

    def with_tag(self, tag):
        return SignDataset(self.pixels, self.labels, [tag] * len(self))


def concat_datasets(parts):
    parts = [p for p in parts if len(p)]
    if not parts:
        return SignDataset.empty()
    return SignDataset(np.concatenate([p.pixels for p in parts]),
                       np.concatenate([p.labels for p in parts]),
                       [t for p in parts for t in p.source_tags])


# ---------------------------------------------------------------- decoding

def _ppm_token(data, pos):
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("truncated PPM header", start)
    return data[start:pos], start, pos


def decode_ppm(data):
    data = bytes(data)
    if data[:2] != b"P6":
        raise ParseError("not a binary PPM (expected 'P6')", 0)
    pos = 2
    fields = []
    for label in ("width", "height", "maxval"):
        tok, start, pos = _ppm_token(data, pos)
        if not tok.isdigit():
            raise ParseError(f"invalid PPM {label} {tok!r}", start)
        fields.append((int(tok), start))
    (width, _), (height, hstart), (maxval, mstart) = fields
    if width < 1 or height < 1:
        raise ParseError("PPM dimensions must be positive", hstart)
    if maxval != 255:
        raise UnsupportedFormatError(f"PPM maxval {maxval} unsupported (only 255)", mstart)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after PPM header", pos)
    pos += 1
    need = width * height * 3
    if len(data) - pos < need:
        raise ParseError(f"truncated PPM raster: need {need} bytes, have {len(data) - pos}", len(data))
    return np.frombuffer(data, np.uint8, need, pos).reshape(height, width, 3).copy()


def encode_ppm(rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes()


_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_PNG_CHANNELS = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw, height, stride, bpp, offset):
    out = bytearray(height * stride)
    prev = bytearray(stride)
    pos = 0
    for y in range(height):
        if pos >= len(raw):
            raise ParseError("truncated PNG image data", offset)
        ftype = raw[pos]
        line = bytearray(raw[pos + 1:pos + 1 + stride])
        if len(line) != stride:
            raise ParseError("truncated PNG scanline", offset)
        pos += 1 + stride
        if ftype == 1:
            for i in range(bpp, stride):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif ftype == 2:
            for i in range(stride):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif ftype == 3:
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                upleft = prev[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + _paeth(left, prev[i], upleft)) & 0xFF
        elif ftype != 0:
            raise ParseError(f"unknown PNG filter type {ftype}", offset)
        out[y * stride:(y + 1) * stride] = line
        prev = line
    return bytes(out)


def decode_png(data):
    """Decode a non-interlaced PNG to RGB.

    Supports 8-bit gray/RGB/palette with or without alpha, plus 1/2/4-bit gray
    and palette images.
    """
    data = bytes(data)
    if data[:8] != _PNG_SIG:
        raise ParseError("bad PNG signature", 0)
    pos = 8
    header = None
    palette = None
    idat = []
    idat_offset = None
    while True:
        if pos + 8 > len(data):
            raise ParseError("truncated PNG chunk header", pos)
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + length]
        if len(body) != length or pos + 12 + length > len(data):
            raise ParseError(f"truncated PNG chunk {ctype!r}", pos)
        crc = struct.unpack(">I", data[pos + 8 + length:pos + 12 + length])[0]
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise ParseError(f"PNG chunk {ctype!r} CRC mismatch", pos)
        if ctype == b"IHDR":
            if length != 13:
                raise ParseError("malformed IHDR", pos)
            header = struct.unpack(">IIBBBBB", body)
            width, height, depth, color, _, _, interlace = header
            sub_byte_ok = color in (0, 3) and depth in (1, 2, 4)
            if (depth != 8 and not sub_byte_ok) or color not in _PNG_CHANNELS or interlace != 0:
                raise UnsupportedFormatError(
                    f"PNG depth={depth} color={color} interlace={interlace} unsupported", pos + 8)
        elif ctype == b"PLTE":
            palette = np.frombuffer(body, np.uint8).reshape(-1, 3)
        elif ctype == b"IDAT":
            idat_offset = pos if idat_offset is None else idat_offset
            idat.append(body)
        elif ctype == b"IEND":
            break
        pos += 12 + length
    if header is None:
        raise ParseError("PNG without IHDR", 8)
    if not idat:
        raise ParseError("PNG without image data", pos)
    width, height, depth, color, _, _, _ = header
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise ParseError(f"corrupt PNG image data ({exc})", idat_offset) from None
    channels = _PNG_CHANNELS[color]
    stride = (width * channels * depth + 7) // 8
    bpp = max(1, channels * depth // 8)
    rows = np.frombuffer(_unfilter(raw, height, stride, bpp, idat_offset), np.uint8)
    rows = rows.reshape(height, stride)
    if depth < 8:
        bits = np.unpackbits(rows, axis=1).reshape(height, -1, depth)
        weights = 1 << np.arange(depth - 1, -1, -1)
        px = (bits * weights).sum(axis=2)[:, :width].astype(np.uint8)[:, :, None]
        if color == 0:
            px = (px.astype(np.uint16) * 255 // ((1 << depth) - 1)).astype(np.uint8)
    else:
        px = rows.reshape(height, width, channels)
    if color == 0:
        return np.repeat(px, 3, axis=2)
    if color == 4:
        return np.repeat(px[:, :, :1], 3, axis=2)
    if color == 3:
        if palette is None:
            raise ParseError("palette PNG without PLTE", 8)
        return palette[px[:, :, 0]].copy()
    return px[:, :, :3].copy()


def decode_image(data, fmt=None):
    """Decode PPM (P6) or PNG bytes into an (H, W, 3) uint8 array."""
    data = bytes(data)
    if fmt is None:
        fmt = "png" if data[:8] == _PNG_SIG else "ppm_p6"
    if fmt == "png":
        return decode_png(data)
    if fmt in ("ppm", "ppm_p6"):
        return decode_ppm(data)
    raise UnsupportedFormatError(f"unknown image format {fmt!r}", 0)


# ---------------------------------------------------------------- preprocessing

def to_grayscale(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def resize_bilinear(img, out_h, out_w):
    """Corner-aligned bilinear resampling of a 2-D array."""
    h, w = img.shape
    ys = np.linspace(0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bottom = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def preprocess(rgb, target=IMAGE_SIZE):
    """RGB (H, W, 3) -> canonical (target, target, 1) float32 in [-1, 1]."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[0] < 1 or rgb.shape[1] < 1:
        raise DataError(f"expected an (H, W, 3) image, got shape {rgb.shape}")
    gray = to_grayscale(rgb)
    if gray.shape != (target, target):
        gray = resize_bilinear(gray, target, target)
    out = np.clip(gray / 127.5 - 1.0, -1.0, 1.0)
    return out.astype(np.float32)[:, :, None]


def denormalize(pixels):
    """Canonical image -> (H, W, 3) uint8 gray RGB."""
    gray = np.rint((np.asarray(pixels, dtype=np.float64)[..., 0] + 1.0) * 127.5)
    gray = np.clip(gray, 0, 255).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


IMAGE_SUFFIXES = {".ppm": "ppm_p6", ".png": "png"}


def ingest_directory(root, source_tag=None):
    """Load ``<root>/<class_id>/<image files>`` in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    tag = source_tag or root.name
    pixels, labels = [], []
    for class_dir in sorted(root.iterdir(), key=lambda p: p.name):
        if not class_dir.is_dir():
            continue
        if not class_dir.name.isdigit() or int(class_dir.name) >= NUM_CLASSES:
            raise DataError(f"class directory {class_dir.name!r} is not a class id in 0..9")
        for f in sorted(class_dir.iterdir(), key=lambda p: p.name):
            fmt = IMAGE_SUFFIXES.get(f.suffix.lower())
            if fmt is None:
                continue
            try:
                rgb = decode_image(f.read_bytes(), fmt)
            except ParseError as exc:
                raise DataError(f"{f}: {exc}") from exc
            pixels.append(preprocess(rgb))
            labels.append(int(class_dir.name))
    if not pixels:
        return SignDataset.empty()
    return SignDataset(np.stack(pixels), np.array(labels), [tag] * len(labels))


# ---------------------------------------------------------------- splitting

@dataclass
class DatasetSplit:
    train: SignDataset
    test: SignDataset
    seed: int
    test_fraction: float
    train_indices: np.ndarray
    test_indices: np.ndarray


def stratified_test_counts(class_counts, test_fraction):
    """Largest-remainder allocation of round(fraction * total) test slots across classes."""
    classes = sorted(class_counts)
    total = sum(class_counts.values())
    target = int(math.floor(test_fraction * total + 0.5))
    quotas = {c: test_fraction * class_counts[c] for c in classes}
    counts = {c: int(math.floor(q)) for c, q in quotas.items()}
    remaining = target - sum(counts.values())
    order = sorted(classes, key=lambda c: (-(quotas[c] - counts[c]), c))
    for c in order[:remaining]:
        counts[c] += 1
    return counts


def split_dataset(dataset, test_fraction, seed, classes=None):
    """Seeded, stratified train/test split; identical seeds give identical index lists."""
    if not 0 < test_fraction < 1:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    labels = dataset.labels
    present = sorted(set(labels.tolist()))
    required = present if classes is None else sorted(classes)
    counts = {}
    for c in required:
        n = int(np.sum(labels == c))
        if n < 2:
            raise DataError(f"class {c} ({SIGN_CLASSES[c].name}) has {n} image(s); "
                            f"splitting needs at least 2")
        counts[c] = n
    extra = set(present) - set(required)
    if extra:
        raise DataError(f"dataset contains classes {sorted(extra)} outside {required}")
    test_counts = stratified_test_counts(counts, test_fraction)
    rng = np.random.default_rng(seed)
    test_idx, train_idx = [], []
    for c in required:
        idx = rng.permutation(np.flatnonzero(labels == c))
        test_idx.append(idx[:test_counts[c]])
        train_idx.append(idx[test_counts[c]:])
    test_idx = np.sort(np.concatenate(test_idx)) if test_idx else np.zeros(0, np.int64)
    train_idx = np.sort(np.concatenate(train_idx)) if train_idx else np.zeros(0, np.int64)
    return DatasetSplit(dataset.subset(train_idx), dataset.subset(test_idx), seed,
                        test_fraction, train_idx, test_idx)


# ---------------------------------------------------------------- SNF

SNF_MAGIC = b"SNF1"
SNF_VERSION = 1
_SNF_HEADER = struct.Struct("<4sIIIII")


def write_snf(dataset):
    d = dataset
    if len(d) and d.labels.max() >= NUM_CLASSES:
        raise LabelRangeError(f"label {int(d.labels.max())} outside 0..9")
    n, h, w, c = d.pixels.shape
    header = _SNF_HEADER.pack(SNF_MAGIC, SNF_VERSION, n, h, w, c)
    return header + d.labels.astype(np.uint8).tobytes() + d.pixels.astype("<f4").tobytes()


def read_snf(data, source_tag=""):
    data = bytes(data)
    if len(data) < _SNF_HEADER.size:
        raise SizeMismatchError(f"SNF file is {len(data)} bytes, shorter than the 24-byte header")
    magic, version, n, h, w, c = _SNF_HEADER.unpack_from(data)
    if magic != SNF_MAGIC:
        raise BadMagicError(f"bad SNF magic {magic!r}, expected {SNF_MAGIC!r}")
    if version != SNF_VERSION:
        raise VersionError(f"unsupported SNF version {version}")
    if (h, w, c) != (IMAGE_SIZE, IMAGE_SIZE, 1) and n:
        raise SizeMismatchError(f"SNF images are {h}x{w}x{c}, expected 28x28x1")
    expected = _SNF_HEADER.size + n + 4 * n * h * w * c
    if len(data) != expected:
        raise SizeMismatchError(f"SNF size {len(data)} bytes, header implies {expected}")
    labels = np.frombuffer(data, np.uint8, n, _SNF_HEADER.size)
    if n and labels.max() >= NUM_CLASSES:
        raise LabelRangeError(f"label {int(labels.max())} outside 0..9")
    pixels = np.frombuffer(data, "<f4", n * h * w * c, _SNF_HEADER.size + n)
    pixels = pixels.astype(np.float32).reshape(n, IMAGE_SIZE, IMAGE_SIZE, 1)
    return SignDataset(pixels, labels.copy(), [source_tag] * n)


def save_snf(dataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(write_snf(dataset))
    os.replace(tmp, path)


def load_snf(path, source_tag=None):
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file {path} does not exist")
    return read_snf(path.read_bytes(), source_tag or path.stem)


def dataset_hash(dataset):
    return hashlib.sha256(write_snf(dataset)).hexdigest()
