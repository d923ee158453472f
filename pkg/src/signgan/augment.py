"""Classical augmentation and the per-class semantic-safety policy.

Coordinates follow image conventions: x = column, y = row, origin at the top-left
pixel centre. Geometric transforms are homographies mapping *output* pixel
coordinates to *source* coordinates about the image centre.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import IMAGE_SIZE, NUM_CLASSES, SignDataset
from .errors import NumericError, PolicyError

KINDS = ("rotate", "translate", "scale", "flip_h", "flip_v", "salt_pepper", "lighting", "perspective")
GEOMETRIC = ("rotate", "translate", "scale", "perspective")

# absolute limits for every op's parameters; per-class caps must stay inside them
GLOBAL_CAPS = {
    "rotate": 30.0,       # |theta| degrees
    "translate": 6.0,     # |dx|, |dy| pixels
    "scale": 0.3,         # |factor - 1|
    "salt_pepper": 1.0,   # p
    "lighting": 0.4,      # |brightness| and |contrast - 1|
    "perspective": 5.0,   # |corner offset| pixels per axis
    "flip_h": 1.0,
    "flip_v": 1.0,
}

CENTER = (IMAGE_SIZE - 1) / 2.0


@dataclass(frozen=True)
class AugmentOp:
    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PolicyError(f"unknown augmentation {self.kind!r}")

    def magnitude(self):
        """The value compared against a cap (0 for flips)."""
        k, p = self.kind, self.params
        if k == "rotate":
            return abs(p[0])
        if k == "translate":
            return max(abs(p[0]), abs(p[1]))
        if k == "scale":
            return abs(p[0] - 1.0)
        if k == "salt_pepper":
            return p[0]
        if k == "lighting":
            return max(abs(p[0]), abs(p[1] - 1.0))
        if k == "perspective":
            return max(abs(v) for v in p)
        return 0.0


# ---------------------------------------------------------------- homographies

def _about_center(m):
    c = np.array([[1, 0, CENTER], [0, 1, CENTER], [0, 0, 1]], dtype=np.float64)
    ci = np.array([[1, 0, -CENTER], [0, 1, -CENTER], [0, 0, 1]], dtype=np.float64)
    return c @ m @ ci


def _exact_trig(theta_deg):
    # quarter turns give exact zeros so 90 degree rotations are pure index permutations
    if float(theta_deg) % 90 == 0:
        q = int(round(theta_deg / 90)) % 4
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[q]
    r = math.radians(theta_deg)
    return math.cos(r), math.sin(r)


def homography_from_points(src, dst):
    """3x3 H with H @ [src_k, 1] ~ [dst_k, 1] for four point pairs (h33 = 1)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for k, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * k] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * k + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * k], b[2 * k + 1] = u, v
    if np.linalg.matrix_rank(a) < 8 or np.linalg.cond(a) > 1e12:
        raise NumericError("degenerate point correspondences: homography system is singular")
    h = np.linalg.solve(a, b)
    return np.append(h, 1.0).reshape(3, 3)


IMAGE_CORNERS = ((0.0, 0.0), (IMAGE_SIZE - 1.0, 0.0),
                 (IMAGE_SIZE - 1.0, IMAGE_SIZE - 1.0), (0.0, IMAGE_SIZE - 1.0))


def homography_for(op):
    """Output -> source coordinate map for a geometric op."""
    k, p = op.kind, op.params
    if k == "rotate":
        c, s = _exact_trig(p[0])
        return _about_center(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64))
    if k == "translate":
        return np.array([[1, 0, p[0]], [0, 1, p[1]], [0, 0, 1]], dtype=np.float64)
    if k == "scale":
        f = p[0]
        if f <= 0:
            raise NumericError(f"scale factor must be positive, got {f}")
        return _about_center(np.diag([1 / f, 1 / f, 1.0]))
    if k == "perspective":
        offsets = np.asarray(p, dtype=np.float64).reshape(4, 2)
        return homography_from_points(IMAGE_CORNERS, np.asarray(IMAGE_CORNERS) + offsets)
    raise NumericError(f"{k} is not a geometric augmentation")


def warp(img, h):
    """Bilinear resampling of ``img`` at H-mapped coordinates with edge replication."""
    h = np.asarray(h, dtype=np.float64)
    if abs(np.linalg.det(h)) < 1e-12:
        raise NumericError("warp matrix is singular")
    img = np.asarray(img)
    rows, cols = img.shape[:2]
    ys, xs = np.mgrid[0:rows, 0:cols].astype(np.float64)
    pts = h @ np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    w = pts[2]
    if np.any(np.abs(w) < 1e-12):
        raise NumericError("warp maps a pixel to infinity")
    sx = np.clip(pts[0] / w, 0, cols - 1)
    sy = np.clip(pts[1] / w, 0, rows - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, cols - 1)
    y1 = np.minimum(y0 + 1, rows - 1)
    fx = (sx - x0)[:, None]
    fy = (sy - y0)[:, None]
    flat = img.reshape(rows, cols, -1).astype(np.float64)
    top = flat[y0, x0] * (1 - fx) + flat[y0, x1] * fx
    bottom = flat[y1, x0] * (1 - fx) + flat[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(out, -1, 1).reshape(img.shape).astype(img.dtype)


# ---------------------------------------------------------------- pixel ops

def flip(img, axis):
    if axis == "h":
        return img[:, ::-1].copy()
    if axis == "v":
        return img[::-1].copy()
    raise PolicyError(f"flip axis must be 'h' or 'v', got {axis!r}")


def salt_pepper(img, p, seed):
    if not 0 <= p <= 1:
        raise PolicyError(f"salt-and-pepper probability must be in [0, 1], got {p}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(img.shape)
    out = img.copy()
    out[u < p / 2] = -1
    out[(u >= p / 2) & (u < p)] = 1
    return out


def adjust_lighting(img, brightness, contrast):
    return np.clip(contrast * img + brightness, -1, 1).astype(img.dtype)


def apply_op(img, op, rng=None):
    k, p = op.kind, op.params
    if k in GEOMETRIC:
        return warp(img, homography_for(op))
    if k == "flip_h":
        return flip(img, "h")
    if k == "flip_v":
        return flip(img, "v")
    if k == "salt_pepper":
        return salt_pepper(img, p[0], rng if rng is not None else 0)
    if k == "lighting":
        return adjust_lighting(img, p[0], p[1])
    raise PolicyError(f"unknown augmentation {k!r}")


# ---------------------------------------------------------------- policy

TEXT_CLASSES = (2, 3, 4, 5, 6)
_SHARED_CAPS = {"translate": 3.0, "scale": 0.15, "salt_pepper": 0.05, "lighting": 0.3, "perspective": 3.0}


def _default_table():
    table = {}
    for c in range(NUM_CLASSES):
        caps = dict(_SHARED_CAPS)
        if c == 0:
            caps["rotate"] = 30.0
        elif c in TEXT_CLASSES:
            caps["rotate"] = 5.0
        else:
            caps["rotate"] = 15.0
        if c in (0, 1, 8):
            caps["flip_h"] = caps["flip_v"] = 1.0
        elif c == 9:
            caps["flip_h"] = 1.0
        table[c] = caps
    return table


@dataclass
class ClassPolicy:
    """class id -> {op kind: cap}. A kind missing from a class's map is forbidden."""

    table: dict = field(default_factory=_default_table)

    def __post_init__(self):
        for c, caps in self.table.items():
            if not 0 <= c < NUM_CLASSES:
                raise PolicyError(f"policy names unknown class {c}")
            for kind, cap in caps.items():
                if kind not in KINDS:
                    raise PolicyError(f"policy names unknown op {kind!r} for class {c}")
                if not 0 <= cap <= GLOBAL_CAPS[kind]:
                    raise PolicyError(f"cap {cap} for {kind} on class {c} outside [0, {GLOBAL_CAPS[kind]}]")

    def permits(self, class_id, op):
        caps = self.table.get(class_id, {})
        return op.kind in caps and op.magnitude() <= caps[op.kind] + 1e-12

    def to_text(self):
        buf = io.StringIO()
        buf.write("class_id,op,cap\n")
        for c in sorted(self.table):
            for kind in KINDS:
                if kind in self.table[c]:
                    buf.write(f"{c},{kind},{self.table[c][kind]:g}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        table = {}
        rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        for lineno, row in enumerate(csv.reader(rows), start=1):
            row = [r.strip() for r in row]
            if row == ["class_id", "op", "cap"]:
                continue
            if len(row) != 3:
                raise PolicyError(f"policy line {lineno}: expected 'class_id,op,cap', got {row}")
            try:
                c, kind, cap = int(row[0]), row[1], float(row[2])
            except ValueError:
                raise PolicyError(f"policy line {lineno}: cannot parse {row}") from None
            table.setdefault(c, {})[kind] = cap
        return cls(table)


DEFAULT_POLICY = ClassPolicy()


def allowed_ops(class_id, policy=DEFAULT_POLICY):
    """Permitted op kinds with their caps for one class."""
    if not 0 <= class_id < NUM_CLASSES:
        raise PolicyError(f"unknown class {class_id}")
    return dict(policy.table.get(class_id, {}))


def draw_op(kind, cap, rng):
    """Sample parameters uniformly within ``cap``."""
    if kind == "rotate":
        return AugmentOp(kind, (float(rng.uniform(-cap, cap)),))
    if kind == "translate":
        return AugmentOp(kind, tuple(float(v) for v in rng.uniform(-cap, cap, 2)))
    if kind == "scale":
        return AugmentOp(kind, (float(rng.uniform(1 - cap, 1 + cap)),))
    if kind == "salt_pepper":
        return AugmentOp(kind, (float(rng.uniform(0, cap)),))
    if kind == "lighting":
        return AugmentOp(kind, (float(rng.uniform(-cap, cap)), float(rng.uniform(1 - cap, 1 + cap))))
    if kind == "perspective":
        return AugmentOp(kind, tuple(float(v) for v in rng.uniform(-cap, cap, 8)))
    return AugmentOp(kind)


# ---------------------------------------------------------------- dataset building

@dataclass
class AugmentPlan:
    multiplier: int
    seed: int
    policy: ClassPolicy = field(default_factory=ClassPolicy)


@dataclass(frozen=True)
class Emission:
    source_index: int
    class_id: int
    op: AugmentOp


def build_augmented_dataset(dataset, plan):
    """Each source image followed by ``plan.multiplier`` policy-safe variants.

    Returns ``(augmented_dataset, emission_log)``. Randomness is drawn from a
    stream keyed by (plan.seed, source index), so output does not depend on
    processing order.
    """
    if plan.multiplier < 0:
        raise PolicyError(f"multiplier must be non-negative, got {plan.multiplier}")
    m = plan.multiplier
    n = len(dataset)
    pixels = np.empty((n * (1 + m), IMAGE_SIZE, IMAGE_SIZE, 1), dtype=np.float32)
    labels = np.repeat(dataset.labels, 1 + m)
    tags = []
    log = []
    for i in range(n):
        img, c = dataset.pixels[i], int(dataset.labels[i])
        base = i * (1 + m)
        pixels[base] = img
        tags.append(dataset.source_tags[i])
        if not m:
            continue
        caps = allowed_ops(c, plan.policy)
        kinds = [k for k in KINDS if k in caps]
        if not kinds:
            raise PolicyError(f"policy permits no augmentation for class {c}")
        rng = np.random.default_rng([plan.seed, i])
        for v in range(1, m + 1):
            kind = kinds[int(rng.integers(len(kinds)))]
            op = draw_op(kind, caps[kind], rng)
            pixels[base + v] = apply_op(img, op, rng)
            tags.append("augmented")
            log.append(Emission(i, c, op))
    return SignDataset(pixels, labels, tags), log


def audit_emissions(log, policy=DEFAULT_POLICY):
    """Emission records that violate ``policy`` (empty when sound)."""
    return [e for e in log if not policy.permits(e.class_id, e.op)]


def emission_log_csv(log):
    buf = io.StringIO()
    buf.write("source_index,class_id,op,params\n")
    for e in log:
        params = ";".join(repr(float(v)) for v in e.op.params)
        buf.write(f"{e.source_index},{e.class_id},{e.op.kind},{params}\n")
    return buf.getvalue()


def parse_emission_log(text):
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        params = tuple(float(v) for v in row["params"].split(";") if v)
        out.append(Emission(int(row["source_index"]), int(row["class_id"]), AugmentOp(row["op"], params)))
    return out
