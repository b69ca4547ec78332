"""Conditional datasets: synthetic toys with exact oracles, paired images, masks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage, special

from .models import one_hot


class DataError(ValueError):
    pass


@dataclass
class CondDataset:
    """Aligned (Y, C) pairs.  ``condition_kind`` is ``"onehot"`` or ``"image"``."""

    Y: np.ndarray
    C: np.ndarray
    condition_kind: str
    labels: np.ndarray | None = None
    normalization: dict = field(default_factory=lambda: {"kind": "identity"})

    def __post_init__(self):
        if len(self.Y) != len(self.C):
            raise DataError(f"{len(self.Y)} targets but {len(self.C)} conditions")

    def __len__(self):
        return len(self.Y)

    @property
    def target_shape(self):
        return tuple(self.Y.shape[1:])

    @property
    def condition_shape(self):
        return tuple(self.C.shape[1:])

    def subset(self, idx):
        idx = np.asarray(idx)
        return CondDataset(self.Y[idx], self.C[idx], self.condition_kind,
                           None if self.labels is None else self.labels[idx], self.normalization)


# ---------------------------------------------------------------------------
# synthetic toys

GLYPHS_8x8 = np.array([
    # vertical bar
    ["...##...", "..###...", "...##...", "...##...",
     "...##...", "...##...", "...##...", "..####.."],
    # ring
    ["..####..", ".##..##.", "##....##", "##....##",
     "##....##", "##....##", ".##..##.", "..####.."],
    # cross
    ["...##...", "...##...", "...##...", "########",
     "########", "...##...", "...##...", "...##..."],
    # box corner / "L"
    ["##......", "##......", "##......", "##......",
     "##......", "##......", "########", "########"],
])
GLYPH_TEMPLATES = np.array([[[ch == "#" for ch in row] for row in g] for g in GLYPHS_8x8], dtype=float)


@dataclass
class ToySpec:
    family: str = "gaussian_mixture"  # "gaussian_mixture", "ring" or "glyphs"
    n_classes: int = 3
    dim: int = 2
    means: list | None = None
    stds: list | None = None
    radii: list | None = None
    image_size: int = 8
    jitter: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("gaussian_mixture", "ring", "glyphs"):
            raise DataError(f"unknown toy family {self.family!r}")
        if self.n_classes < 1:
            raise DataError("n_classes must be positive")
        if self.family == "gaussian_mixture":
            if self.means is None:
                self.means = default_mixture_means(self.n_classes, self.dim).tolist()
            if self.stds is None:
                self.stds = [0.15] * self.n_classes
            if np.shape(self.means) != (self.n_classes, self.dim) or len(self.stds) != self.n_classes:
                raise DataError("means must be (n_classes, dim) and stds length n_classes")
            if min(self.stds) <= 0:
                raise DataError("stds must be positive")
        elif self.family == "ring":
            if self.dim != 2:
                raise DataError("ring toy is two-dimensional")
            if self.radii is None:
                self.radii = list(np.linspace(0.3, 0.8, self.n_classes))
            if self.stds is None:
                self.stds = [0.05] * self.n_classes
            if len(self.radii) != self.n_classes or len(self.stds) != self.n_classes:
                raise DataError("radii and stds need one entry per class")
        else:
            if self.n_classes > len(GLYPH_TEMPLATES):
                raise DataError(f"at most {len(GLYPH_TEMPLATES)} glyph classes")
            if self.image_size % 8:
                raise DataError("glyph image_size must be a multiple of 8")


def default_mixture_means(n_classes, dim, radius=0.5):
    ang = 2 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, dim))
    means[:, 0] = radius * np.cos(ang)
    if dim > 1:
        means[:, 1] = radius * np.sin(ang)
    return means


class ToyOracle:
    """Exact sampler and conditional log-density for a :class:`ToySpec`."""

    def __init__(self, spec: ToySpec):
        self.spec = spec

    def sample(self, labels, rng):
        s = self.spec
        labels = np.asarray(labels, dtype=int)
        n = len(labels)
        if s.family == "gaussian_mixture":
            means = np.asarray(s.means)[labels]
            stds = np.asarray(s.stds)[labels][:, None]
            return means + stds * rng.standard_normal((n, s.dim))
        if s.family == "ring":
            phi = rng.uniform(0, 2 * np.pi, n)
            r = np.asarray(s.radii)[labels][:, None]
            pts = r * np.stack([np.cos(phi), np.sin(phi)], axis=1)
            return pts + np.asarray(s.stds)[labels][:, None] * rng.standard_normal((n, 2))
        return np.stack([render_glyph(k, s.image_size, rng, s.jitter) for k in labels])

    def log_density(self, Y, labels):
        """log p(Y | class) per row; glyphs have no density."""
        s = self.spec
        Y = np.asarray(Y, dtype=float).reshape(len(Y), -1)
        labels = np.asarray(labels, dtype=int)
        if s.family == "gaussian_mixture":
            mu = np.asarray(s.means)[labels]
            sd = np.asarray(s.stds)[labels]
            d2 = ((Y - mu) ** 2).sum(axis=1)
            return -d2 / (2 * sd ** 2) - 0.5 * s.dim * np.log(2 * np.pi * sd ** 2)
        if s.family == "ring":
            r = np.asarray(s.radii)[labels]
            sd = np.asarray(s.stds)[labels]
            rho = np.sqrt((Y ** 2).sum(axis=1))
            z = rho * r / sd ** 2
            # log I0(z) = log(i0e(z)) + z
            return (-(rho ** 2 + r ** 2) / (2 * sd ** 2) + np.log(special.i0e(z)) + z
                    - np.log(2 * np.pi * sd ** 2))
        raise DataError("glyph toy has no closed-form density")

    def log_marginal(self, Y):
        """log of the equal-weight mixture over classes."""
        K = self.spec.n_classes
        per = np.stack([self.log_density(Y, np.full(len(Y), k)) for k in range(K)], axis=1)
        return special.logsumexp(per, axis=1) - math.log(K)


def render_glyph(label, size, rng, jitter=1.0):
    """Upsample an 8x8 template to ``size`` and apply a small random affine warp.

    Values are in [-1, 1] (background -1).
    """
    base = np.kron(GLYPH_TEMPLATES[label], np.ones((size // 8, size // 8)))
    scale = size / 8
    theta = rng.uniform(-0.15, 0.15) * jitter
    zoom = 1.0 + rng.uniform(-0.1, 0.1) * jitter
    shift = rng.uniform(-scale, scale, 2) * jitter
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]) / zoom
    center = (np.array([size, size]) - 1) / 2
    offset = center - rot @ (center + shift)
    img = ndimage.affine_transform(base, rot, offset=offset, order=1, mode="constant", cval=0.0)
    return (2 * np.clip(img, 0, 1) - 1)[None].astype(np.float32)


def generate_toy(spec: ToySpec, n: int, seed: int | None = None):
    """Draw n pairs with uniform class labels.  Returns (dataset, oracle)."""
    if n < 1:
        raise DataError("n must be at least 1")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    labels = rng.integers(0, spec.n_classes, n)
    oracle = ToyOracle(spec)
    Y = oracle.sample(labels, rng).astype(np.float32)
    C = one_hot(labels, spec.n_classes)
    return CondDataset(Y, C, "onehot", labels), oracle


# ---------------------------------------------------------------------------
# images

def normalize_u8(img):
    return np.asarray(img, dtype=np.float32) / 127.5 - 1.0


def denormalize_u8(img):
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def read_image_u8(path):
    """Read a PNG or binary PGM as uint8 (C, H, W)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing image {path}")
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode in ("RGBA", "P") else "L")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    return arr[None] if arr.ndim == 2 else np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image_u8(path, arr):
    """Write uint8 (C, H, W) with C in {1, 3}; format from the suffix (.png or .pgm)."""
    arr = np.asarray(arr, dtype=np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".pgm" and arr.shape[0] != 1:
        raise DataError("PGM images must be single-channel")
    img = Image.fromarray(arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0))
    img.save(path, format="PPM" if path.suffix.lower() == ".pgm" else "PNG")


def save_image(path, img):
    write_image_u8(path, denormalize_u8(img))


def load_image(path):
    return normalize_u8(read_image_u8(path))


def read_manifest(path):
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected two paths, got {len(parts)}")
        pairs.append((parts[0], parts[1]))
    return pairs


def load_paired_images(dir_condition, dir_target, manifest):
    """Load aligned condition/target images listed in a manifest file."""
    pairs = read_manifest(manifest)
    if not pairs:
        return CondDataset(np.zeros((0,), np.float32), np.zeros((0,), np.float32), "image",
                           normalization={"kind": "u8_to_unit", "scale": 127.5, "offset": -1.0})
    Cs, Ys = [], []
    for cond_rel, tgt_rel in pairs:
        c = read_image_u8(Path(dir_condition) / cond_rel)
        y = read_image_u8(Path(dir_target) / tgt_rel)
        if c.shape[1:] != y.shape[1:]:
            raise DataError(f"pair ({cond_rel}, {tgt_rel}): condition {c.shape} vs target {y.shape}")
        if Ys and (y.shape != Ys[0].shape or c.shape != Cs[0].shape):
            raise DataError(f"pair ({cond_rel}, {tgt_rel}): shape differs from the first pair")
        Cs.append(c)
        Ys.append(y)
    return CondDataset(normalize_u8(np.stack(Ys)), normalize_u8(np.stack(Cs)), "image",
                       normalization={"kind": "u8_to_unit", "scale": 127.5, "offset": -1.0})


def save_paired_images(dataset: CondDataset, dir_condition, dir_target, manifest, ext=".png"):
    Path(dir_condition).mkdir(parents=True, exist_ok=True)
    Path(dir_target).mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(len(dataset)):
        name = f"{i:05d}{ext}"
        save_image(Path(dir_condition) / name, dataset.C[i])
        save_image(Path(dir_target) / name, dataset.Y[i])
        lines.append(f"{name} {name}")
    Path(manifest).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# occlusion and augmentation

@dataclass(frozen=True)
class MaskSpec:
    top: int
    left: int
    height: int
    width: int

    @classmethod
    def central(cls, size, hole):
        """Centred square hole; the reference geometry is half the side length."""
        start = (size - hole) // 2
        return cls(start, start, hole, hole)


def occlude(Y, spec: MaskSpec):
    """Zero the masked rectangle of an image (or batch).  Returns (C, mask)."""
    Y = np.asarray(Y)
    H, W = Y.shape[-2:]
    if (spec.top < 0 or spec.left < 0 or spec.height < 0 or spec.width < 0
            or spec.top + spec.height > H or spec.left + spec.width > W):
        raise DataError(f"mask {spec} does not fit a {H}x{W} image")
    mask = np.zeros(Y.shape, dtype=Y.dtype)
    mask[..., spec.top:spec.top + spec.height, spec.left:spec.left + spec.width] = 1
    C = np.where(mask > 0, np.zeros_like(Y), Y)
    return C, mask


def _axis_coords(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize(img, height, width, method="bilinear"):
    """Resize a (C, H, W) image with half-pixel-centred sampling."""
    img = np.asarray(img)
    _, H, W = img.shape
    if method == "nearest":
        ri = np.minimum(((np.arange(height) + 0.5) * H / height).astype(int), H - 1)
        ci = np.minimum(((np.arange(width) + 0.5) * W / width).astype(int), W - 1)
        return img[:, ri][:, :, ci]
    if method != "bilinear":
        raise DataError(f"unknown interpolation {method!r}")
    r0, r1, rt = _axis_coords(H, height)
    rows = img[:, r0] + rt[None, :, None] * (img[:, r1] - img[:, r0])
    c0, c1, ct = _axis_coords(W, width)
    return (rows[:, :, c0] + ct[None, None, :] * (rows[:, :, c1] - rows[:, :, c0])).astype(img.dtype)


def augment(pair, rng, jitter_factor=286 / 256, mirror=True,
            condition_method="nearest", target_method="bilinear", force_flip=None):
    """Random jitter (upscale then random crop) and mirroring, shared by Y and C."""
    Y, C = (np.asarray(a) for a in pair)
    _, H, W = Y.shape
    if C.shape[-2:] != (H, W):
        raise DataError("augment needs condition and target of equal spatial size")
    big_h, big_w = int(round(H * jitter_factor)), int(round(W * jitter_factor))
    top = int(rng.integers(0, big_h - H + 1))
    left = int(rng.integers(0, big_w - W + 1))
    flip = bool(rng.random() < 0.5) if force_flip is None else force_flip
    out = []
    for img, method in ((Y, target_method), (C, condition_method)):
        big = resize(img, big_h, big_w, method) if (big_h, big_w) != (H, W) else img
        crop = big[:, top:top + H, left:left + W]
        if mirror and flip:
            crop = crop[:, :, ::-1]
        out.append(np.ascontiguousarray(crop))
    return out[0], out[1]


def mirror(img):
    return np.ascontiguousarray(np.asarray(img)[..., ::-1])


def glyph_inpainting_dataset(n, size=32, hole=16, seed=0, n_classes=4, jitter=1.0):
    """Glyph images with a central hole.  C is the occluded image; Y the full glyph."""
    spec = ToySpec("glyphs", n_classes=n_classes, image_size=size, jitter=jitter, seed=seed)
    ds, _ = generate_toy(spec, n)
    C, mask = occlude(ds.Y, MaskSpec.central(size, hole))
    return CondDataset(ds.Y, C.astype(np.float32), "image", ds.labels), mask[0]
