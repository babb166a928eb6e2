"""Dataset ingestion, bilinear resizing, stratified splitting, and the
train-time augmentation pipeline (horizontal flip, small rotation,
independent height/width zoom; out-of-frame pixels are nearest-edge
replicated so no artificial dark border is introduced).

Dataset layout on disk: `<root>/<class_name>/*` with one subdirectory per
class holding raster images. PNG and JPEG decode through Pillow; binary
PPM/PGM (P6/P5, maxval 255) have a native reader/writer so test fixtures
need no codec at all.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .seeding import STREAM_SPLIT, substream

logger = logging.getLogger(__name__)


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (H, W, 3) floats in [0, 1]
    label: int
    source: str = ""


@dataclass
class Dataset:
    images: list[LabeledImage]
    class_names: tuple[str, ...]

    def class_counts(self) -> list[int]:
        counts = [0] * len(self.class_names)
        for img in self.images:
            counts[img.label] += 1
        return counts

    def labels(self) -> np.ndarray:
        return np.array([img.label for img in self.images], dtype=int)

    def pixel_array(self) -> np.ndarray:
        return np.stack([img.pixels for img in self.images])


@dataclass(frozen=True)
class AugmentConfig:
    """Train-time augmentation parameters.

    `rotation_factor` is a fraction of a full turn (0.02 -> max 7.2 deg);
    zoom factors give the +/- fraction of the image size sampled per axis.
    """

    flip_horizontal: bool = True
    rotation_factor: float = 0.02
    zoom_height: float = 0.2
    zoom_width: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("rotation_factor", "zoom_height", "zoom_width"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0, got {getattr(self, name)}")


# ---------------------------------------------------------------------------
# decoding

def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6) or PGM (P5) with maxval 255, as (H, W, 3) floats in [0, 1]."""
    raw = Path(path).read_bytes()

    def tokens():
        i = 0
        while i < len(raw):
            if raw[i : i + 1] == b"#":  # comment to end of line
                while i < len(raw) and raw[i] not in b"\r\n":
                    i += 1
            elif raw[i : i + 1].isspace():
                i += 1
            else:
                j = i
                while j < len(raw) and not raw[j : j + 1].isspace():
                    j += 1
                yield raw[i:j], j
                i = j

    it = tokens()
    try:
        magic, _ = next(it)
        (width, _), (height, _), (maxval, end) = (next(it) for _ in range(3))
    except StopIteration:
        raise DataError(f"{path}: truncated PPM header") from None
    if magic not in (b"P6", b"P5"):
        raise DataError(f"{path}: unsupported netpbm magic {magic!r}")
    width, height, maxval = int(width), int(height), int(maxval)
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    start = end + 1  # single whitespace byte after maxval
    count = width * height * channels
    payload = raw[start : start + count]
    if len(payload) != count:
        raise DataError(f"{path}: expected {count} pixel bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    if channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr.astype(np.float64) / 255.0


def write_ppm(path, pixels: np.ndarray) -> None:
    """Write (H, W, 3) floats in [0, 1] as a binary P6 file with maxval 255."""
    arr = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def decode_image(path) -> np.ndarray:
    """Decode a raster file into (H, W, 3) floats in [0, 1]; DataError if undecodable."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm"):
        return read_ppm(path)
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            return np.asarray(rgb, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from None


def load_dataset(root) -> Dataset:
    """Scan `<root>/<class>/*`; labels follow sorted subdirectory names.

    Undecodable files are skipped with a warning; a class whose files all
    fail to decode (or an empty root) is a DataError.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DataError(f"dataset root {root} contains no class directories")
    class_names = tuple(d.name for d in class_dirs)
    images: list[LabeledImage] = []
    for label, class_dir in enumerate(class_dirs):
        loaded = 0
        for path in sorted(p for p in class_dir.iterdir() if p.is_file()):
            try:
                pixels = decode_image(path)
            except DataError as exc:
                logger.warning("skipping undecodable file: %s", exc)
                continue
            images.append(LabeledImage(pixels=pixels, label=label, source=str(path)))
            loaded += 1
        if loaded == 0:
            raise DataError(f"class '{class_dir.name}' has no decodable images")
    return Dataset(images=images, class_names=class_names)


# ---------------------------------------------------------------------------
# geometry

def _bilinear_sample(pixels: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Sample pixels at fractional (sy, sx); coordinates clamp to the edges."""
    h, w = pixels.shape[:2]
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[..., None]
    wx = (sx - x0)[..., None]
    top = pixels[y0, x0] * (1.0 - wx) + pixels[y0, x1] * wx
    bottom = pixels[y1, x0] * (1.0 - wx) + pixels[y1, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def resize_pixels(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; output clamped to [0, 1]."""
    if out_h < 1 or out_w < 1:
        raise DataError(f"resize target must be positive, got {out_h}x{out_w}")
    h, w = pixels.shape[:2]
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    out = _bilinear_sample(pixels, ys[:, None] * np.ones_like(xs), np.ones_like(ys)[:, None] * xs)
    return np.clip(out, 0.0, 1.0)


def resize(image: LabeledImage, target: int) -> LabeledImage:
    return LabeledImage(
        pixels=resize_pixels(image.pixels, target, target),
        label=image.label,
        source=image.source,
    )


def hflip(pixels: np.ndarray) -> np.ndarray:
    return pixels[:, ::-1].copy()


def rotate(pixels: np.ndarray, angle: float) -> np.ndarray:
    """Rotate image content by `angle` radians about the center.

    Inverse mapping with bilinear sampling; out-of-frame reads replicate
    the nearest edge. A feature at center + u moves to center + R(angle) u
    in (x, y) coordinates with y pointing down the rows.
    """
    h, w = pixels.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    sx = cx + cos_a * dx + sin_a * dy
    sy = cy - sin_a * dx + cos_a * dy
    return np.clip(_bilinear_sample(pixels, sy, sx), 0.0, 1.0)


def zoom(pixels: np.ndarray, zoom_y: float, zoom_x: float) -> np.ndarray:
    """Scale content about the center by independent axis factors (>1 magnifies)."""
    if zoom_y <= 0 or zoom_x <= 0:
        raise DataError(f"zoom factors must be positive, got {zoom_y}, {zoom_x}")
    h, w = pixels.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys = cy + (np.arange(h, dtype=np.float64) - cy) / zoom_y
    xs = cx + (np.arange(w, dtype=np.float64) - cx) / zoom_x
    out = _bilinear_sample(pixels, ys[:, None] * np.ones_like(xs), np.ones_like(ys)[:, None] * xs)
    return np.clip(out, 0.0, 1.0)


def augment(image: LabeledImage, cfg: AugmentConfig, rng: np.random.Generator) -> LabeledImage:
    """Apply flip (p=0.5 if enabled), rotation, then zoom; label unchanged.

    Draws happen in a fixed order so a given generator state always yields
    the same transform; identity transforms skip resampling entirely.
    """
    pixels = image.pixels
    if cfg.flip_horizontal and rng.random() < 0.5:
        pixels = hflip(pixels)
    max_angle = cfg.rotation_factor * 2.0 * math.pi
    angle = rng.uniform(-max_angle, max_angle)
    if angle != 0.0:
        pixels = rotate(pixels, angle)
    zy = rng.uniform(1.0 - cfg.zoom_height, 1.0 + cfg.zoom_height)
    zx = rng.uniform(1.0 - cfg.zoom_width, 1.0 + cfg.zoom_width)
    if zy != 1.0 or zx != 1.0:
        pixels = zoom(pixels, zy, zx)
    return LabeledImage(pixels=pixels, label=image.label, source=image.source)


# ---------------------------------------------------------------------------
# splitting and normalization

def split(dataset: Dataset, train_fraction: float = 0.75, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split: per class, floor(train_fraction * n) images train,
    the rest validate; assignment by seeded shuffle. Disjoint and exhaustive."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    counts = dataset.class_counts()
    for name, count in zip(dataset.class_names, counts):
        if count < 2:
            raise DataError(f"class '{name}' has {count} image(s); at least 2 are required to split")
    rng = substream(seed, STREAM_SPLIT)
    by_class: list[list[int]] = [[] for _ in dataset.class_names]
    for i, img in enumerate(dataset.images):
        by_class[img.label].append(i)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for idxs in by_class:
        perm = rng.permutation(len(idxs))
        n_train = int(math.floor(train_fraction * len(idxs)))
        train_idx.extend(idxs[p] for p in perm[:n_train])
        val_idx.extend(idxs[p] for p in perm[n_train:])
    make = lambda idx: Dataset(images=[dataset.images[i] for i in idx], class_names=dataset.class_names)
    return make(train_idx), make(val_idx)


def channel_stats(images: Iterable[LabeledImage]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and (population) std over all pixels of all images.

    A zero std (constant channel) is replaced by 1.0 so standardization
    stays finite.
    """
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for img in images:
        flat = img.pixels.reshape(-1, 3)
        total += flat.sum(axis=0)
        total_sq += (flat * flat).sum(axis=0)
        count += flat.shape[0]
    if count == 0:
        raise DataError("cannot compute channel statistics of an empty image set")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.sqrt(var)
    std[std == 0.0] = 1.0
    return mean, std


def standardize(pixels: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float64) - np.asarray(mean)) / np.asarray(std)


# ---------------------------------------------------------------------------
# manifest

def write_manifest(path, entries: dict) -> None:
    """Plain key=value text; values are rendered with repr-exact floats."""
    lines = []
    for key, value in entries.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries
