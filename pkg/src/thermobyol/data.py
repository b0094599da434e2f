"""Dataset ingestion, deterministic splitting, k-fold planning, and a
synthetic thermal-image generator for desk-scale experiments.

Images are [3,H,W] float arrays in [0,1]. The canonical on-disk format is
binary PPM (P6, 8-bit) in a class-per-directory tree; labels follow
lexicographic subdirectory order so they are stable across platforms.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ClassCountMismatch,
    ConfigInvalid,
    EmptyDataset,
    MissingClassDir,
    TooFewSamples,
    UnreadableImage,
)

log = logging.getLogger(__name__)


@dataclass
class LabeledImage:
    pixels: np.ndarray  # [3,H,W] float32 in [0,1]
    label: int
    source_id: str


@dataclass
class Dataset:
    images: list
    class_names: list

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self):
        return len(self.class_names)

    def labels(self):
        return np.array([im.label for im in self.images], dtype=np.int64)


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list


@dataclass
class KFoldPlan:
    folds: list = field(default_factory=list)

    @property
    def k(self):
        return len(self.folds)


# ---------------------------------------------------------------------------
# PPM (P6, 8-bit) read/write


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into a [3,H,W] float32 array scaled to [0,1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc
    try:
        if not raw.startswith(b"P6"):
            raise ValueError("not a P6 PPM")
        # header: magic, width, height, maxval; '#' comments allowed
        fields = []
        pos = 2
        while len(fields) < 3:
            while pos < len(raw) and raw[pos : pos + 1].isspace():
                pos += 1
            if raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos] != 0x0A:
                    pos += 1
                continue
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            fields.append(int(raw[start:pos]))
        pos += 1  # single whitespace after maxval
        w, h, maxval = fields
        if maxval != 255:
            raise ValueError(f"unsupported maxval {maxval}")
        pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
        img = pixels.reshape(h, w, 3).transpose(2, 0, 1)
        return (img.astype(np.float32) / 255.0).copy()
    except (ValueError, IndexError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def write_ppm(path, image: np.ndarray):
    """Write a [3,H,W] array of [0,1] floats as binary PPM."""
    c, h, w = image.shape
    if c != 3:
        raise ConfigInvalid(f"PPM needs 3 channels, got {c}")
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    payload = data.transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + payload)


# ---------------------------------------------------------------------------
# Directory ingestion


def load_directory_dataset(root, num_classes: int) -> Dataset:
    """Load `<root>/<class_name>/*.ppm` with labels in lexicographic
    directory order."""
    root = Path(root)
    if not root.is_dir():
        raise MissingClassDir(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(class_dirs) != num_classes:
        raise ClassCountMismatch(
            f"expected {num_classes} class directories, found {len(class_dirs)}"
        )
    images = []
    for label, cdir in enumerate(class_dirs):
        files = sorted(cdir.glob("*.ppm"))
        if not files:
            log.warning("class directory %s has no images", cdir.name)
        for f in files:
            images.append(LabeledImage(read_ppm(f), label, str(f.relative_to(root))))
    return Dataset(images, [d.name for d in class_dirs])


def export_dataset(dataset: Dataset, root):
    """Write a dataset back out as the canonical PPM class tree."""
    root = Path(root)
    for name in dataset.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    counters = {}
    for im in dataset.images:
        name = dataset.class_names[im.label]
        idx = counters.get(name, 0)
        counters[name] = idx + 1
        write_ppm(root / name / f"{idx:05d}.ppm", im.pixels)


# ---------------------------------------------------------------------------
# Resizing


def resize_bilinear(image: np.ndarray, target) -> np.ndarray:
    """Bilinear resize of [3,H,W] with a corner-aligned sampling grid."""
    th, tw = target
    c, h, w = image.shape
    ys = np.linspace(0.0, h - 1, th) if th > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, tw) if tw > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bot = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(image.dtype)


# ---------------------------------------------------------------------------
# Splitting


def _proportional_counts(n, fractions):
    counts = [int(np.floor(f * n)) for f in fractions]
    # hand leftovers to the largest fractional remainders, ties to earlier slots
    remainders = [f * n - c for f, c in zip(fractions, counts)]
    for _ in range(n - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    return counts


def split_dataset(dataset, fractions=(0.8, 0.1, 0.1), seed=0, stratified=True) -> DatasetSplit:
    """Deterministic shuffled train/val/test split of dataset indices.

    `dataset` may be a Dataset or a plain label array (for index-only use).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigInvalid(f"fractions must sum to 1, got {fractions}")
    labels = dataset.labels() if hasattr(dataset, "labels") else np.asarray(dataset)
    n = len(labels)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    if stratified:
        for cls in np.unique(labels):
            idx = np.flatnonzero(labels == cls)
            rng.shuffle(idx)
            counts = _proportional_counts(len(idx), fractions)
            pos = 0
            for part, cnt in zip(parts, counts):
                part.extend(int(i) for i in idx[pos : pos + cnt])
                pos += cnt
    else:
        idx = np.arange(n)
        rng.shuffle(idx)
        counts = _proportional_counts(n, fractions)
        pos = 0
        for part, cnt in zip(parts, counts):
            part.extend(int(i) for i in idx[pos : pos + cnt])
            pos += cnt
    return DatasetSplit(sorted(parts[0]), sorted(parts[1]), sorted(parts[2]))


def kfold_plan(n_samples: int, k: int = 5, seed=0) -> KFoldPlan:
    """Deterministic partition into k folds; earlier folds absorb the
    remainder so sizes differ by at most one."""
    if n_samples < k:
        raise TooFewSamples(f"{n_samples} samples cannot make {k} folds")
    rng = np.random.default_rng(seed)
    idx = np.arange(n_samples)
    rng.shuffle(idx)
    folds = [sorted(int(i) for i in chunk) for chunk in np.array_split(idx, k)]
    return KFoldPlan(folds)


# ---------------------------------------------------------------------------
# Synthetic thermal imagery

# piecewise-linear pseudo-color palette anchors (intensity -> RGB), ironbow-like
_PALETTE = np.array(
    [
        [0.00, 0.02, 0.02, 0.15],
        [0.25, 0.25, 0.05, 0.45],
        [0.50, 0.70, 0.15, 0.25],
        [0.75, 0.95, 0.55, 0.10],
        [1.00, 1.00, 0.95, 0.60],
    ]
)


def _pseudo_color(intensity: np.ndarray) -> np.ndarray:
    """Map a [H,W] intensity field in [0,1] to [3,H,W] via a fixed palette."""
    u = np.clip(intensity, 0.0, 1.0)
    channels = [
        np.interp(u, _PALETTE[:, 0], _PALETTE[:, ch + 1]) for ch in range(3)
    ]
    return np.stack(channels).astype(np.float32)


def synth_thermal_dataset(
    num_classes: int = 11, per_class: int = 50, size=(64, 64), seed=0
) -> Dataset:
    """Deterministic synthetic heat-signature dataset.

    Class identity is carried by rotation/flip-robust cues: the number of
    Gaussian hot spots (1 + c mod 4) and the radius of the ring they sit on
    (c dependent), with the spots' base angle at 2*pi*c/num_classes. Per-image
    jitter keeps samples within a class distinct; additive noise sigma=0.02.
    """
    if per_class < 1:
        raise ConfigInvalid("per_class must be >= 1")
    h, w = size
    if h < 16 or w < 16:
        raise ConfigInvalid("size must be at least 16x16")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    images = []
    for c in range(num_classes):
        count = 1 + c % 4
        ring = (0.15 + 0.11 * (c // 4)) * min(h, w)
        base_angle = 2.0 * np.pi * c / num_classes
        sigma = (0.05 + 0.015 * (c % 3)) * min(h, w)
        for i in range(per_class):
            field_ = 0.25 + 0.25 * (ys / (h - 1))  # base thermal gradient
            jitter_angle = rng.uniform(-0.2, 0.2)
            jitter_ring = ring * rng.uniform(0.92, 1.08)
            for s in range(count):
                ang = base_angle + jitter_angle + 2.0 * np.pi * s / count
                px = cx + jitter_ring * np.cos(ang)
                py = cy + jitter_ring * np.sin(ang)
                d2 = (xs - px) ** 2 + (ys - py) ** 2
                field_ = field_ + 0.55 * np.exp(-d2 / (2.0 * sigma**2))
            field_ = field_ + rng.normal(0.0, 0.02, size=(h, w))
            pixels = np.clip(_pseudo_color(np.clip(field_, 0.0, 1.0)), 0.0, 1.0)
            images.append(LabeledImage(pixels, c, f"synth/{c:02d}/{i:05d}"))
    names = [f"state_{c:02d}" for c in range(num_classes)]
    return Dataset(images, names)
