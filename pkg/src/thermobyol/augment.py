"""Stochastic affine augmentation producing the paired views for
self-supervised pretraining and the train-time augmentations for the
classifier.

The flip / zoom / shear / rotation / translation factors are composed into a
single 2x3 matrix and applied by inverse mapping with nearest-neighbor
sampling, so each image is resampled exactly once. Out-of-bounds source
coordinates clamp to the nearest edge pixel ("nearest" fill).
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class AugmentationSpec:
    rotation_max_deg: float = 20.0
    shift_frac: float = 0.2
    shear_range: float = 0.2
    zoom_range: float = 0.2
    hflip: bool = True
    brightness_jitter: float = 0.0
    fill_mode: str = "nearest"


@dataclass
class AffineParams:
    angle_deg: float = 0.0
    dx_frac: float = 0.0
    dy_frac: float = 0.0
    shear: float = 0.0
    zoom: float = 1.0
    flip: bool = False
    brightness: float = 1.0


def limited_spec() -> AugmentationSpec:
    """Flip-only regime."""
    return AugmentationSpec(0.0, 0.0, 0.0, 0.0, hflip=True)


def extended_spec() -> AugmentationSpec:
    """Full affine regime plus +/-10% brightness jitter."""
    return AugmentationSpec(brightness_jitter=0.1)


def sample_params(spec: AugmentationSpec, rng: np.random.Generator) -> AffineParams:
    """One draw from the augmentation distribution. Draw order is fixed so a
    seeded generator reproduces identical params."""
    angle = rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg)
    dx = rng.uniform(-spec.shift_frac, spec.shift_frac)
    dy = rng.uniform(-spec.shift_frac, spec.shift_frac)
    shear = rng.uniform(-spec.shear_range, spec.shear_range)
    zoom = rng.uniform(1.0 - spec.zoom_range, 1.0 + spec.zoom_range)
    flip = bool(rng.random() < 0.5) if spec.hflip else False
    brightness = 1.0 + rng.uniform(-spec.brightness_jitter, spec.brightness_jitter)
    return AffineParams(angle, dx, dy, shear, zoom, flip, brightness)


def _forward_matrix(p: AffineParams):
    """2x2 linear part of flip -> zoom -> shear -> rotation (center-relative)."""
    flip = np.array([[-1.0, 0.0], [0.0, 1.0]]) if p.flip else np.eye(2)
    zoom = np.eye(2) * p.zoom
    shear = np.array([[1.0, p.shear], [0.0, 1.0]])  # x' = x + shear * y
    th = math.radians(p.angle_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    return rot @ shear @ zoom @ flip


def apply_affine(image: np.ndarray, p: AffineParams, fill: str = "nearest") -> np.ndarray:
    """Warp a [C,H,W] image by the affine params; shape is preserved."""
    if fill != "nearest":
        raise ValueError(f"unsupported fill mode {fill!r}")
    c, h, w = image.shape
    a = _forward_matrix(p)
    a_inv = np.linalg.inv(a)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    tx, ty = p.dx_frac * w, p.dy_frac * h

    ys, xs = np.mgrid[0:h, 0:w]
    dst = np.stack([xs.ravel() - cx - tx, ys.ravel() - cy - ty])
    src = a_inv @ dst
    sx = np.clip(np.rint(src[0] + cx).astype(np.int64), 0, w - 1)
    sy = np.clip(np.rint(src[1] + cy).astype(np.int64), 0, h - 1)
    out = image[:, sy, sx].reshape(c, h, w)
    if p.brightness != 1.0:
        out = np.clip(out * p.brightness, 0.0, 1.0)
    return np.ascontiguousarray(out, dtype=image.dtype)


def augment_pair(image: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator):
    """Two independent augmentations of the same image (the two views)."""
    first = apply_affine(image, sample_params(spec, rng), spec.fill_mode)
    second = apply_affine(image, sample_params(spec, rng), spec.fill_mode)
    return first, second
