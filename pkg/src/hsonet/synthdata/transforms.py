"""Tiling and geometric augmentation applied identically to images, mask and tags."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from hsonet.synthdata.generator import LabeledPair


class TilingError(ValueError):
    pass


def tile(lp: LabeledPair, size: int = 256, overlap: int = 0) -> list[LabeledPair]:
    """Row-major tiles of ``size`` pixels; incomplete edge tiles are dropped."""
    if size <= 0 or size % 32:
        raise TilingError(f"tile size must be a positive multiple of 32, got {size}")
    if not 0 <= overlap < size:
        raise TilingError(f"overlap must lie in [0, {size}), got {overlap}")
    h, w = lp.mask.shape
    if h < size or w < size:
        raise TilingError(f"image {h}x{w} is smaller than the {size}px tile")
    stride = size - overlap
    out = []
    for k, y in enumerate(range(0, h - size + 1, stride)):
        for j, x in enumerate(range(0, w - size + 1, stride)):
            sl = (slice(y, y + size), slice(x, x + size))
            out.append(LabeledPair(
                lp.t1[sl].copy(), lp.t2[sl].copy(), lp.mask[sl].copy(),
                None if lp.hardness is None else lp.hardness[sl].copy(),
                name=f"{lp.name}_r{k}c{j}" if lp.name else f"r{k}c{j}",
            ))
    return out


@dataclass(frozen=True)
class GeoTransform:
    """Counter-clockwise quarter turns, then flips, then a central crop resized back."""

    rot90: int = 0
    hflip: bool = False
    vflip: bool = False
    crop: float = 1.0


def sample_transform(rng: np.random.Generator) -> GeoTransform:
    crop = 1.0 if rng.random() < 0.5 else float(rng.uniform(0.7, 1.0))
    return GeoTransform(int(rng.integers(4)), bool(rng.random() < 0.5), bool(rng.random() < 0.5), crop)


def _crop_box(n: int, frac: float) -> tuple[int, int]:
    keep = max(1, int(round(n * frac)))
    start = (n - keep) // 2
    return start, keep


def apply_transform(arr: np.ndarray, tf: GeoTransform, label: bool = False) -> np.ndarray:
    """Apply ``tf`` to an (H, W) or (H, W, C) array.

    Images use bilinear resampling for the crop; labels use nearest.
    """
    out = np.rot90(arr, tf.rot90, axes=(0, 1))
    if tf.hflip:
        out = out[:, ::-1]
    if tf.vflip:
        out = out[::-1]
    if tf.crop < 1.0:
        h, w = out.shape[:2]
        y0, kh = _crop_box(h, tf.crop)
        x0, kw = _crop_box(w, tf.crop)
        out = out[y0:y0 + kh, x0:x0 + kw]
        if label:
            # nearest: sample the crop at output pixel centres
            ys = np.minimum(((np.arange(h) + 0.5) * kh / h).astype(int), kh - 1)
            xs = np.minimum(((np.arange(w) + 0.5) * kw / w).astype(int), kw - 1)
            out = out[ys][:, xs]
        else:
            out = cv2.resize(np.ascontiguousarray(out), (w, h), interpolation=cv2.INTER_LINEAR)
    return np.ascontiguousarray(out)


def transform_pair(lp: LabeledPair, tf: GeoTransform) -> LabeledPair:
    return LabeledPair(
        apply_transform(lp.t1, tf),
        apply_transform(lp.t2, tf),
        apply_transform(lp.mask, tf, label=True),
        None if lp.hardness is None else apply_transform(lp.hardness, tf, label=True),
        name=lp.name,
    )


def augment(lp: LabeledPair, seed: int | np.random.Generator) -> LabeledPair:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return transform_pair(lp, sample_transform(rng))
