"""Training-time augmentation: per-plane rotation, flips and contrast."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import instrument


@dataclass(frozen=True)
class AugmentConfig:
    max_rotation: float = 30.0  # degrees, uniform in [-max, max]
    flip_prob: float = 0.5
    contrast: tuple[float, float] = (0.8, 1.2)

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, (1.0, 1.0))


def flip_plane(a: np.ndarray, axis: int) -> np.ndarray:
    return np.flip(a, axis=axis)


def rotate_plane(a: np.ndarray, degrees: float, order: int) -> np.ndarray:
    """Rotate every frame of a T×H×W plane about its centre."""
    if degrees == 0:
        return a
    mode = "nearest" if order == 0 else "constant"
    return ndimage.rotate(a, degrees, axes=(-1, -2), reshape=False, order=order, mode=mode,
                          cval=float(a.min()) if order else 0.0)


def augment_subject(images: np.ndarray, labels: np.ndarray | None, cfg: AugmentConfig,
                    seed: int | np.random.Generator) -> tuple[np.ndarray, np.ndarray | None]:
    """Augment a P×T×H×W stack (and its mask) with independent draws per plane.

    Geometry is shared between image (linear interpolation) and mask (nearest);
    contrast touches the image only. Output intensities stay in [0, 1].
    """
    instrument.bump("augment")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    img = np.array(images, dtype=np.float32, copy=True)
    lab = None if labels is None else np.array(labels, copy=True)
    for p in range(img.shape[0]):
        angle = rng.uniform(-cfg.max_rotation, cfg.max_rotation) if cfg.max_rotation else 0.0
        flip_h = rng.random() < cfg.flip_prob
        flip_v = rng.random() < cfg.flip_prob
        gain = rng.uniform(*cfg.contrast) if cfg.contrast != (1.0, 1.0) else 1.0
        x = img[p]
        y = None if lab is None else lab[p]
        if angle:
            x = rotate_plane(x, angle, order=1)
            y = None if y is None else rotate_plane(y, angle, order=0)
        if flip_h:
            x = flip_plane(x, -1)
            y = None if y is None else flip_plane(y, -1)
        if flip_v:
            x = flip_plane(x, -2)
            y = None if y is None else flip_plane(y, -2)
        img[p] = np.clip(x * gain, 0.0, 1.0)
        if lab is not None:
            lab[p] = y
    return img, lab
