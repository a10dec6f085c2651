"""Patch grids, token projection, 5D positional embeddings and random masking.

Token order is plane-major, then (t, y, x) grid order. Within a patch the
pixel vector is flattened (t, y, x) row-major, the same layout as a
``dim × 1 × p_t × p_y × p_x`` convolution kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import torch

from . import instrument
from .numerics import ConfigurationError, DimensionError, conv3d

SA, LA = 0, 1


@dataclass(frozen=True)
class PatchSize:
    x: int = 8
    y: int = 8
    t: int = 5

    @property
    def volume(self) -> int:
        return self.x * self.y * self.t


@dataclass(frozen=True)
class GridGeometry:
    planes: int
    frames: int
    height: int
    width: int
    patch: PatchSize

    def __post_init__(self):
        for axis, n, p in (("t", self.frames, self.patch.t), ("y", self.height, self.patch.y),
                           ("x", self.width, self.patch.x)):
            if n % p:
                raise ConfigurationError(f"plane extent {axis}={n} not divisible by patch {axis}={p}")

    @property
    def grid(self) -> tuple[int, int, int]:
        return (self.frames // self.patch.t, self.height // self.patch.y, self.width // self.patch.x)

    @property
    def per_plane(self) -> int:
        gt, gy, gx = self.grid
        return gt * gy * gx

    @property
    def total(self) -> int:
        return self.planes * self.per_plane


@dataclass
class PatchGrid:
    patches: object  # [..., L_total, p_t*p_y*p_x], numpy or torch
    geometry: GridGeometry


def _permute(x, axes):
    return x.permute(*axes) if isinstance(x, torch.Tensor) else np.transpose(x, axes)


def patch_extract(planes, patch: PatchSize = PatchSize()) -> PatchGrid:
    """Rearrange [..., P, T, H, W] planes into [..., L_total, p_t*p_y*p_x] patch vectors."""
    *lead, P, T, H, W = planes.shape
    geo = GridGeometry(P, T, H, W, patch)
    gt, gy, gx = geo.grid
    n = len(lead)
    x = planes.reshape(*lead, P, gt, patch.t, gy, patch.y, gx, patch.x)
    order = list(range(n)) + [n + i for i in (0, 1, 3, 5, 2, 4, 6)]
    x = _permute(x, order)
    return PatchGrid(x.reshape(*lead, geo.total, patch.volume), geo)


def unpatchify(patches, geometry: GridGeometry):
    """Exact inverse of :func:`patch_extract`."""
    g, p = geometry, geometry.patch
    *lead, L, V = patches.shape
    if L != g.total or V != p.volume:
        raise DimensionError(f"unpatchify: got {L}×{V}, geometry needs {g.total}×{p.volume}")
    gt, gy, gx = g.grid
    n = len(lead)
    x = patches.reshape(*lead, g.planes, gt, gy, gx, p.t, p.y, p.x)
    order = list(range(n)) + [n + i for i in (0, 1, 4, 2, 5, 3, 6)]
    x = _permute(x, order)
    return x.reshape(*lead, g.planes, g.frames, g.height, g.width)


def token_coords(geometry: GridGeometry, views) -> np.ndarray:
    """Per-token integer coordinates (x, y, t, plane, view), shape [L_total, 5]."""
    views = np.asarray(views, dtype=np.int64)
    if len(views) != geometry.planes:
        raise DimensionError("one view flag per plane required")
    gt, gy, gx = geometry.grid
    p, t, y, x = np.meshgrid(np.arange(geometry.planes), np.arange(gt), np.arange(gy),
                             np.arange(gx), indexing="ij")
    coords = np.stack([x, y, t, p, views[p]], axis=-1)
    return coords.reshape(-1, 5)


def token_project(planes: torch.Tensor, kernel: torch.Tensor, bias: torch.Tensor | None,
                  patch: PatchSize) -> torch.Tensor:
    """Strided-conv tokenization of [..., P, T, H, W] planes -> [..., L_total, dim]."""
    *lead, P, T, H, W = planes.shape
    if kernel.shape[1:] != (1, patch.t, patch.y, patch.x):
        raise DimensionError(f"projection kernel {tuple(kernel.shape)} does not match patch {patch}")
    x = planes.reshape(-1, 1, T, H, W)
    y = conv3d(x, kernel, (patch.t, patch.y, patch.x), bias)  # [N, dim, gt, gy, gx]
    dim = y.shape[1]
    y = y.permute(0, 2, 3, 4, 1).reshape(*lead, -1, dim)
    return y


def sinusoid(pos: np.ndarray, channels: int, denom: float) -> np.ndarray:
    """Channel j of ``channels``: sin (even j) / cos (odd j) of pos / 10000^(2⌊j/2⌋/denom)."""
    pos = np.asarray(pos, dtype=np.float64)[:, None]
    j = np.arange(channels)
    freq = 10000.0 ** (-(2 * (j // 2)) / denom)
    ang = pos * freq[None, :]
    return np.where(j % 2 == 0, np.sin(ang), np.cos(ang))


def build_positional_embedding(coords: np.ndarray, dim: int) -> np.ndarray:
    """Fixed [L, dim] embedding: four sinusoidal chunks (x, y, t, plane) + view indicator.

    Each chunk has ⌊(dim-1)/4⌋ channels and uses the full ``dim - 1`` as the
    frequency denominator; leftover channels are zero; the last channel is 0
    for short-axis and 1 for long-axis tokens.
    """
    if dim < 9:
        raise ConfigurationError(f"positional embedding needs dim >= 9, got {dim}")
    coords = np.asarray(coords)
    c = (dim - 1) // 4
    pe = np.zeros((len(coords), dim), dtype=np.float64)
    for axis in range(4):
        pe[:, axis * c:(axis + 1) * c] = sinusoid(coords[:, axis], c, dim - 1)
    pe[:, -1] = coords[:, 4]
    return pe


@dataclass
class MaskPlan:
    ratio: float
    visible: np.ndarray
    masked: np.ndarray
    seed: int | None = None

    @property
    def total(self) -> int:
        return len(self.visible) + len(self.masked)

    @classmethod
    def full(cls, total: int) -> "MaskPlan":
        return cls(0.0, np.arange(total), np.zeros(0, dtype=np.int64), None)


def masked_count(total: int, ratio: float) -> int:
    q = Fraction(str(ratio)) if isinstance(ratio, float) else Fraction(ratio)
    return math.floor(q * total / 100)


def sample_mask(total: int, ratio: float, seed: int | np.random.Generator | None = None) -> MaskPlan:
    """Hide ⌊ratio·total/100⌋ uniformly chosen tokens; indices returned sorted."""
    if not 0 <= ratio < 100:
        raise ConfigurationError(f"masking ratio must lie in [0, 100), got {ratio}")
    instrument.bump("mask")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_mask = masked_count(total, ratio)
    perm = rng.permutation(total)
    return MaskPlan(ratio, np.sort(perm[n_mask:]), np.sort(perm[:n_mask]),
                    seed if isinstance(seed, int) else None)
