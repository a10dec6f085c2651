"""Imaging branch: strided-conv tokenizer, masked encoder and pixel decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .. import numerics as nx
from ..patching import (GridGeometry, MaskPlan, build_positional_embedding, token_coords,
                        token_project)
from .config import ImageModelConfig
from .layers import Linear, Transformer, _uniform_


@dataclass
class EncoderOutput:
    latent: torch.Tensor            # [B, L_visible, dim], final-normed
    hidden: list[torch.Tensor]      # per-layer outputs, [B, L_visible, dim]
    visible: torch.Tensor | None    # [B, L_visible] token indices, None when unmasked


def plan_indices(plans: list[MaskPlan] | None, total: int) -> torch.Tensor | None:
    if plans is None:
        return None
    for p in plans:
        if p.total != total:
            raise nx.DimensionError(f"mask plan covers {p.total} tokens, sequence has {total}")
    if len({len(p.visible) for p in plans}) > 1:
        raise nx.DimensionError("mask plans in one batch must keep the same number of tokens")
    return torch.as_tensor(np.stack([p.visible for p in plans]), dtype=torch.long)


def gather_tokens(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    return torch.gather(x, 1, idx[..., None].expand(-1, -1, x.shape[-1]))


class ImageEncoder(nn.Module):
    def __init__(self, cfg: ImageModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        p = cfg.patch
        self.geometry = GridGeometry(cfg.planes, cfg.frames, cfg.crop, cfg.crop, p)
        fan_in = p.volume
        self.patch_kernel = nn.Parameter(
            _uniform_(torch.empty(cfg.dim, 1, p.t, p.y, p.x), fan_in, cfg.dim))
        self.patch_bias = nn.Parameter(torch.zeros(cfg.dim))
        views = [0] * cfg.n_sa + [1] * cfg.n_la
        self.coords = token_coords(self.geometry, views)
        pe = build_positional_embedding(self.coords, cfg.dim)
        self.register_buffer("pe", torch.as_tensor(pe, dtype=torch.get_default_dtype()),
                             persistent=False)
        self.transformer = Transformer(cfg.dim, cfg.enc_layers, cfg.heads, cfg.mlp_ratio,
                                       cfg.dropout)

    @property
    def total_tokens(self) -> int:
        return self.geometry.total

    def tokenize(self, planes: torch.Tensor) -> torch.Tensor:
        """[B, P, T, H, W] -> [B, L_total, dim] tokens with positional embedding added."""
        tok = token_project(planes, self.patch_kernel, self.patch_bias, self.cfg.patch)
        return tok + self.pe.to(tok.dtype)

    def transform(self, tokens: torch.Tensor, return_hidden: bool = False):
        return self.transformer(tokens, return_hidden)

    def forward(self, planes: torch.Tensor, plans: list[MaskPlan] | None = None) -> EncoderOutput:
        x = self.tokenize(planes)
        idx = plan_indices(plans, self.total_tokens)
        if idx is not None:
            x = gather_tokens(x, idx)
        latent, hidden = self.transform(x, return_hidden=True)
        return EncoderOutput(latent, hidden, idx)


class ImageDecoder(nn.Module):
    """Fills hidden positions with a shared mask token and predicts every patch's pixels."""

    def __init__(self, cfg: ImageModelConfig, coords: np.ndarray):
        super().__init__()
        self.cfg = cfg
        self.embed = Linear(cfg.dim, cfg.dec_dim)
        self.mask_token = nn.Parameter(torch.randn(cfg.dec_dim) * 0.02)
        pe = build_positional_embedding(coords, cfg.dec_dim)
        self.register_buffer("pe", torch.as_tensor(pe, dtype=torch.get_default_dtype()),
                             persistent=False)
        self.transformer = Transformer(cfg.dec_dim, cfg.dec_layers, cfg.dec_heads, cfg.mlp_ratio)
        self.head = Linear(cfg.dec_dim, cfg.patch.volume)

    def forward(self, enc: EncoderOutput) -> torch.Tensor:
        x = self.embed(enc.latent)
        B, _, D = x.shape
        L = self.pe.shape[0]
        if enc.visible is None:
            full = x
        else:
            full = self.mask_token.expand(B, L, D)
            full = full.scatter(1, enc.visible[..., None].expand(-1, -1, D), x)
        full = full + self.pe.to(x.dtype)
        return self.head(self.transformer(full))
