"""Tabular branch: per-feature embeddings and an unmasked transformer encoder."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..data.schema import NUMERICAL, SchemaError, TabularSchema
from .config import TabularModelConfig
from .layers import Transformer


class TabularEmbedding(nn.Module):
    """Numerical feature f -> value * scale_f + bias_f; categorical -> lookup row.

    Each categorical table has ``cardinality + 1`` rows; the extra row is the
    imputation fallback for a feature never observed in the fitting split.
    Tokens come out in schema order.
    """

    def __init__(self, schema: TabularSchema, dim: int):
        super().__init__()
        self.schema = schema
        num = [i for i, f in enumerate(schema.features) if f.kind == NUMERICAL]
        cat = [i for i, f in enumerate(schema.features) if f.kind != NUMERICAL]
        cards = [schema.features[i].cardinality for i in cat]
        self.register_buffer("num_idx", torch.as_tensor(num, dtype=torch.long), persistent=False)
        self.register_buffer("cat_idx", torch.as_tensor(cat, dtype=torch.long), persistent=False)
        self.register_buffer("cat_card", torch.as_tensor(cards, dtype=torch.long), persistent=False)
        offsets = np.concatenate([[0], np.cumsum(np.asarray(cards, dtype=np.int64) + 1)[:-1]]) \
            if cards else np.zeros(0, dtype=np.int64)
        self.register_buffer("cat_offset", torch.as_tensor(offsets, dtype=torch.long),
                             persistent=False)
        # position of each schema feature inside cat([numerical, categorical])
        order = np.argsort(np.concatenate([num, cat]).astype(np.int64), kind="stable")
        self.register_buffer("order", torch.as_tensor(order, dtype=torch.long), persistent=False)
        self.num_scale = nn.Parameter(torch.randn(len(num), dim) * 0.02)
        self.num_bias = nn.Parameter(torch.randn(len(num), dim) * 0.02)
        self.cat_table = nn.Parameter(torch.randn(int(sum(cards) + len(cards)), dim) * 0.02)

    def forward(self, values: torch.Tensor) -> torch.Tensor:
        """[B, F] standardized values / category codes -> [B, F, dim]."""
        if values.shape[-1] != len(self.schema):
            raise SchemaError(f"got {values.shape[-1]} features, schema has {len(self.schema)}")
        parts = []
        if len(self.num_idx):
            v = values[:, self.num_idx]
            parts.append(v[..., None] * self.num_scale + self.num_bias)
        if len(self.cat_idx):
            codes = values[:, self.cat_idx]
            if (codes != codes.round()).any() or (codes < 0).any() or (codes > self.cat_card).any():
                raise SchemaError("categorical code out of range")
            rows = codes.long() + self.cat_offset
            parts.append(self.cat_table[rows])
        tokens = torch.cat(parts, dim=1)
        return tokens[:, self.order]


class TabularEncoder(nn.Module):
    def __init__(self, cfg: TabularModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.transformer = Transformer(cfg.dim, cfg.layers, cfg.heads, cfg.mlp_ratio, cfg.dropout)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.transformer(tokens)
