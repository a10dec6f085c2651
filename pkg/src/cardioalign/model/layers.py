"""Parameter-holding wrappers around the numerics ops."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .. import numerics as nx


def _uniform_(t: torch.Tensor, fan_in: int, fan_out: int) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        return t.uniform_(-bound, bound)


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(_uniform_(torch.empty(d_in, d_out), d_in, d_out))
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None

    def forward(self, x):
        return nx.linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return nx.layer_norm(x, self.gain, self.bias, self.eps)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise nx.ConfigurationError(f"attention dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q, self.k, self.v, self.o = (Linear(dim, dim) for _ in range(4))

    def weights(self) -> nx.AttentionWeights:
        return nx.AttentionWeights(self.q.weight, self.k.weight, self.v.weight, self.o.weight,
                                   self.q.bias, self.k.bias, self.v.bias, self.o.bias)

    def forward(self, x):
        return nx.multi_head_attention(x, self.weights(), self.heads)


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0, dropout: float = 0.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, dim)
        self.dropout = dropout

    def forward(self, x):
        x = x + F.dropout(self.attn(self.norm1(x)), self.dropout, self.training)
        h = self.fc2(nx.gelu(self.fc1(self.norm2(x))))
        return x + F.dropout(h, self.dropout, self.training)


class Transformer(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int, mlp_ratio: float = 4.0,
                 dropout: float = 0.0):
        super().__init__()
        if depth < 1:
            raise nx.ConfigurationError("transformer needs at least one layer")
        self.blocks = nn.ModuleList(Block(dim, heads, mlp_ratio, dropout) for _ in range(depth))
        self.norm = LayerNorm(dim)

    def forward(self, x, return_hidden: bool = False):
        hidden = []
        for blk in self.blocks:
            x = blk(x)
            hidden.append(x)
        out = self.norm(x)
        return (out, hidden) if return_hidden else out


class MLP(nn.Module):
    """Two-layer feed-forward map with GELU after each layer."""

    def __init__(self, d_in: int, hidden: int):
        super().__init__()
        self.fc1 = Linear(d_in, hidden)
        self.fc2 = Linear(hidden, hidden)

    def forward(self, x):
        return nx.gelu(self.fc2(nx.gelu(self.fc1(x))))
