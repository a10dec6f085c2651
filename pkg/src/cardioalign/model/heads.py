"""Projectors and the stage-III task decoders."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .. import numerics as nx
from ..data.icd10 import DISEASES
from .config import ImageModelConfig
from .layers import MLP, Linear, _uniform_


class FeatureScale(nn.Module):
    """Fixed per-channel centring and scaling of pooled features.

    Mean-pooled tokens share a large common component and differ between
    subjects only slightly. Standardizing with training-set statistics before
    an affine layer reparametrizes that layer (same function class) and keeps
    the optimizer from seeing nearly collinear inputs. Identity until fitted.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.register_buffer("shift", torch.zeros(dim))
        self.register_buffer("scale", torch.ones(dim))

    @torch.no_grad()
    def fit(self, feats: torch.Tensor, eps: float = 1e-6) -> None:
        if feats.ndim != 2 or feats.shape[1] != self.shift.shape[0]:
            raise nx.DimensionError(f"expected [N, {self.shift.shape[0]}] features, got "
                                    f"{tuple(feats.shape)}")
        self.shift.copy_(feats.mean(0))
        self.scale.copy_(feats.std(0, unbiased=False).clamp_min(eps) if len(feats) > 1
                         else torch.ones_like(self.scale))

    def forward(self, x):
        return (x - self.shift) / self.scale


class Projector(nn.Module):
    """Single affine map into the shared embedding space."""

    def __init__(self, dim: int, out: int = 128):
        super().__init__()
        self.norm = FeatureScale(dim)
        self.fc = Linear(dim, out)

    def forward(self, x):
        return self.fc(self.norm(x))


def pool_project(tokens: torch.Tensor, projector: Projector) -> torch.Tensor:
    """Mean over the token axis, then project: [B, L, dim] -> [B, out]."""
    if tokens.shape[-2] == 0:
        raise nx.DimensionError("cannot pool an empty token sequence")
    return projector(tokens.mean(dim=-2))


# ---------------------------------------------------------------------------
# segmentation

class Conv(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel=(1, 3, 3), transpose: bool = False):
        super().__init__()
        self.transpose = transpose
        shape = (c_in, c_out, *kernel) if transpose else (c_out, c_in, *kernel)
        k = math.prod(kernel)
        self.weight = nn.Parameter(_uniform_(torch.empty(*shape), c_in * k, c_out * k))
        self.bias = nn.Parameter(torch.zeros(c_out))
        self.kernel = tuple(kernel)

    def forward(self, x):
        if self.transpose:
            return nx.conv_transpose3d(x, self.weight, self.kernel, self.bias)
        pad = tuple(k // 2 for k in self.kernel)
        return nx.conv3d(x, self.weight, (1, 1, 1), self.bias, padding=pad)


class SegDecoder(nn.Module):
    """U-Net style ladder from patch-grid resolution back to pixels.

    Stage 0 starts from the final encoder output. Each later stage doubles the
    in-plane resolution (the last one also restores the frames of a patch) and
    fuses a skip: intermediate encoder layers, deepest first, lifted to that
    stage's resolution; the raw planes at the final stage.
    """

    def __init__(self, cfg: ImageModelConfig, width: int, classes: int = 6):
        super().__init__()
        self.cfg = cfg
        p = cfg.patch
        self.levels = int(round(math.log2(p.x)))
        taps = cfg.skip_layers()
        self.skip_layers = list(reversed(taps[:-1]))[: max(self.levels - 1, 0)]
        widths = [max(width // 2 ** k, 8) for k in range(self.levels + 1)]
        self.widths = widths
        self.bottom = Conv(cfg.dim, widths[0], (1, 1, 1))
        self.up = nn.ModuleList()
        self.skip = nn.ModuleList()
        self.fuse = nn.ModuleList()
        for k in range(1, self.levels + 1):
            last = k == self.levels
            kt = p.t if last else 1
            self.up.append(Conv(widths[k - 1], widths[k], (kt, 2, 2), transpose=True))
            if last:
                skip_ch = 1
            elif k - 1 < len(self.skip_layers):
                f = 2 ** k
                self.skip.append(Conv(cfg.dim, widths[k], (1, f, f), transpose=True))
                skip_ch = widths[k]
            else:
                skip_ch = 0
            self.fuse.append(Conv(widths[k] + skip_ch, widths[k]))
        self.refine = Conv(widths[-1], widths[-1])
        self.out = Conv(widths[-1], classes, (1, 1, 1))

    def _grid(self, tokens: torch.Tensor) -> torch.Tensor:
        B, L, D = tokens.shape
        gt, gy, gx = (self.cfg.frames // self.cfg.patch_t, self.cfg.crop // self.cfg.patch_y,
                      self.cfg.crop // self.cfg.patch_x)
        P = L // (gt * gy * gx)
        x = tokens.reshape(B, P, gt, gy, gx, D).permute(0, 1, 5, 2, 3, 4)
        return x.reshape(B * P, D, gt, gy, gx)

    def forward(self, latent: torch.Tensor, hidden: list[torch.Tensor],
                planes: torch.Tensor) -> torch.Tensor:
        """latent/hidden: unmasked [B, L_total, dim]; planes [B, P, T, H, W].

        Returns logits [B, P, classes, T, H, W].
        """
        B, P, T, H, W = planes.shape
        x = nx.gelu(self.bottom(self._grid(latent)))
        for k in range(1, self.levels + 1):
            x = self.up[k - 1](x)
            if k == self.levels:
                s = planes.reshape(B * P, 1, T, H, W).to(x.dtype)
                x = torch.cat([x, s], dim=1)
            elif k - 1 < len(self.skip_layers):
                h = hidden[self.skip_layers[k - 1] - 1]
                x = torch.cat([x, self.skip[k - 1](self._grid(h))], dim=1)
            x = nx.gelu(self.fuse[k - 1](x))
        x = self.out(nx.gelu(self.refine(x)))
        return x.reshape(B, P, *x.shape[1:])


def seg_decode(enc_out, planes: torch.Tensor, decoder: SegDecoder) -> torch.Tensor:
    if enc_out.visible is not None:
        raise nx.NumericsError("segmentation decoding needs the unmasked token set")
    return decoder(enc_out.latent, enc_out.hidden, planes)


# ---------------------------------------------------------------------------
# tabular / disease

class TabularDecoder(nn.Module):
    """Shared two-layer trunk with phenotype, physiological, binary and multi-class heads."""

    def __init__(self, dim: int, hidden: int, n_phenotype: int, n_physio: int, n_binary: int,
                 cat_cards: list[int]):
        super().__init__()
        self.norm = FeatureScale(dim)
        self.trunk = MLP(dim, hidden)
        self.cat_cards = list(cat_cards)
        self.phenotype = Linear(hidden, n_phenotype)
        self.physio = Linear(hidden, n_physio)
        self.binary = Linear(hidden, n_binary)
        self.multiclass = Linear(hidden, sum(cat_cards))

    def forward(self, pooled: torch.Tensor) -> dict[str, torch.Tensor]:
        h = self.trunk(self.norm(pooled))
        return {"phenotype": self.phenotype(h), "physio": self.physio(h),
                "binary": self.binary(h), "multiclass": self.multiclass(h)}


class MLPHead(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, 1)

    def forward(self, x):
        return self.fc2(nx.gelu(self.fc1(x)))


class DiseaseHeads(nn.Module):
    """One independent two-layer classifier per disease."""

    def __init__(self, dim: int, hidden: int, diseases=DISEASES):
        super().__init__()
        self.norm = FeatureScale(dim)
        self.heads = nn.ModuleDict({d: MLPHead(dim, hidden) for d in diseases})

    def forward(self, pooled: torch.Tensor, disease: str) -> torch.Tensor:
        if disease not in self.heads:
            raise KeyError(f"unknown disease {disease!r}")
        return self.heads[disease](self.norm(pooled)).squeeze(-1)
