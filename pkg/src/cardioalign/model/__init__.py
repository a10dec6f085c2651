"""Model container: builds whichever components a stage needs from one config."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..data.icd10 import DISEASES
from ..data.phantom import APPENDIX_PHENOTYPES, CLASSES
from ..data.schema import BINARY, CARDIAC_NUMERICAL, CATEGORICAL, NUMERICAL, TabularSchema
from .config import ImageModelConfig, ModelConfig, TabularModelConfig, paper_model_config
from .heads import (DiseaseHeads, Projector, SegDecoder, TabularDecoder, pool_project,
                    seg_decode)
from .image import EncoderOutput, ImageDecoder, ImageEncoder
from .tabular import TabularEmbedding, TabularEncoder

STAGE_PARTS = {
    "I": ("image_encoder", "image_decoder"),
    "II": ("image_encoder", "tabular_embed", "tabular_encoder", "proj_image", "proj_tabular"),
    "III": ("image_encoder",),
}
TASK_PARTS = {"seg": ("seg_decoder",), "tabular": ("tab_decoder",), "disease": ("disease_heads",)}
ALL_PARTS = ("image_encoder", "image_decoder", "tabular_embed", "tabular_encoder", "proj_image",
             "proj_tabular", "seg_decoder", "tab_decoder", "disease_heads")


@dataclass
class TabularTargets:
    """Schema column groups predicted by the tabular decoder (phenotypes come separately)."""

    physio: list[int]
    binary: list[int]
    categorical: list[int]
    cards: list[int]

    @classmethod
    def from_schema(cls, schema: TabularSchema) -> "TabularTargets":
        cardiac = set(CARDIAC_NUMERICAL)
        physio = [i for i in schema.indices(NUMERICAL) if schema.features[i].name not in cardiac]
        cat = schema.indices(CATEGORICAL)
        return cls(physio, schema.indices(BINARY), cat,
                   [schema.features[i].cardinality for i in cat])


class CardiacModel(nn.Module):
    def __init__(self, cfg: ModelConfig, schema: TabularSchema, parts=ALL_PARTS):
        super().__init__()
        cfg.validate()
        unknown = set(parts) - set(ALL_PARTS)
        if unknown:
            raise KeyError(f"unknown model parts {sorted(unknown)}")
        self.cfg = cfg
        self.schema = schema
        self.parts = tuple(p for p in ALL_PARTS if p in parts)
        icfg, tcfg = cfg.image, cfg.tabular
        self.targets = TabularTargets.from_schema(schema)
        self.image_encoder = ImageEncoder(icfg)
        if "image_decoder" in parts:
            self.image_decoder = ImageDecoder(icfg, self.image_encoder.coords)
        if "tabular_embed" in parts:
            self.tabular_embed = TabularEmbedding(schema, tcfg.dim)
        if "tabular_encoder" in parts:
            self.tabular_encoder = TabularEncoder(tcfg)
        if "proj_image" in parts:
            self.proj_image = Projector(icfg.dim, cfg.proj_dim)
        if "proj_tabular" in parts:
            self.proj_tabular = Projector(tcfg.dim, cfg.proj_dim)
        if "seg_decoder" in parts:
            self.seg_decoder = SegDecoder(icfg, cfg.seg_width, len(CLASSES))
        if "tab_decoder" in parts:
            t = self.targets
            self.tab_decoder = TabularDecoder(icfg.dim, cfg.head_hidden, len(APPENDIX_PHENOTYPES),
                                              len(t.physio), len(t.binary), t.cards)
        if "disease_heads" in parts:
            self.disease_heads = DiseaseHeads(icfg.dim, cfg.head_hidden, DISEASES)

    def encode_image(self, planes: torch.Tensor, plans=None) -> EncoderOutput:
        return self.image_encoder(planes, plans)

    def embed_image(self, planes: torch.Tensor, plans=None) -> torch.Tensor:
        return pool_project(self.encode_image(planes, plans).latent, self.proj_image)

    def embed_tabular(self, values: torch.Tensor) -> torch.Tensor:
        return pool_project(self.tabular_encoder(self.tabular_embed(values)), self.proj_tabular)

    def reconstruct(self, planes: torch.Tensor, plans) -> torch.Tensor:
        return self.image_decoder(self.encode_image(planes, plans))

    def segment(self, planes: torch.Tensor) -> torch.Tensor:
        return seg_decode(self.encode_image(planes), planes, self.seg_decoder)

    def pooled(self, planes: torch.Tensor) -> torch.Tensor:
        return self.encode_image(planes).latent.mean(dim=-2)


def count_parameters(module: nn.Module) -> dict[str, int]:
    """Trainable parameter count per top-level child, plus ``total``."""
    out = {name: sum(p.numel() for p in child.parameters()) for name, child in module.named_children()}
    out["total"] = sum(p.numel() for p in module.parameters())
    return out


__all__ = [
    "ALL_PARTS", "STAGE_PARTS", "TASK_PARTS", "CardiacModel", "EncoderOutput", "ImageModelConfig",
    "ModelConfig", "TabularModelConfig", "TabularTargets", "count_parameters",
    "paper_model_config",
]
