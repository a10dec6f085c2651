from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..numerics import ConfigurationError
from ..patching import PatchSize


@dataclass
class ImageModelConfig:
    dim: int = 64
    enc_layers: int = 2
    dec_layers: int = 1
    heads: int = 4
    dec_dim: int = 32
    dec_heads: int = 4
    mlp_ratio: float = 4.0
    patch_x: int = 8
    patch_y: int = 8
    patch_t: int = 5
    crop: int = 48
    frames: int = 5
    n_sa: int = 6
    n_la: int = 3
    dropout: float = 0.0

    @property
    def patch(self) -> PatchSize:
        return PatchSize(self.patch_x, self.patch_y, self.patch_t)

    @property
    def planes(self) -> int:
        return self.n_sa + self.n_la

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ConfigurationError(f"image dim {self.dim} not divisible by {self.heads} heads")
        if self.dec_dim % self.dec_heads:
            raise ConfigurationError(
                f"decoder dim {self.dec_dim} not divisible by {self.dec_heads} heads")
        if min(self.dim, self.dec_dim) < 9:
            raise ConfigurationError("positional embedding needs encoder and decoder dims >= 9")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ConfigurationError("encoder and decoder need at least one layer")
        for axis, n, p in (("x", self.crop, self.patch_x), ("y", self.crop, self.patch_y),
                           ("t", self.frames, self.patch_t)):
            if n % p:
                raise ConfigurationError(f"extent {axis}={n} not divisible by patch {p}")
        sx = self.patch_x
        if sx != self.patch_y or sx & (sx - 1):
            raise ConfigurationError("segmentation ladder needs square power-of-two patches")

    def skip_layers(self) -> list[int]:
        """1-based encoder layers tapped by the segmentation decoder, deepest last."""
        n = min(self.enc_layers, 3)
        return sorted({round(self.enc_layers * (i + 1) / n) for i in range(n)})


@dataclass
class TabularModelConfig:
    dim: int = 65
    layers: int = 2
    heads: int = 5
    mlp_ratio: float = 4.0
    dropout: float = 0.0

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ConfigurationError(f"tabular dim {self.dim} not divisible by {self.heads} heads")
        if self.layers < 1:
            raise ConfigurationError("tabular encoder needs at least one layer")


@dataclass
class ModelConfig:
    image: ImageModelConfig = field(default_factory=ImageModelConfig)
    tabular: TabularModelConfig = field(default_factory=TabularModelConfig)
    proj_dim: int = 128
    head_hidden: int = 256
    seg_width: int = 48

    def validate(self) -> None:
        self.image.validate()
        self.tabular.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(ImageModelConfig(**d["image"]), TabularModelConfig(**d["tabular"]),
                   d.get("proj_dim", 128), d.get("head_hidden", 256), d.get("seg_width", 48))


def paper_model_config() -> ModelConfig:
    return ModelConfig(
        image=ImageModelConfig(dim=1024, enc_layers=6, dec_layers=2, heads=4, dec_dim=512,
                               dec_heads=4, crop=128, frames=5),
        tabular=TabularModelConfig(dim=1025, layers=2, heads=5),
        proj_dim=128, head_hidden=256, seg_width=576)
