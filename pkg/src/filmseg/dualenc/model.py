"""Tiny vision/text dual encoder with tappable vision blocks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..layers import TransformerBlock, parameter_fingerprint
from .tokenizer import Tokenizer

PRESETS = {
    "base": dict(n_vision_blocks=10, model_width=64, n_heads=4, joint_dim=64, n_text_blocks=4),
    "large": dict(n_vision_blocks=12, model_width=96, n_heads=6, joint_dim=64, n_text_blocks=4),
}


@dataclass(frozen=True)
class EncoderConfig:
    vocabulary: tuple[str, ...]
    image_size: int = 128
    patch_size: int = 16
    n_vision_blocks: int = 10
    n_text_blocks: int = 4
    model_width: int = 64
    n_heads: int = 4
    joint_dim: int = 64
    max_text_len: int = 20
    taps: tuple[int, ...] = (1, 3, 5, 7, 9)
    text_pooling: str = "eos"
    backend_size: str = "base"
    stem: str = "conv"  # "conv": strided 3x3 convolutions before patchify; "linear": one patch projection

    def __post_init__(self):
        if len(self.taps) < 2:
            raise ValueError("need at least two tapped blocks")
        if list(self.taps) != sorted(set(self.taps)) or self.taps[0] < 1:
            raise ValueError(f"taps must be strictly increasing block indices >= 1: {self.taps}")
        if max(self.taps) > self.n_vision_blocks:
            raise ValueError(f"tap {max(self.taps)} exceeds {self.n_vision_blocks} vision blocks")
        if self.image_size % self.patch_size:
            raise ValueError(f"image size {self.image_size} not divisible by patch {self.patch_size}")
        if self.stem not in ("conv", "linear"):
            raise ValueError(f"stem must be conv or linear, got {self.stem!r}")
        if self.stem == "conv" and self.patch_size % 8:
            raise ValueError("the conv stem needs a patch size divisible by 8")
        if self.text_pooling not in ("eos", "mean"):
            raise ValueError(f"text_pooling must be eos or mean, got {self.text_pooling!r}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @classmethod
    def preset(cls, name: str, vocabulary, **overrides) -> "EncoderConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown backend preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(vocabulary=tuple(vocabulary), backend_size=name, **{**PRESETS[name], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocabulary"] = list(self.vocabulary)
        d["taps"] = list(self.taps)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**{**d, "vocabulary": tuple(d["vocabulary"]), "taps": tuple(d["taps"])})


@dataclass
class TextEmbedding:
    vector: torch.Tensor  # (d_e,) or (B, d_e), unit norm
    pool_index: torch.Tensor  # token index used for pooling (-1 for mean pooling)


@dataclass
class VisualProjectionSet:
    projections: list[torch.Tensor]  # each (B, n_tokens, d_model), ascending tap order
    taps: tuple[int, ...]

    def __len__(self):
        return len(self.projections)


def image_tensor(images) -> torch.Tensor:
    """uint8 HxWx3 (or a batch of them) -> normalized float tensor Bx3xHxW."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    x = torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 3, 1, 2).float()
    return (x / 255.0 - 0.5) / 0.25


def patch_stem(kind: str, width: int, patch: int) -> nn.Module:
    """Image -> (B, width, H/patch, W/patch) token grid."""
    if kind == "linear":
        return nn.Conv2d(3, width, patch, patch)
    chans = (3, width // 4, width // 2, width)
    layers = []
    for a, b in zip(chans, chans[1:]):
        layers += [nn.Conv2d(a, b, 3, 2, 1), nn.GELU()]
    layers.append(nn.Conv2d(width, width, patch // 8, patch // 8))
    return nn.Sequential(*layers)


class DualEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.tokenizer = Tokenizer(config.vocabulary, config.max_text_len)
        c, w = config, config.model_width
        n_patches = c.grid**2
        self.patch_embed = patch_stem(c.stem, w, c.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, w))
        self.vis_pos = nn.Parameter(torch.randn(1, n_patches + 1, w) * 0.02)
        self.vis_ln_pre = nn.LayerNorm(w)
        self.vis_blocks = nn.ModuleList(TransformerBlock(w, c.n_heads) for _ in range(c.n_vision_blocks))
        self.vis_ln_post = nn.LayerNorm(w)
        self.vis_proj = nn.Linear(w, c.joint_dim, bias=False)

        self.tok_embed = nn.Embedding(len(self.tokenizer), w)
        self.txt_pos = nn.Parameter(torch.randn(1, c.max_text_len, w) * 0.01)
        self.txt_blocks = nn.ModuleList(TransformerBlock(w, c.n_heads) for _ in range(c.n_text_blocks))
        self.txt_ln = nn.LayerNorm(w)
        self.txt_proj = nn.Linear(w, c.joint_dim, bias=False)

        self.logit_scale = nn.Parameter(torch.tensor(math.log(1 / 0.07)))

    # -- vision --
    def vision_forward(self, x: torch.Tensor, taps=None, final_tokens: bool = False):
        """Returns ({block: patch tokens}, normalized global embedding[, last block output])."""
        c = self.config
        if x.shape[-2:] != (c.image_size, c.image_size):
            raise ValueError(f"image must be {c.image_size}x{c.image_size}, got {tuple(x.shape[-2:])}")
        taps = set(c.taps if taps is None else taps)
        h = self.patch_embed(x).flatten(2).transpose(1, 2)
        h = torch.cat([self.cls_token.expand(h.shape[0], -1, -1), h], dim=1) + self.vis_pos
        h = self.vis_ln_pre(h)
        tapped = {}
        for i, block in enumerate(self.vis_blocks, start=1):
            h = block(h)
            if i in taps:
                tapped[i] = h[:, 1:]
        g = F.normalize(self.vis_proj(self.vis_ln_post(h[:, 0])), dim=-1)
        if final_tokens:
            return tapped, g, h
        return tapped, g

    def encode_image(self, images, taps=None) -> tuple[VisualProjectionSet, torch.Tensor]:
        x = images if isinstance(images, torch.Tensor) else image_tensor(images)
        taps = tuple(sorted(self.config.taps if taps is None else taps))
        tapped, g = self.vision_forward(x, taps)
        return VisualProjectionSet([tapped[t] for t in taps], taps), g

    # -- text --
    def text_hidden(self, tokens: torch.Tensor) -> torch.Tensor:
        pad = tokens == self.tokenizer.pad_id
        h = self.tok_embed(tokens) + self.txt_pos[:, : tokens.shape[1]]
        for block in self.txt_blocks:
            h = block(h, pad)
        return self.txt_ln(h)

    def text_forward(self, tokens: torch.Tensor) -> TextEmbedding:
        h = self.text_hidden(tokens)
        if self.config.text_pooling == "eos":
            idx = (tokens == self.tokenizer.eos_id).int().argmax(dim=1)
            pooled = h[torch.arange(h.shape[0]), idx]
        else:
            keep = (tokens != self.tokenizer.pad_id).unsqueeze(-1).to(h.dtype)
            pooled = (h * keep).sum(1) / keep.sum(1)
            idx = torch.full((h.shape[0],), -1)
        return TextEmbedding(F.normalize(self.txt_proj(pooled), dim=-1), idx)

    def encode_text(self, texts) -> TextEmbedding:
        single = isinstance(texts, str)
        emb = self.text_forward(self.tokenizer.batch([texts] if single else texts))
        if single:
            return TextEmbedding(emb.vector[0], emb.pool_index[0])
        return emb

    def tokenize(self, text: str) -> list[int]:
        return self.tokenizer.tokenize(text)

    def text_parameters(self):
        return [p for n, p in self.named_parameters() if n.startswith(("tok_embed", "txt_"))]

    def vision_parameters(self):
        return [p for n, p in self.named_parameters() if n.startswith(("patch_embed", "cls_token", "vis_"))]


@dataclass
class EncoderWeights:
    model: DualEncoder
    frozen: bool = False
    fingerprint: str = ""
    metrics: dict = field(default_factory=dict)

    @property
    def config(self) -> EncoderConfig:
        return self.model.config

    def refresh_fingerprint(self) -> str:
        self.fingerprint = parameter_fingerprint(self.model)
        return self.fingerprint

    def encode_text(self, texts):
        with torch.no_grad():
            return self.model.encode_text(texts)

    def encode_image(self, images, taps=None):
        with torch.no_grad():
            return self.model.encode_image(images, taps)


def freeze(weights: EncoderWeights) -> EncoderWeights:
    """Turn off gradients, switch to eval mode and record the fingerprint. Idempotent."""
    for p in weights.model.parameters():
        p.requires_grad_(False)
    weights.model.eval()
    weights.refresh_fingerprint()
    return replace(weights, frozen=True)


def unfreeze(weights: EncoderWeights) -> EncoderWeights:
    for p in weights.model.parameters():
        p.requires_grad_(True)
    return replace(weights, frozen=False)
