"""Query-conditioned segmentation decoder over tapped encoder projections."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..layers import TransformerBlock, count_parameters

VARIANTS = ("hierarchical_film", "single_film", "cross_attention")


class UnknownVariantError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    taps: tuple[int, ...] = (1, 3, 5, 7, 9)
    width: int = 64
    n_heads: int = 2
    attn_dim: int = 32
    mlp_dim: int = 32
    variant: str = "hierarchical_film"
    encoder_width: int = 64
    joint_dim: int = 64
    image_size: int = 128
    patch_size: int = 16
    head_hidden: tuple[int, int] = (16, 8)
    tap_order: str = "ascending"
    head_channels: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UnknownVariantError(f"unknown fusion variant {self.variant!r}; choose from {VARIANTS}")
        if len(self.taps) < 2:
            raise ValueError("decoder needs at least two taps")
        if self.tap_order not in ("ascending", "descending"):
            raise ValueError(f"tap_order must be ascending or descending, got {self.tap_order!r}")
        if self.image_size % self.patch_size:
            raise ValueError("image size must be a multiple of the patch size")
        if self.head_channels != 2:
            raise ValueError("the mask head is two-class")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["taps"] = list(self.taps)
        d["head_hidden"] = list(self.head_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        return cls(**{**d, "taps": tuple(d["taps"]), "head_hidden": tuple(d["head_hidden"])})


def film_modulate(x: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Per-channel scale and shift, broadcast over tokens. x: (B, N, D); alpha, beta: (B, D)."""
    if alpha.shape != beta.shape or alpha.shape[-1] != x.shape[-1] or alpha.shape[0] != x.shape[0]:
        raise ValueError(
            f"modulation shapes {tuple(alpha.shape)}/{tuple(beta.shape)} do not fit tokens {tuple(x.shape)}"
        )
    return alpha.unsqueeze(1) * x + beta.unsqueeze(1)


class FiLMLayer(nn.Module):
    """Two affine maps from the text embedding; start as the identity modulation."""

    def __init__(self, joint_dim: int, width: int):
        super().__init__()
        self.alpha_net = nn.Linear(joint_dim, width)
        self.beta_net = nn.Linear(joint_dim, width)
        nn.init.zeros_(self.alpha_net.weight)
        nn.init.ones_(self.alpha_net.bias)
        nn.init.zeros_(self.beta_net.weight)
        nn.init.zeros_(self.beta_net.bias)

    def coefficients(self, q_e: torch.Tensor):
        return self.alpha_net(q_e), self.beta_net(q_e)

    def forward(self, q_e: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        alpha, beta = self.coefficients(q_e)
        return film_modulate(x, alpha, beta)


class TextCrossAttention(nn.Module):
    """Visual tokens attend to the text embedding treated as a single key/value token."""

    def __init__(self, width: int, joint_dim: int, attn_dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.ln = nn.LayerNorm(width)
        self.q = nn.Linear(width, attn_dim)
        self.k = nn.Linear(joint_dim, attn_dim)
        self.v = nn.Linear(joint_dim, attn_dim)
        self.o = nn.Linear(attn_dim, width)

    def forward(self, q_e: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        h = self.n_heads
        q = self.q(self.ln(x)).reshape(b, n, h, -1).transpose(1, 2)  # (B, h, N, dh)
        k = self.k(q_e).reshape(b, h, 1, -1)
        v = self.v(q_e).reshape(b, h, 1, -1)
        att = (q @ k.transpose(-2, -1)) * q.shape[-1] ** -0.5  # (B, h, N, 1)
        out = (att.softmax(dim=-1) @ v).transpose(1, 2).reshape(b, n, -1)
        return x + self.o(out)


def _stage_geometry(factor: int) -> tuple[int, int, int]:
    """(kernel, stride, padding) for a transposed conv that scales a side by exactly ``factor``."""
    if factor % 2 == 0:
        return 2 * factor, factor, factor // 2
    return factor, factor, 0


def _split_factor(total: int) -> tuple[int, int]:
    f1 = next(f for f in range(math.isqrt(total), total + 1) if total % f == 0 and f * f >= total)
    return f1, total // f1


class MaskHead(nn.Module):
    """Token grid -> two-class logits at full resolution via two transposed convolutions."""

    def __init__(self, config: DecoderConfig):
        super().__init__()
        c1, c2 = config.head_hidden
        f1, f2 = _split_factor(config.patch_size)
        self.grid = config.grid
        self.reduce = nn.Linear(config.width, c1)
        k, s, p = _stage_geometry(f1)
        self.up1 = nn.ConvTranspose2d(c1, c2, k, s, p)
        k, s, p = _stage_geometry(f2)
        self.up2 = nn.ConvTranspose2d(c2, config.head_channels, k, s, p)

    def forward(self, d_k: torch.Tensor) -> torch.Tensor:
        b, n, _ = d_k.shape
        side = math.isqrt(n)
        if side * side != n:
            raise ValueError(f"token count {n} is not a square grid")
        x = self.reduce(d_k).transpose(1, 2).reshape(b, -1, side, side)
        return self.up2(F.relu(self.up1(x)))


@dataclass
class PredictionMask:
    prob_map: np.ndarray  # (H, W) foreground probability
    binary_mask: np.ndarray  # (H, W) bool
    logits: torch.Tensor | None = None

    @classmethod
    def from_logits(cls, logits: torch.Tensor) -> "PredictionMask":
        """logits: (2, H, W) for a single image."""
        probs = logits.softmax(dim=0)
        fg = probs[1].detach().cpu().numpy()
        return cls(fg, fg > 0.5, logits)


class Decoder(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        c = config
        k = len(c.taps)
        self.reduce = nn.ModuleList(nn.Linear(c.encoder_width, c.width) for _ in range(k))
        self.blocks = nn.ModuleList(
            TransformerBlock(c.width, c.n_heads, c.attn_dim, c.mlp_dim) for _ in range(k - 1)
        )
        if c.variant == "hierarchical_film":
            self.fusion = nn.ModuleList(FiLMLayer(c.joint_dim, c.width) for _ in range(k))
        elif c.variant == "single_film":
            self.fusion = nn.ModuleList([FiLMLayer(c.joint_dim, c.width)])
        else:
            self.fusion = nn.ModuleList(
                TextCrossAttention(c.width, c.joint_dim, c.attn_dim, c.n_heads) for _ in range(k)
            )
        self.head = MaskHead(c)

    def _ordered(self, projections):
        if len(projections) != len(self.config.taps):
            raise ValueError(f"expected {len(self.config.taps)} projections, got {len(projections)}")
        ps = list(projections)
        return ps[::-1] if self.config.tap_order == "descending" else ps

    def decode(self, projections, q_e: torch.Tensor, fuse: bool = True, trace: list | None = None):
        """Run every stage and return the final token state.

        With ``trace`` given, each stage appends a dict of its intermediate tensors.
        ``fuse=False`` skips text conditioning entirely (reference path for tests).
        """
        ps = self._ordered(projections)
        state = None
        for i, (p, reduce) in enumerate(zip(ps, self.reduce)):
            p = reduce(p)
            carried = torch.zeros_like(p) if state is None else self.blocks[i - 1](state)
            x = p + carried
            alpha = beta = None
            if not fuse:
                state = x
            elif self.config.variant == "hierarchical_film":
                alpha, beta = self.fusion[i].coefficients(q_e)
                state = film_modulate(x, alpha, beta)
            elif self.config.variant == "single_film":
                if i == 0:
                    alpha, beta = self.fusion[0].coefficients(q_e)
                    state = film_modulate(x, alpha, beta)
                else:
                    state = x
            else:
                state = self.fusion[i](q_e, x)
            if trace is not None:
                trace.append({"stage": i + 1, "P": p, "T": carried, "alpha": alpha, "beta": beta, "D": state})
        return state

    def forward(self, projections, q_e: torch.Tensor) -> torch.Tensor:
        """Two-class logits (B, 2, H, W)."""
        return self.head(self.decode(projections, q_e))


def build_variant(config: DecoderConfig) -> Decoder:
    if config.variant not in VARIANTS:
        raise UnknownVariantError(config.variant)
    return Decoder(config)


def parameter_counts(decoder: Decoder, encoder: nn.Module | None = None) -> dict:
    out = {"decoder": count_parameters(decoder), "decoder_trainable": count_parameters(decoder, True)}
    if encoder is not None:
        out["encoder"] = count_parameters(encoder)
        out["encoder_trainable"] = count_parameters(encoder, True)
        out["total"] = out["decoder"] + out["encoder"]
        out["trainable"] = out["decoder_trainable"] + out["encoder_trainable"]
        out["trainable_fraction"] = out["trainable"] / out["total"]
    return out
