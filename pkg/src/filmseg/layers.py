"""Transformer building blocks shared by the encoders and the decoder."""

from __future__ import annotations

import hashlib

import torch
import torch.nn.functional as F
from torch import nn


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block with a GELU MLP.

    ``attn_dim`` and ``mlp_dim`` default to the usual ``dim`` and ``4 * dim``; the
    decoder uses narrower values to stay light.
    """

    def __init__(self, dim: int, n_heads: int, attn_dim: int | None = None, mlp_dim: int | None = None):
        super().__init__()
        attn_dim = attn_dim or dim
        mlp_dim = mlp_dim or 4 * dim
        if attn_dim % n_heads:
            raise ValueError(f"attention width {attn_dim} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.attn_dim = attn_dim
        self.ln1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * attn_dim)
        self.proj = nn.Linear(attn_dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mlp_dim)
        self.fc2 = nn.Linear(mlp_dim, dim)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        b, n, _ = x.shape
        h, a = self.n_heads, self.attn_dim
        q, k, v = self.qkv(self.ln1(x)).reshape(b, n, 3, h, a // h).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) * (a // h) ** -0.5
        if pad_mask is not None:
            att = att.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        out = (att.softmax(dim=-1) @ v).transpose(1, 2).reshape(b, n, a)
        x = x + self.proj(out)
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def parameter_fingerprint(module: nn.Module) -> str:
    """sha256 over every parameter and buffer, in name order."""
    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        t = state[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(str(t.dtype).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()
