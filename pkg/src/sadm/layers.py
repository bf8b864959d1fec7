"""Shared neural building blocks for the denoiser and autoencoder.

The denoiser blocks keep all spatial mixing inside attention: normalization
statistics are computed per position (channel groups only), convolutions are
the only other spatial operator, and residual branches start at zero so a
fresh model is the zero predictor.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import masked_attention, partition_allowed


class PositionwiseGroupNorm(nn.Module):
    """Channel-group normalization with statistics per spatial position.

    Unlike standard GroupNorm, no information crosses pixels here; this keeps
    foreground activations exactly independent of background values when the
    surrounding convolutions are 1x1.
    """

    def __init__(self, channels: int, groups: int = 8):
        super().__init__()
        if channels % groups:
            raise ValueError(f"channels {channels} not divisible by groups {groups}")
        self.groups = groups
        self.group_size = channels // groups
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        v = x.view(b, self.groups, self.group_size, h * w).transpose(2, 3)
        v = F.layer_norm(v, (self.group_size,))
        v = v.transpose(2, 3).reshape(b, c, h, w)
        return v * self.weight[None, :, None, None] + self.bias[None, :, None, None]


def timestep_embedding(t: torch.Tensor, dim: int, dtype: torch.dtype,
                       max_period: float = 10_000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.device)
    args = t.double()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1).to(dtype)


class ResBlock(nn.Module):
    """Norm -> SiLU -> conv twice, optional timestep shift, zero-initialized exit."""

    def __init__(self, cin: int, cout: int, temb_dim: int | None = None,
                 kernel_size: int = 3, norm_cls=PositionwiseGroupNorm):
        super().__init__()
        pad = kernel_size // 2
        self.norm1 = norm_cls(cin)
        self.conv1 = nn.Conv2d(cin, cout, kernel_size, padding=pad)
        self.emb = nn.Linear(temb_dim, cout) if temb_dim else None
        self.norm2 = norm_cls(cout)
        self.conv2 = nn.Conv2d(cout, cout, kernel_size, padding=pad)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x: torch.Tensor, temb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        if self.emb is not None:
            h = h + self.emb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


def _group_tokens(tokens: torch.Tensor, group: int) -> torch.Tensor:
    b, n, c = tokens.shape
    return tokens.view(b // group, group * n, c)


class SelfAttentionBlock(nn.Module):
    """Residual self-attention over pixel tokens with fg/bg partition routing.

    `group` concatenates that many adjacent batch items into one token set so
    attention can span the halves of a width-concatenated latent; `use_saa`
    switches between partitioned and plain attention.
    """

    def __init__(self, channels: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.norm = PositionwiseGroupNorm(channels)
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels)
        self.v = nn.Linear(channels, channels)
        self.out = nn.Linear(channels, channels)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, token_mask: torch.Tensor,
                group: int = 1, use_saa: bool = True) -> torch.Tensor:
        b, c, h, w = x.shape
        if b % group:
            raise ValueError(f"batch {b} not divisible by attention group {group}")
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        q, k, v = self.q(tokens), self.k(tokens), self.v(tokens)
        q, k, v = (_group_tokens(t, group) for t in (q, k, v))
        allowed = None
        if use_saa:
            gm = token_mask.reshape(b // group, group * h * w) != 0
            allowed = gm[:, :, None] == gm[:, None, :]
        att = masked_attention(q, k, v, self.n_heads, allowed)
        att = att.reshape(b, h * w, c)
        return x + self.out(att).transpose(1, 2).view(b, c, h, w)


class CrossAttentionBlock(nn.Module):
    """Residual cross-attention routing fg queries to the prompt token and bg
    queries to the null token; with `use_saa` off every query reads the
    prompt token, matching a model without partition routing."""

    def __init__(self, channels: int, n_heads: int, emb_dim: int):
        super().__init__()
        self.n_heads = n_heads
        self.norm = PositionwiseGroupNorm(channels)
        self.q = nn.Linear(channels, channels)
        self.kv = nn.Linear(emb_dim, channels)
        self.out = nn.Linear(channels, channels)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, token_mask: torch.Tensor,
                prompt_emb: torch.Tensor, null_emb: torch.Tensor,
                use_saa: bool = True) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        q = self.q(tokens)
        keys = torch.stack([self.kv(prompt_emb), self.kv(null_emb)], dim=1)
        m = token_mask.reshape(b, h * w) != 0
        if use_saa:
            allowed = torch.stack([m, ~m], dim=2)
        else:
            allowed = torch.stack([torch.ones_like(m), torch.zeros_like(m)], dim=2)
        att = masked_attention(q, keys, keys, self.n_heads, allowed)
        return x + self.out(att).transpose(1, 2).view(b, c, h, w)


def downsample_mask_batch(mask: torch.Tensor, factor: int) -> torch.Tensor:
    """Block-vote downsampling of a (B, H, W) binary tensor, mean >= 0.5 -> 1."""
    if factor == 1:
        return mask
    b, h, w = mask.shape
    blocks = mask.reshape(b, h // factor, factor, w // factor, factor).float()
    return (blocks.mean(dim=(2, 4)) >= 0.5).to(mask.dtype)
