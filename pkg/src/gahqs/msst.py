"""Multi-scale split transformer denoiser.

A split depth-wise convolution cascade (SDC) widens the receptive field, then a
three-level U-shaped stack of half-shuffle attention blocks (HSAB) refines the
features. Decoder levels recalibrate channels with squeeze-excitation (CSE).
A global residual makes the module start out close to the identity.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .numerics import assert_finite


class SplitDepthwiseCascade(nn.Module):
    """``B_1 = S_1``, ``B_2 = d_2(S_2)``, ``B_i = d_i(S_i + B_{i-1})`` for ``i > 2``."""

    def __init__(self, channels, num_splits):
        super().__init__()
        if channels % num_splits:
            raise ValueError(f"channels={channels} not divisible by num_splits={num_splits}")
        self.num_splits = num_splits
        width = channels // num_splits
        self.convs = nn.ModuleList(
            nn.Conv2d(width, width, 3, padding=1, groups=width) for _ in range(num_splits - 1)
        )

    def forward(self, x):
        subsets = torch.chunk(x, self.num_splits, dim=1)
        out = [subsets[0]]
        for i in range(1, self.num_splits):
            inp = subsets[i] if i == 1 else subsets[i] + out[-1]
            out.append(self.convs[i - 1](inp))
        return torch.cat(out, dim=1)


def window_partition(x, ws):
    return rearrange(x, "b (h p) (w q) c -> b (h w) (p q) c", p=ws, q=ws)


def window_merge(x, ws, height, width):
    return rearrange(x, "b (h w) (p q) c -> b (h p) (w q) c", h=height // ws, w=width // ws, p=ws)


def shuffle(x, s):
    """Stride-``s`` interleave on ``B x H x W x C``: row ``a*s + b`` moves to ``b*(H/s) + a``.

    Windows of the shuffled map then gather pixels spaced ``H/s`` apart.
    """
    return rearrange(x, "b (a p) (c q) d -> b (p a) (q c) d", p=s, q=s)


def unshuffle(x, s):
    return rearrange(x, "b (p a) (q c) d -> b (a p) (c q) d", p=s, q=s)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside non-overlapping ``ws x ws`` windows (no output projection)."""

    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim={dim} not divisible by heads={heads}")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)

    def attention_weights(self, x, ws):
        q, k, _ = self._qkv(x, ws)
        return torch.softmax(q @ k.transpose(-2, -1), dim=-1)

    def _qkv(self, x, ws):
        tokens = window_partition(x, ws)
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)
        q, k, v = (rearrange(t, "b n t (h d) -> b n h t d", h=self.heads) for t in (q, k, v))
        return q * self.scale, k, v

    def forward(self, x, ws):
        _, height, width, _ = x.shape
        q, k, v = self._qkv(x, ws)
        attn = torch.softmax(q @ k.transpose(-2, -1), dim=-1)
        out = rearrange(attn @ v, "b n h t d -> b n t (h d)")
        return window_merge(out, ws, height, width)


class HalfShuffleAttention(nn.Module):
    def __init__(self, dim, heads, window_size):
        super().__init__()
        if dim % 2:
            raise ValueError("HSAB needs an even channel count")
        half = dim // 2
        half_heads = math.gcd(max(1, heads // 2), half)
        self.window_size = window_size
        self.local = WindowAttention(half, half_heads)
        self.shuffled = WindowAttention(half, half_heads)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        ws = self.window_size
        a, b = x.chunk(2, dim=-1)
        a = self.local(a, ws)
        b = unshuffle(self.shuffled(shuffle(b, ws), ws), ws)
        return self.proj(torch.cat([a, b], dim=-1))


class HSAB(nn.Module):
    """Pre-norm half-shuffle attention and feed-forward, each wrapped in a residual."""

    def __init__(self, dim, heads=4, window_size=8, mult=2):
        super().__init__()
        self.window_size = window_size
        self.norm1 = nn.LayerNorm(dim)
        self.attn = HalfShuffleAttention(dim, heads, window_size)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, dim * mult), nn.GELU(), nn.Linear(dim * mult, dim))

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % self.window_size or w % self.window_size:
            raise ValueError(f"HSAB input {h}x{w} not divisible by window {self.window_size}")
        x = x.permute(0, 2, 3, 1)
        x = x + self.attn(self.norm1(x))
        x = x + self.ff(self.norm2(x))
        return x.permute(0, 3, 1, 2)


class CSE(nn.Module):
    """Channel squeeze-excitation: global mean -> reduce -> GELU -> expand -> sigmoid -> rescale.

    GELU rather than ReLU: with few hidden units a ReLU bottleneck can start
    fully inactive, leaving the block without gradient.
    """

    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.reduce = nn.Conv2d(channels, hidden, 1)
        self.expand = nn.Conv2d(hidden, channels, 1)

    def weights(self, x):
        s = x.mean(dim=(-2, -1), keepdim=True)
        return torch.sigmoid(self.expand(F.gelu(self.reduce(s))))

    def forward(self, x):
        return self.weights(x) * x


class _DecoderLevel(nn.Module):
    def __init__(self, dim, heads, window_size, upsample):
        super().__init__()
        self.up = nn.ConvTranspose2d(2 * dim, dim, 2, stride=2) if upsample else None
        self.fuse = nn.Conv2d(2 * dim, dim, 1)
        self.block = HSAB(dim, heads, window_size)
        self.cse = CSE(dim)

    def forward(self, x, skip):
        if self.up is not None:
            x = self.up(x)
        return self.cse(self.block(self.fuse(torch.cat([x, skip], dim=1))))


class MSST(nn.Module):
    """SDC -> positional encoding -> LayerNorm -> U-shape (widths C, 2C, 4C) -> 1x1 conv, plus input."""

    def __init__(self, channels, num_splits=4, window_size=8, heads=4, img_size=64, out_scale=0.1):
        super().__init__()
        self.channels = channels
        self.window_size = window_size
        self.sdc = SplitDepthwiseCascade(channels, num_splits)
        self.pos = nn.Parameter(torch.zeros(1, channels, img_size, img_size))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.norm = nn.LayerNorm(channels)
        dims = [channels, 2 * channels, 4 * channels]
        self.encoders = nn.ModuleList(HSAB(d, heads, window_size) for d in dims)
        self.downs = nn.ModuleList(nn.Conv2d(d, 2 * d, 4, stride=2, padding=1) for d in dims[:2])
        self.bottleneck = HSAB(dims[2], heads, window_size)
        self.decoders = nn.ModuleList(
            _DecoderLevel(d, heads, window_size, upsample=(i < 2)) for i, d in enumerate(dims)
        )
        self.out = nn.Conv2d(channels, channels, 1)
        with torch.no_grad():
            self.out.weight.mul_(out_scale)
            self.out.bias.zero_()

    def _pad(self, x):
        mult = 4 * self.window_size
        h, w = x.shape[-2:]
        ph, pw = (-h) % mult, (-w) % mult
        if ph == 0 and pw == 0:
            return x
        mode = "reflect" if ph < h and pw < w else "replicate"
        return F.pad(x, (0, pw, 0, ph), mode=mode)

    def positional(self, height, width):
        if self.pos.shape[-2:] == (height, width):
            return self.pos
        return F.interpolate(self.pos, size=(height, width), mode="bilinear", align_corners=False)

    def forward(self, x):
        h, w = x.shape[-2:]
        xp = self._pad(x)
        b = self.sdc(xp) + self.positional(*xp.shape[-2:])
        b = self.norm(b.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)

        skips = []
        for level, enc in enumerate(self.encoders):
            b = assert_finite(enc(b), f"MSST encoder level {level}")
            skips.append(b)
            if level < len(self.downs):
                b = self.downs[level](b)
        b = assert_finite(self.bottleneck(b), "MSST bottleneck")
        for level in reversed(range(len(self.decoders))):
            b = assert_finite(self.decoders[level](b, skips[level]), f"MSST decoder level {level}")
        return self.out(b)[..., :h, :w] + x
