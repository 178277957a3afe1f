"""Pyramid gated-squeeze attention.

Each of ``S`` branches convolves the full input with a ``(2i+1) x (2i+1)``
grouped kernel into ``C/S`` channels. Every branch feature gets an average-pool
and a max-pool squeeze-excitation path; the two concatenated logit vectors are
summed and passed through one sigmoid, and the result rescales the pyramid map.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .numerics import assert_finite


def branch_kernels(num_splits):
    return [2 * i + 1 for i in range(1, num_splits + 1)]


class GroupedConv2d(nn.Conv2d):
    """Grouped convolution evaluated as one dense convolution with a block-diagonal kernel.

    Same parameters and outputs as ``nn.Conv2d(..., groups=g)``; CPU backends
    run the dense form several times faster for the wide pyramid kernels.
    """

    def forward(self, x):
        g = self.groups
        if g == 1:
            return super().forward(x)
        out, cin_g, kh, kw = self.weight.shape
        w = self.weight.reshape(g, out // g, 1, cin_g, kh, kw)
        eye = torch.eye(g, dtype=w.dtype, device=w.device).reshape(g, 1, g, 1, 1, 1)
        dense = (w * eye).reshape(out, g * cin_g, kh, kw)
        return F.conv2d(x, dense, self.bias, self.stride, self.padding, self.dilation)


class GatedSqueeze(nn.Module):
    """Pool -> 1x1 reduce -> GELU -> 1x1 expand, scaled by a learnable gate (init 1).

    GELU rather than ReLU: with a hidden width of one or two units a ReLU can
    start fully inactive, which leaves the gate and both 1x1 layers without gradient.
    """

    def __init__(self, channels, reduction=4, pool="avg"):
        super().__init__()
        if pool not in ("avg", "max"):
            raise ValueError(f"pool must be 'avg' or 'max', got {pool!r}")
        hidden = max(1, channels // reduction)
        self.pool = pool
        self.reduce = nn.Conv2d(channels, hidden, 1)
        self.expand = nn.Conv2d(hidden, channels, 1)
        self.gate = nn.Parameter(torch.ones(()))
        nn.init.zeros_(self.reduce.bias)
        nn.init.zeros_(self.expand.bias)

    def pooled(self, f):
        if self.pool == "avg":
            return f.mean(dim=(-2, -1), keepdim=True)
        return f.amax(dim=(-2, -1), keepdim=True)

    def forward(self, f):
        return self.gate * self.expand(F.gelu(self.reduce(self.pooled(f))))


class PGSA(nn.Module):
    def __init__(self, channels, num_splits=4, groups=4, reduction=4):
        super().__init__()
        if channels % num_splits:
            raise ValueError(f"channels={channels} not divisible by num_splits={num_splits}")
        self.channels = channels
        self.num_splits = num_splits
        self.width = channels // num_splits
        g = math.gcd(groups, math.gcd(channels, self.width))
        self.branches = nn.ModuleList(
            GroupedConv2d(channels, self.width, k, padding=k // 2, groups=g) for k in branch_kernels(num_splits)
        )
        for conv in self.branches:
            nn.init.zeros_(conv.bias)
        self.gse_avg = nn.ModuleList(GatedSqueeze(self.width, reduction, "avg") for _ in range(num_splits))
        self.gse_max = nn.ModuleList(GatedSqueeze(self.width, reduction, "max") for _ in range(num_splits))

    @torch.no_grad()
    def permutation_init_(self, noise=0.1):
        """Make the pyramid start as a channel permutation of its input.

        Output channel ``r`` of group ``q`` in branch ``i`` gets a centre tap of 1
        on input channel ``i * (width / g) + r`` of that group, so the S branches
        jointly cover every input channel once. The fan-in uniform weights are
        kept, scaled by ``noise``. Returns the permutation ``perm`` with
        ``pyramid_features(x)[:, j] ~ x[:, perm[j]]``.
        """
        perm = []
        for i, conv in enumerate(self.branches):
            conv.weight.mul_(noise)
            g = conv.groups
            out_g = self.width // g
            in_g = self.channels // g
            c = conv.kernel_size[0] // 2
            for j in range(self.width):
                q, r = divmod(j, out_g)
                local = i * out_g + r
                conv.weight[j, local, c, c] += 1.0
                perm.append(q * in_g + local)
        return perm

    def branch_features(self, x):
        return [conv(x) for conv in self.branches]

    def pyramid_features(self, x):
        return torch.cat(self.branch_features(x), dim=1)

    def gse_weight(self, f_i, i, pool):
        gse = self.gse_avg[i] if pool == "avg" else self.gse_max[i]
        return gse(f_i)

    def attention_logits(self, feats):
        logits = []
        for i, f_i in enumerate(feats):
            frag = self.gse_weight(f_i, i, "avg") + self.gse_weight(f_i, i, "max")
            logits.append(assert_finite(frag, f"PGSA branch {i}"))
        return torch.cat(logits, dim=1)

    def attention(self, x):
        """Per-channel weights in (0, 1), shape ``B x C x 1 x 1``."""
        return torch.sigmoid(self.attention_logits(self.branch_features(x)))

    def forward(self, x):
        feats = self.branch_features(x)
        w = torch.sigmoid(self.attention_logits(feats))
        return w * torch.cat(feats, dim=1)
