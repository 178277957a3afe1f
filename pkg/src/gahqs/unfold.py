"""HQS, accelerated HQS and GA-HQS unfolding networks.

Features are ``B x C x H x W`` real tensors whose consecutive channel pairs are
the real and imaginary planes of ``C / 2`` complex images. The sampling
operator acts pair-wise; ``F_u^T y`` is broadcast to every pair.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import kspace
from .msst import CSE, MSST
from .numerics import assert_finite
from .pgsa import PGSA

VARIANTS = ("hqs", "ahqs", "gahqs", "baseline1", "baseline2", "baseline3")
FUSIONS = ("pgsa", "se", "sum")
DENOISERS = ("msst", "unet", "identity")

# variant -> (fusion, denoiser, accelerated)
_VARIANT_DEFAULTS = {
    "hqs": (None, "msst", False),
    "ahqs": (None, "msst", True),
    "gahqs": ("pgsa", "msst", True),
    "baseline1": ("pgsa", "msst", False),
    "baseline2": ("se", "msst", True),
    "baseline3": ("pgsa", "unet", True),
}


@dataclass(frozen=True)
class UnfoldConfig:
    num_stages: int = 8
    num_splits: int = 4
    channels: int = 32
    variant: str = "gahqs"
    window_size: int = 8
    heads: int = 4
    img_size: int = 64
    fusion: str | None = None  # overrides the variant's fusion block
    denoiser: str | None = None  # overrides the variant's denoiser

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.num_stages < 0:
            raise ValueError("num_stages must be >= 0")
        if self.channels % (2 * self.num_splits):
            raise ValueError(
                f"channels={self.channels} must be divisible by 2 * num_splits = {2 * self.num_splits}"
            )
        if self.fusion is not None and self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.denoiser is not None and self.denoiser not in DENOISERS:
            raise ValueError(f"unknown denoiser {self.denoiser!r}")

    @property
    def replicas(self):
        return self.channels // 2

    @property
    def accelerated(self):
        return _VARIANT_DEFAULTS[self.variant][2]

    @property
    def fused(self):
        return self.variant not in ("hqs", "ahqs")

    @property
    def resolved_fusion(self):
        return self.fusion or _VARIANT_DEFAULTS[self.variant][0]

    @property
    def resolved_denoiser(self):
        return self.denoiser or _VARIANT_DEFAULTS[self.variant][1]

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class StageState:
    x: torch.Tensor
    z: torch.Tensor
    z_hat: torch.Tensor
    stage_index: int = 0


# --------------------------------------------------------------------------
# channel-pair <-> complex


def to_complex(t):
    b, c, h, w = t.shape
    t = t.reshape(b, c // 2, 2, h, w)
    return torch.complex(t[:, :, 0], t[:, :, 1])


def to_real(z):
    b, m, h, w = z.shape
    return torch.stack([z.real, z.imag], dim=2).reshape(b, 2 * m, h, w)


def lift(x0, channels):
    """Stack ``channels / 2`` copies of the (real, imag) planes of ``x0`` into X0 = Z0 = Z^0."""
    if channels % 2:
        raise ValueError(f"channel count must be even, got {channels}")
    if not torch.is_tensor(x0):
        x0 = torch.as_tensor(np.asarray(x0))
    if x0.ndim == 2:
        x0 = x0[None]
    feat = to_real(x0[:, None]).repeat(1, channels // 2, 1, 1)
    return StageState(feat, feat, feat, 0)


def project(state):
    """Average the channel pairs of ``state.z_hat`` into one complex image per batch item.

    Reading out the last node keeps every parameter of the final stage live.
    """
    return to_complex(state.z_hat).mean(dim=1)


def feature_data_consistency(z_hat, y, eta, mask):
    return to_real(kspace.data_consistency(to_complex(z_hat), y[:, None], eta, mask))


def measurement_term(y, mask, replicas):
    """``F_u^T y`` as a ``B x 2m x H x W`` feature map."""
    return to_real(kspace.apply_adjoint(y, mask)[:, None]).repeat(1, replicas, 1, 1)


def normal_term(z_hat, mask):
    return to_real(kspace.apply_normal(to_complex(z_hat), mask))


# --------------------------------------------------------------------------
# building blocks


class Identity(nn.Module):
    def forward(self, x):
        return x


class Fusion(nn.Module):
    """Channel attention over a concatenation of ``parts`` C-channel terms, then 1x1 back to C.

    ``kind='sum'`` skips both and just adds the terms (the plain A-HQS update).
    The attention is initialised to pass its input through at half weight and
    the 1x1 reduction to twice the sum of the parts, plus ``noise``-scaled
    random weights, so an untrained stage starts close to the A-HQS update.
    """

    def __init__(self, channels, parts, kind="pgsa", num_splits=4, noise=0.01):
        super().__init__()
        self.kind = kind
        self.parts = parts
        wide = channels * parts
        if kind == "pgsa":
            self.attention = PGSA(wide, num_splits)
        elif kind == "se":
            self.attention = CSE(wide)
        elif kind == "sum":
            self.attention = None
        else:
            raise ValueError(f"unknown fusion {kind!r}")
        self.reduce = nn.Conv2d(wide, channels, 1) if self.attention is not None else None
        if self.attention is not None:
            self._near_sum_init(channels, noise)

    @torch.no_grad()
    def _near_sum_init(self, channels, noise):
        wide = channels * self.parts
        perm = list(range(wide))
        if self.kind == "pgsa":
            perm = self.attention.permutation_init_(noise)
            for gse in list(self.attention.gse_avg) + list(self.attention.gse_max):
                gse.expand.weight.mul_(noise)
        else:
            self.attention.expand.weight.mul_(noise)
            self.attention.expand.bias.zero_()
        w = self.reduce.weight
        w.mul_(noise)
        for j, src in enumerate(perm):
            w[src % channels, j, 0, 0] += 2.0
        self.reduce.bias.zero_()

    def forward(self, terms):
        if self.attention is None:
            out = terms[0]
            for t in terms[1:]:
                out = out + t
            return out
        return self.reduce(self.attention(torch.cat(terms, dim=1)))


class ConvUNet(nn.Module):
    """Plain two-level convolutional U-net denoiser with a global residual (no attention)."""

    def __init__(self, channels, out_scale=0.1):
        super().__init__()
        c = channels

        def block(cin, cout):
            return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(), nn.Conv2d(cout, cout, 3, padding=1))

        self.enc = block(c, c)
        self.down = nn.Conv2d(c, 2 * c, 4, stride=2, padding=1)
        self.mid = block(2 * c, 2 * c)
        self.up = nn.ConvTranspose2d(2 * c, c, 2, stride=2)
        self.dec = block(2 * c, c)
        self.out = nn.Conv2d(c, c, 1)
        with torch.no_grad():
            self.out.weight.mul_(out_scale)
            self.out.bias.zero_()

    def forward(self, x):
        h, w = x.shape[-2:]
        xp = F.pad(x, (0, w % 2, 0, h % 2), mode="replicate")
        e = self.enc(xp)
        m = self.mid(F.relu(self.down(e)))
        d = self.dec(torch.cat([self.up(m), e], dim=1))
        return self.out(d)[..., :h, :w] + x


def make_denoiser(config: UnfoldConfig):
    kind = config.resolved_denoiser
    if kind == "msst":
        return MSST(config.channels, config.num_splits, config.window_size, config.heads, config.img_size)
    if kind == "unet":
        return ConvUNet(config.channels)
    return Identity()


class Stage(nn.Module):
    """Learnable pieces of one unfolding stage: eta (via sigmoid), beta, fusions, denoiser."""

    def __init__(self, config: UnfoldConfig, index=0):
        super().__init__()
        self.config = config
        self.index = index
        self.eta_raw = nn.Parameter(torch.zeros(()))  # sigmoid(0) = 0.5
        self.beta = nn.Parameter(torch.tensor(0.1)) if config.accelerated else None
        self.fusion_x = None
        self.fusion_z = None
        if config.fused:
            kind = config.resolved_fusion
            self.fusion_x = Fusion(config.channels, 3, kind, config.num_splits)
            if config.accelerated:
                self.fusion_z = Fusion(config.channels, 2, kind, config.num_splits)
        self.denoiser = make_denoiser(config)

    @property
    def eta(self):
        return torch.sigmoid(self.eta_raw)

    def forward(self, state, y, mask):
        if self.config.variant == "hqs":
            return run_hqs_stage(state, self, y, mask)
        if self.config.variant == "ahqs":
            return run_ahqs_stage(state, self, y, mask)
        return run_gahqs_stage(state, self, y, mask)


def _check_state(state, y):
    if state.x.shape[0] != y.shape[0] or tuple(state.x.shape[-2:]) != tuple(y.shape[-2:]):
        raise ValueError(f"state shape {tuple(state.x.shape)} does not match measurement {tuple(y.shape)}")


def run_hqs_stage(state, stage, y, mask):
    _check_state(state, y)
    x = feature_data_consistency(state.z, y, stage.eta, mask)
    z = stage.denoiser(x)
    return StageState(x, z, z, state.stage_index + 1)


def run_ahqs_stage(state, stage, y, mask):
    _check_state(state, y)
    x = feature_data_consistency(state.z_hat, y, stage.eta, mask)
    z = stage.denoiser(x)
    z_hat = (1 + stage.beta) * z - stage.beta * state.z
    return StageState(x, z, z_hat, state.stage_index + 1)


def run_gahqs_stage(state, stage, y, mask):
    _check_state(state, y)
    eta = stage.eta
    replicas = state.x.shape[1] // 2
    terms = [
        state.z_hat,
        eta * measurement_term(y, mask, replicas),
        -eta * normal_term(state.z_hat, mask),
    ]
    x = stage.fusion_x(terms)
    z = stage.denoiser(x)
    if stage.beta is None:
        z_hat = z
    else:
        z_hat = stage.fusion_z([(1 + stage.beta) * z, -stage.beta * state.z])
    return StageState(x, z, z_hat, state.stage_index + 1)


class UnfoldingNet(nn.Module):
    def __init__(self, config: UnfoldConfig):
        super().__init__()
        self.config = config
        self.stages = nn.ModuleList(Stage(config, k) for k in range(config.num_stages))

    def stage_parameter(self, k, name):
        value = getattr(self.stages[k], name, None)
        if not isinstance(value, torch.Tensor):
            raise KeyError(f"parameter {name!r} is absent in variant {self.config.variant!r}")
        return value

    def num_parameters(self):
        return sum(p.numel() for p in self.parameters())

    def states(self, y, mask, skip=()):
        """Run the stage graph, returning the lifted state and every stage output."""
        if len(self.stages) != self.config.num_stages:
            raise ValueError(f"model has {len(self.stages)} stages, config says {self.config.num_stages}")
        if y.ndim == 2:
            y = y[None]
        mask = _mask_tensor(mask, y)
        state = lift(kspace.apply_adjoint(y, mask), self.config.channels)
        out = [state]
        for k, stage in enumerate(self.stages):
            if k in skip:
                state = StageState(state.x, state.z, state.z_hat, state.stage_index + 1)
            else:
                state = stage(state, y, mask)
                for name in ("x", "z", "z_hat"):
                    assert_finite(getattr(state, name), f"stage {k} node {name}")
            out.append(state)
        return out

    def forward(self, y, mask, skip=()):
        image = project(self.states(y, mask, skip)[-1])
        return image[0] if y.ndim == 2 else image


def _mask_tensor(mask, like):
    if isinstance(mask, kspace.UndersamplingMask):
        mask = mask.pattern
    if not torch.is_tensor(mask):
        mask = torch.as_tensor(np.asarray(mask))
    return mask.to(dtype=like.real.dtype, device=like.device)


def make_variant(config: UnfoldConfig) -> UnfoldingNet:
    return UnfoldingNet(config)


def run_model(y, mask, model: UnfoldingNet):
    return model(y, mask)


# --------------------------------------------------------------------------
# classical quadratic problem used to check the acceleration step


def momentum_schedule(k):
    """Standard accelerated-gradient weight ``(k - 1) / (k + 2)`` for iteration ``k >= 1``."""
    return (k - 1) / (k + 2)


def quadratic_hqs(y, mask, anchor, reg, rho=1.0, accelerate=False, x_star=None, tol=1e-6, max_iter=20000):
    """Classical (A-)HQS on ``0.5 ||y - F_u x||^2 + reg / 2 ||x - anchor||^2`` with penalty ``rho``.

    The z-step is the exact prox of the quadratic regulariser (shrinkage toward
    ``anchor``). The iteration converges to the minimiser of the same problem
    with weight ``reg * rho / (reg + rho)``; see :func:`quadratic_fixed_point`.
    Returns ``(iterations_to_tol, x_last)``; ``iterations_to_tol`` is ``None``
    if ``x_star`` is not given or the tolerance is never reached.
    """
    eta = 1.0 / (1.0 + rho)
    z = z_hat = kspace.apply_adjoint(y, mask)
    ref = np.linalg.norm(x_star) if x_star is not None else None
    x = z
    for k in range(1, max_iter + 1):
        x = kspace.data_consistency(z_hat, y, eta, mask)
        z_next = (rho * x + reg * anchor) / (rho + reg)
        if accelerate:
            beta = momentum_schedule(k)
            z_hat = (1 + beta) * z_next - beta * z
        else:
            z_hat = z_next
        z = z_next
        if x_star is not None and np.linalg.norm(x - x_star) <= tol * ref:
            return k, x
    return None, x


def quadratic_fixed_point(y, mask, anchor, reg, rho=1.0):
    """Dense solve for the limit of :func:`quadratic_hqs`."""
    mu = reg * rho / (reg + rho)
    return kspace.dense_data_consistency(anchor, y, mu, mask)
