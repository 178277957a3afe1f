"""Single-coil k-space operators and undersampling masks.

Images are ``H x W`` complex arrays (numpy or torch). k-space is centered:
the DC frequency sits at ``(H // 2, W // 2)`` and all transforms use
orthonormal scaling, so ``F_u F_u^T`` is the identity on the sampled support.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

logger = logging.getLogger(__name__)

MASK_KINDS = ("cartesian_random", "equispaced_fraction", "radial")
ACCELERATIONS = (2, 4, 8, 16)
MIN_SIZE = 8


def check_image(x, name="image"):
    """Validate a complex image: 2-D, both sides >= 8, all values finite."""
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {tuple(x.shape)}")
    if min(x.shape) < MIN_SIZE:
        raise ValueError(f"{name} must be at least {MIN_SIZE}x{MIN_SIZE}, got {tuple(x.shape)}")
    finite = torch.isfinite(x).all() if torch.is_tensor(x) else np.isfinite(x).all()
    if not finite:
        raise ValueError(f"{name} contains non-finite values")
    return x


# --------------------------------------------------------------------------
# centered orthonormal FFT, numpy or torch


def fft2c(x):
    if torch.is_tensor(x):
        dims = (-2, -1)
        x = torch.fft.ifftshift(x, dim=dims)
        return torch.fft.fftshift(torch.fft.fft2(x, norm="ortho"), dim=dims)
    x = np.fft.ifftshift(x, axes=(-2, -1))
    return np.fft.fftshift(np.fft.fft2(x, norm="ortho"), axes=(-2, -1))


def ifft2c(k):
    if torch.is_tensor(k):
        dims = (-2, -1)
        k = torch.fft.ifftshift(k, dim=dims)
        return torch.fft.fftshift(torch.fft.ifft2(k, norm="ortho"), dim=dims)
    k = np.fft.ifftshift(k, axes=(-2, -1))
    return np.fft.fftshift(np.fft.ifft2(k, norm="ortho"), axes=(-2, -1))


def _as_mask(mask, like):
    pattern = mask.pattern if isinstance(mask, UndersamplingMask) else mask
    if torch.is_tensor(like):
        if torch.is_tensor(pattern):
            return pattern.to(device=like.device, dtype=like.real.dtype)
        return torch.as_tensor(np.asarray(pattern), dtype=like.real.dtype, device=like.device)
    return np.asarray(pattern, dtype=np.real(like).dtype)


def _check_shape(a, mask, what):
    shape = tuple(mask.shape)
    if tuple(a.shape[-2:]) != shape:
        raise ValueError(f"{what} spatial shape {tuple(a.shape[-2:])} does not match mask {shape}")


def apply_forward(x, mask):
    """``M * F(x)`` over the trailing two axes."""
    m = _as_mask(mask, x)
    _check_shape(x, m, "image")
    return m * fft2c(x)


def apply_adjoint(y, mask):
    """``F^-1(M * y)`` over the trailing two axes (zero-filled reconstruction)."""
    m = _as_mask(mask, y)
    _check_shape(y, m, "measurement")
    return ifft2c(m * y)


def apply_normal(x, mask):
    """``F_u^T F_u x``."""
    return apply_adjoint(apply_forward(x, mask), mask)


def data_consistency(z_hat, y, eta, mask):
    """Closed-form x-update ``z_hat + eta * F_u^T (y - F_u z_hat)``.

    Per sampled frequency the output spectrum is ``Z + eta * (y - Z)``; unsampled
    frequencies are left untouched. This is the exact minimiser of
    ``0.5 * ||y - F_u x||^2 + mu / 2 * ||x - z_hat||^2`` with ``eta = 1 / (1 + mu)``.
    Works batched over leading axes; ``y`` broadcasts against ``z_hat``.
    """
    if not torch.is_tensor(eta) and not 0.0 <= float(eta) <= 1.0:
        logger.warning("data_consistency called with eta=%g outside [0, 1]", float(eta))
    return z_hat + eta * apply_adjoint(y - apply_forward(z_hat, mask), mask)


def dense_data_consistency(z_hat, y, mu, mask):
    """Reference solve of ``(F_u^H F_u + mu I) x = F_u^H y + mu z_hat`` with a dense matrix.

    Builds the full ``HW x HW`` operator column by column; only meant for small images.
    """
    z_hat = np.asarray(z_hat, dtype=np.complex128)
    h, w = z_hat.shape
    n = h * w
    eye = np.eye(n, dtype=np.complex128).reshape(n, h, w)
    cols = np.stack([apply_normal(e, mask).ravel() for e in eye], axis=1)
    lhs = cols + mu * np.eye(n)
    rhs = apply_adjoint(np.asarray(y, dtype=np.complex128), mask).ravel() + mu * z_hat.ravel()
    return np.linalg.solve(lhs, rhs).reshape(h, w)


# --------------------------------------------------------------------------
# masks


@dataclass(frozen=True)
class UndersamplingMask:
    pattern: np.ndarray = field(repr=False)
    kind: str
    acceleration: int
    seed: int
    acs_lines: int

    @property
    def shape(self):
        return self.pattern.shape

    @property
    def fraction(self):
        return float(self.pattern.mean())

    def metadata(self):
        h, w = self.pattern.shape
        return {
            "kind": self.kind,
            "acceleration": self.acceleration,
            "seed": self.seed,
            "acs_lines": self.acs_lines,
            "height": h,
            "width": w,
            "fraction": self.fraction,
        }


@dataclass(frozen=True)
class ForwardOperator:
    """Single-coil sampling operator ``F_u = M F`` with orthonormal scaling."""

    mask: UndersamplingMask

    def forward(self, x):
        return apply_forward(x, self.mask)

    def adjoint(self, y):
        return apply_adjoint(y, self.mask)

    def normal(self, x):
        return apply_normal(x, self.mask)

    def data_consistency(self, z_hat, y, eta):
        return data_consistency(z_hat, y, eta, self.mask)


def forward(op: ForwardOperator, x):
    return op.forward(x)


def adjoint(op: ForwardOperator, y):
    return op.adjoint(y)


def default_acs_lines(kind, height, width):
    """4% of phase-encode lines for cartesian kinds, none for radial."""
    if kind == "radial":
        return 0
    return int(round(0.04 * width))


def _acs_columns(width, acs_lines):
    start = width // 2 - acs_lines // 2
    return np.arange(start, start + acs_lines)


def _equispaced_columns(width, acceleration, acs_lines):
    if acs_lines == 0:
        return np.arange(0, width, acceleration)
    acs = _acs_columns(width, acs_lines)
    budget = int(round(width / acceleration))
    # widen the spacing until equispaced lines plus the ACS block fit the budget
    for spacing in np.linspace(acceleration, width, 64 * width):
        cols = np.union1d(np.round(np.arange(0, width - 0.5, spacing)).astype(int), acs)
        if cols.size <= budget:
            return cols
    return acs


def _random_columns(width, acceleration, acs_lines, rng):
    budget = int(round(width / acceleration))
    acs = _acs_columns(width, acs_lines)
    candidates = np.setdiff1d(np.arange(width), acs)
    sigma = width / 6.0
    weights = np.exp(-0.5 * ((candidates - width // 2) / sigma) ** 2)
    picked = rng.choice(candidates, size=max(budget - acs_lines, 0), replace=False, p=weights / weights.sum())
    return np.union1d(acs, picked)


def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def radial_line(theta, height, width):
    """Pixels (rows, cols) of a straight line through the k-space center at angle ``theta``.

    Steps one pixel at a time along the dominant axis and rounds the minor
    coordinate half away from zero, so the line is point-symmetric about the center.
    """
    cy, cx = height // 2, width // 2
    c, s = np.cos(theta), np.sin(theta)
    reach = max(height, width)
    t = np.arange(-reach, reach + 1)
    if abs(c) >= abs(s):
        cols = cx + t
        rows = cy + _round_half_away(t * (s / c))
    else:
        rows = cy + t
        cols = cx + _round_half_away(t * (c / s))
    rows = rows.astype(int)
    cols = cols.astype(int)
    keep = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    return rows[keep], cols[keep]


def radial_pattern(num_lines, height, width):
    pattern = np.zeros((height, width), dtype=bool)
    for theta in np.arange(num_lines) * (np.pi / num_lines):
        rows, cols = radial_line(theta, height, width)
        pattern[rows, cols] = True
    return pattern


def _radial(height, width, acceleration):
    target = 1.0 / acceleration
    previous = None
    for n in range(1, 4 * max(height, width)):
        pattern = radial_pattern(n, height, width)
        if pattern.mean() >= target:
            # small images overshoot the band with one extra spoke; fall back to n - 1
            if pattern.mean() > 1.1 * target and previous is not None and previous.mean() >= 0.9 * target:
                return previous
            return pattern
        previous = pattern
    raise ValueError("radial mask cannot reach the requested sampling fraction")


def make_mask(kind, height, width, acceleration, seed=0, acs_lines=None) -> UndersamplingMask:
    """Generate a deterministic k-space undersampling mask.

    Cartesian kinds select phase-encode columns (the pattern is constant down
    each column); ``radial`` draws evenly spaced spokes through the center.
    ``acs_lines=None`` picks :func:`default_acs_lines`.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unsupported mask kind {kind!r}; expected one of {MASK_KINDS}")
    if acceleration not in ACCELERATIONS:
        raise ValueError(f"acceleration must be one of {ACCELERATIONS}, got {acceleration}")
    if min(height, width) < MIN_SIZE:
        raise ValueError(f"mask must be at least {MIN_SIZE}x{MIN_SIZE}")
    if acs_lines is None:
        acs_lines = default_acs_lines(kind, height, width)
    if acs_lines < 0 or acs_lines >= min(height, width) / 4:
        raise ValueError(f"acs_lines={acs_lines} must lie in [0, min(H, W) / 4)")
    if kind != "radial" and acs_lines > 1.1 * width / acceleration:
        raise ValueError(
            f"{acs_lines} ACS lines exceed the sampling budget of a {acceleration}x mask"
        )

    if kind == "radial":
        pattern = _radial(height, width, acceleration)
        if acs_lines:
            half = acs_lines // 2
            cy, cx = height // 2, width // 2
            pattern[cy - half:cy - half + acs_lines, cx - half:cx - half + acs_lines] = True
    else:
        if kind == "equispaced_fraction":
            cols = _equispaced_columns(width, acceleration, acs_lines)
        else:
            cols = _random_columns(width, acceleration, acs_lines, np.random.default_rng(seed))
        pattern = np.zeros((height, width), dtype=bool)
        pattern[:, cols] = True

    frac = pattern.mean()
    if not 0.9 / acceleration <= frac <= 1.1 / acceleration:
        raise ValueError(
            f"{kind} mask reaches sampling fraction {frac:.4f}, outside the "
            f"[{0.9 / acceleration:.4f}, {1.1 / acceleration:.4f}] band for R={acceleration}"
        )
    return UndersamplingMask(pattern, kind, int(acceleration), int(seed), int(acs_lines))
