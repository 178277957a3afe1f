"""PSNR and SSIM on magnitude images."""

from __future__ import annotations

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 100.0


def magnitude(image):
    if torch.is_tensor(image):
        image = image.detach().cpu().numpy()
    return np.abs(np.asarray(image)).astype(np.float64)


def psnr(recon, truth):
    """``10 log10(range^2 / MSE)`` with range = max magnitude of ``truth``; capped at 100 dB."""
    a, b = magnitude(recon), magnitude(truth)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    data_range = b.max()
    if mse == 0:
        return PSNR_CAP
    if data_range == 0:
        return -PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(data_range**2 / mse)))


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img, kernel):
    windows = sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", windows, kernel)


def ssim_map(recon, truth, size=11, sigma=1.5, k1=0.01, k2=0.03):
    a, b = magnitude(recon), magnitude(truth)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < size:
        raise ValueError(f"images smaller than the {size}x{size} SSIM window")
    # symmetric data range so ssim(a, b) == ssim(b, a)
    L = max(a.max(), b.max())
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    w = gaussian_window(size, sigma)
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a**2
    var_b = _filter_valid(b * b, w) - mu_b**2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    if L == 0:
        return np.ones_like(mu_a)
    return num / den


def ssim(recon, truth, **kw):
    """Mean local SSIM (11x11 gaussian window, sigma 1.5) over valid positions."""
    a, b = magnitude(recon), magnitude(truth)
    if a.shape == b.shape and np.array_equal(a, b):
        if min(a.shape) < kw.get("size", 11):
            raise ValueError("images smaller than the SSIM window")
        return 1.0
    return float(ssim_map(a, b, **kw).mean())


def error_map(recon, truth):
    return np.abs(magnitude(recon) - magnitude(truth))
