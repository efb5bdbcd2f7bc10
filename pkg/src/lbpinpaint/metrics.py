"""Evaluation metrics over 8-bit images: l1 percentage, PSNR, SSIM.

Metrics run over the full image by default; l1 and PSNR also accept a
boolean region (e.g. the hole) for restricted evaluation. RGB SSIM is the
mean of the per-channel values.
"""

import math
from dataclasses import dataclass

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PEAK = 255.0


@dataclass(frozen=True)
class MetricReport:
    l1_percent: float
    psnr_db: float  # math.inf when the images are identical
    ssim: float

    @staticmethod
    def csv_header():
        return "l1_percent,psnr_db,ssim"

    def csv_row(self):
        psnr = "inf" if math.isinf(self.psnr_db) else f"{self.psnr_db:.6f}"
        return f"{self.l1_percent:.6f},{psnr},{self.ssim:.6f}"

    def table(self):
        psnr = "inf" if math.isinf(self.psnr_db) else f"{self.psnr_db:8.4f} dB"
        return (
            f"l1    {self.l1_percent:8.4f} %\n"
            f"psnr  {psnr}\n"
            f"ssim  {self.ssim:8.6f}"
        )


def _as_float_pair(a, b):
    fa = np.asarray(a, dtype=np.float64)
    fb = np.asarray(b, dtype=np.float64)
    if fa.shape != fb.shape:
        raise ValueError(f"image shapes differ: {fa.shape} vs {fb.shape}")
    return fa, fb


def _region_values(diff, region):
    if region is None:
        return diff
    region = np.asarray(region, dtype=bool)
    if region.shape != diff.shape[:2]:
        raise ValueError(f"region shape {region.shape} vs image plane {diff.shape[:2]}")
    return diff[region]


def l1_percent(a, b, region=None):
    """100 * mean absolute difference / 255."""
    fa, fb = _as_float_pair(a, b)
    vals = _region_values(np.abs(fa - fb), region)
    return 100.0 * float(vals.mean()) / PEAK


def psnr(a, b, region=None):
    """10*log10(255^2 / MSE) in dB; infinite for identical inputs."""
    fa, fb = _as_float_pair(a, b)
    vals = _region_values((fa - fb) ** 2, region)
    mse = float(vals.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def _gaussian_kernel(size, sigma):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img, kernel):
    windows = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", windows, kernel)


def _ssim_channel(a, b):
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def ssim(a, b):
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5, L=255)."""
    fa, fb = _as_float_pair(a, b)
    if fa.shape[0] < SSIM_WINDOW or fa.shape[1] < SSIM_WINDOW:
        raise ValueError(
            f"image {fa.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    if fa.ndim == 2:
        return _ssim_channel(fa, fb)
    if fa.ndim == 3:
        return float(np.mean([_ssim_channel(fa[:, :, c], fb[:, :, c]) for c in range(fa.shape[2])]))
    raise ValueError(f"expected a 2-D or 3-D image, got shape {fa.shape}")


def evaluate_pair(a, b):
    return MetricReport(l1_percent=l1_percent(a, b), psnr_db=psnr(a, b), ssim=ssim(a, b))
