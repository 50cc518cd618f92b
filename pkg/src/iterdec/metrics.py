"""PSNR, SSIM, and MS-SSIM on grayscale images with unit dynamic range.

Inputs are clamped to [0, 1] before comparison; training losses never see
this clamping.  SSIM uses the standard 11x11 Gaussian window (sigma 1.5)
with C1=(0.01)^2, C2=(0.03)^2, evaluated over the fully-valid interior.
MS-SSIM uses the usual five scale exponents with 2x2 mean-pool
downsampling; images too small for five scales use however many fit, with
the exponents renormalized.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    ms_ssim: float
    bpp: float = None


def _prepare(ref, test):
    ref = np.clip(np.asarray(ref, dtype=np.float64), 0.0, 1.0)
    test = np.clip(np.asarray(test, dtype=np.float64), 0.0, 1.0)
    if ref.shape != test.shape:
        raise ValueError(f"image shapes differ: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref, test):
    """10*log10(1/MSE) in dB; identical images give +inf."""
    ref, test = _prepare(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel():
    radius = SSIM_WINDOW // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * SSIM_SIGMA ** 2))
    return k / k.sum()


def _filter_valid(img, kernel):
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    radius = len(kernel) // 2
    return out[radius:-radius, radius:-radius]


def _ssim_parts(ref, test):
    """Mean luminance and contrast-structure terms of the local SSIM map,
    plus the mean of their product (plain SSIM)."""
    if min(ref.shape) < SSIM_WINDOW:
        raise ValueError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    kernel = _gaussian_kernel()
    mu1 = _filter_valid(ref, kernel)
    mu2 = _filter_valid(test, kernel)
    var1 = _filter_valid(ref * ref, kernel) - mu1 * mu1
    var2 = _filter_valid(test * test, kernel) - mu2 * mu2
    cov = _filter_valid(ref * test, kernel) - mu1 * mu2
    lum = (2.0 * mu1 * mu2 + _C1) / (mu1 * mu1 + mu2 * mu2 + _C1)
    cs = (2.0 * cov + _C2) / (var1 + var2 + _C2)
    return float(np.mean(lum)), float(np.mean(cs)), float(np.mean(lum * cs))


def ssim(ref, test):
    """Mean of the local structural-similarity map, in [-1, 1]."""
    ref, test = _prepare(ref, test)
    _, _, value = _ssim_parts(ref, test)
    return value


def _downsample2(img):
    h, w = img.shape
    img = img[:h - h % 2, :w - w % 2]
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(ref, test):
    """Multi-scale structural similarity in [0, 1]."""
    ref, test = _prepare(ref, test)
    side = min(ref.shape)
    scales = 1
    while scales < len(MS_SSIM_WEIGHTS) and (side >> scales) >= SSIM_WINDOW:
        scales += 1
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights /= weights.sum()

    value = 1.0
    for j in range(scales):
        lum, cs, _ = _ssim_parts(ref, test)
        value *= max(cs, 0.0) ** weights[j]
        if j == scales - 1:
            value *= max(lum, 0.0) ** weights[j]
        else:
            ref, test = _downsample2(ref), _downsample2(test)
    return float(value)


def report(ref, test, bpp=None):
    return MetricReport(psnr=psnr(ref, test), ssim=ssim(ref, test),
                        ms_ssim=ms_ssim(ref, test), bpp=bpp)
