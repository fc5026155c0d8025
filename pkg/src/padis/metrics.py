"""PSNR and SSIM for images in ``[0, 1]``."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_CAP = 99.0


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, data_range: float = 1.0) -> float:
    """Peak SNR in dB over all pixels and channels jointly; ``inf`` for identical inputs."""
    x, ref = _pair(x, ref)
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(data_range**2 / mse)


def psnr_for_table(value: float) -> float:
    """Cap infinite/huge PSNR for tabular output."""
    return min(float(value), PSNR_CAP)


def _ssim_2d(x, y, L, sigma, truncate):
    filt = lambda a: gaussian_filter(a, sigma, truncate=truncate, mode="reflect")  # noqa: E731
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    s = num / den
    r = int(truncate * sigma + 0.5)
    return float(s[r:-r, r:-r].mean())


def ssim(x, ref, data_range: float = 1.0, win: int = 11, sigma: float = 1.5) -> float:
    """Gaussian-windowed SSIM; multi-channel ``(C, H, W)`` inputs average the per-channel scores.

    Statistics use population (biased) moments; the mean is taken over pixels whose
    window lies fully inside the image.
    """
    x, ref = _pair(x, ref)
    if x.ndim == 2:
        x, ref = x[None], ref[None]
    if x.ndim != 3:
        raise ValueError("expected (H, W) or (C, H, W) images")
    if min(x.shape[-2:]) < win:
        raise ValueError(f"image {x.shape[-2:]} smaller than the {win}x{win} window")
    truncate = ((win - 1) / 2) / sigma
    return float(np.mean([_ssim_2d(a, b, data_range, sigma, truncate) for a, b in zip(x, ref)]))
