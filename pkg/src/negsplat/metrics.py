"""Image-quality metrics: PSNR and windowed SSIM with an analytic gradient.

SSIM uses an 11x11 Gaussian window (sigma 1.5), constants C1 = (0.01 L)^2 and
C2 = (0.03 L)^2, window-weighted (population) moments, per-channel maps
averaged over all valid window positions.  The gradient is with respect to
the first image and feeds the fitting loss.
"""

from __future__ import annotations

import math
import threading
from functools import lru_cache

import numpy as np

__all__ = ["psnr", "ssim", "ssim_and_grad", "quantize"]

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
_HALF = WINDOW_SIZE // 2


def _gaussian_window() -> np.ndarray:
    x = np.arange(WINDOW_SIZE, dtype=np.float64) - _HALF
    w = np.exp(-(x**2) / (2.0 * WINDOW_SIGMA**2))
    return w / w.sum()

_WINDOW = _gaussian_window()


@lru_cache(maxsize=32)
def _band_matrix(n: int) -> np.ndarray:
    """(n, n-10) matrix whose columns are shifted copies of the window.

    Right-multiplying an axis by it performs the valid-mode window
    correlation along that axis; the transpose is the exact adjoint.
    """
    n_valid = n - 2 * _HALF
    band = np.zeros((n, n_valid))
    for j in range(n_valid):
        band[j : j + WINDOW_SIZE, j] = _WINDOW
    return band


def quantize(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and snap to the 8-bit grid (round half up)."""
    levels = np.floor(255.0 * np.clip(image, 0.0, 1.0) + 0.5)
    return levels / 255.0


def _as_image(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ValueError(f"expected an HxW or HxWxC image, got shape {a.shape}")
    return a


def psnr(a, b, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    a = _as_image(a)
    b = _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


# The loss evaluates SSIM every iteration; reusing fixed workspaces keeps
# the large intermediates off the allocator's mmap path.  One workspace per
# thread preserves thread-safety of the public functions.
_TLS = threading.local()


def _workspace(height: int, width: int, nch: int) -> dict:
    key = (height, width, nch)
    cache = getattr(_TLS, "cache", None)
    if cache is None:
        cache = _TLS.cache = {}
    ws = cache.get(key)
    if ws is None:
        hv = height - 2 * _HALF
        wv = width - 2 * _HALF
        ws = cache[key] = {
            "stacked": np.empty((5 * nch, height, width)),
            "filt_w": np.empty((5 * nch, height, wv)),
            "filt": np.empty((5 * nch, hv, wv)),
            "back": np.empty((3 * nch, hv, wv)),
            "scat_h": np.empty((3 * nch, height, wv)),
            "scat": np.empty((3 * nch, height, width)),
        }
    return ws


def _check_pair(a, b):
    a = _as_image(a)
    b = _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < WINDOW_SIZE:
        raise ValueError(
            f"images must be at least {WINDOW_SIZE}x{WINDOW_SIZE}, got "
            f"{a.shape[0]}x{a.shape[1]}"
        )
    return a, b


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean structural similarity over channels and valid window positions."""
    return ssim_and_grad(a, b, data_range)[0]


def ssim_and_grad(a, b, data_range: float = 1.0):
    """SSIM value plus its exact gradient with respect to ``a``."""
    x, y = _check_pair(a, b)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    height, width, nch = x.shape
    ws = _workspace(height, width, nch)
    b_h = _band_matrix(height)
    b_w = _band_matrix(width)

    # one filtering pass over all five moment images, in a channel-first
    # (5C, H, W) workspace so every slice stays contiguous
    stacked = ws["stacked"]
    xs = stacked[0 * nch : 1 * nch]
    ys = stacked[1 * nch : 2 * nch]
    np.copyto(xs, x.transpose(2, 0, 1))
    np.copyto(ys, y.transpose(2, 0, 1))
    np.multiply(xs, xs, out=stacked[2 * nch : 3 * nch])
    np.multiply(xs, ys, out=stacked[3 * nch : 4 * nch])
    np.multiply(ys, ys, out=stacked[4 * nch : 5 * nch])
    np.matmul(stacked, b_w, out=ws["filt_w"])
    f = np.matmul(b_h.T, ws["filt_w"], out=ws["filt"])

    mu_x = f[0 * nch : 1 * nch]
    mu_y = f[1 * nch : 2 * nch]
    e_xx = f[2 * nch : 3 * nch]
    e_xy = f[3 * nch : 4 * nch]
    e_yy = f[4 * nch : 5 * nch]
    mu_xy = mu_x * mu_y
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    a1 = 2.0 * mu_xy + c1
    a2 = 2.0 * (e_xy - mu_xy) + c2
    b1 = mu_xx + mu_yy + c1
    b2 = (e_xx - mu_xx) + (e_yy - mu_yy) + c2
    denom = b1 * b2
    s_map = a1 * a2 / denom
    value = float(np.mean(s_map))

    # dS w.r.t. the window moments mu_x, E[x^2], E[xy], scattered back in
    # one adjoint pass (the band matrices are their own exact adjoints)
    back = ws["back"]
    np.copyto(
        back[0 * nch : 1 * nch],
        (2.0 * mu_y) * (a2 - a1) / denom
        - (2.0 * mu_x) * s_map * (1.0 / b1 - 1.0 / b2),
    )
    np.divide(-s_map, b2, out=back[1 * nch : 2 * nch])
    np.divide(2.0 * a1, denom, out=back[2 * nch : 3 * nch])
    np.matmul(b_h, back, out=ws["scat_h"])
    sc = np.matmul(ws["scat_h"], b_w.T, out=ws["scat"])

    grad_chw = (
        sc[0 * nch : 1 * nch]
        + (2.0 * xs) * sc[1 * nch : 2 * nch]
        + ys * sc[2 * nch : 3 * nch]
    ) / s_map.size
    grad = np.ascontiguousarray(grad_chw.transpose(1, 2, 0))
    if np.asarray(a).ndim == 2:
        grad = grad[..., 0]
    return value, grad
