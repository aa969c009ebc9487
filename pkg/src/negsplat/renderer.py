"""Tile-based forward rasterization of signed splats and its exact backward.

Per pixel, splats are composited front-to-back in ascending (depth,
insertion-index) order:

    c = sum_i  u_i * a_i * prod_{j<i} (1 - a_j)  +  background * T_final

where u_i is the signed color and a_i = logistic(opacity_logit) *
exp(-q_i/2) with q_i the squared Mahalanobis distance of the pixel center.
Negative splats contribute negative color but attenuate transmittance like
positive ones.  Responses are cut off beyond Mahalanobis distance 3, and a
pixel stops compositing once its transmittance drops below 1e-4.

The hot loops live in a compiled extension (``_kernels_cy``) with a
pure-NumPy fallback (``_kernels_np``); the backend is chosen at import and
can be forced per call or via the ``NEGSPLAT_BACKEND`` environment variable.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import Splat2D, SplatModel

try:
    from . import _kernels_cy
except ImportError:  # extension not built; NumPy fallback below
    _kernels_cy = None
from . import _kernels_np

__all__ = [
    "RenderFrame",
    "ParamGradients",
    "render",
    "backward",
    "pixel_response",
    "available_backends",
    "default_backend",
]

# Responses beyond this squared Mahalanobis distance are exactly 0.
CUTOFF_Q = 9.0
# Per-pixel compositing stops once transmittance falls below this.
T_STOP = 1e-4
# Opacity is kept strictly below 1 so transmittance never hits 0.
ALPHA_CEIL = 1.0 - 1e-12


def available_backends() -> tuple[str, ...]:
    return ("cython", "numpy") if _kernels_cy is not None else ("numpy",)


def default_backend() -> str:
    env = os.environ.get("NEGSPLAT_BACKEND")
    if env:
        return env
    return "cython" if _kernels_cy is not None else "numpy"


def _get_kernels(name: str | None):
    if name is None:
        name = default_backend()
    if name == "cython":
        if _kernels_cy is None:
            raise RuntimeError(
                "compiled kernels are not built; reinstall with the extension "
                "or pass backend='numpy'"
            )
        return _kernels_cy
    if name == "numpy":
        return _kernels_np
    raise ValueError(f"unknown backend {name!r} (expected 'cython' or 'numpy')")


@dataclass
class RenderFrame:
    """Raster output; ``pixels`` keeps pre-clamp values for the backward."""

    width: int
    height: int
    pixels: np.ndarray  # (H, W, 3) pre-clamp linear RGB
    clamp_mode: str = "clamp_to_unit"

    @property
    def clamped(self) -> np.ndarray:
        if self.clamp_mode == "none":
            return self.pixels
        return np.clip(self.pixels, 0.0, 1.0)


@dataclass
class ParamGradients:
    """Loss derivatives per splat, in model (insertion) order."""

    position: np.ndarray       # (n, 2)
    log_scales: np.ndarray     # (n, 2)
    rotation: np.ndarray       # (n,)
    opacity_logit: np.ndarray  # (n,)
    color: np.ndarray          # (n, 3), w.r.t. the stored nonnegative color


def _check_clamp_mode(clamp_mode):
    if clamp_mode not in ("clamp_to_unit", "none"):
        raise ValueError(f"unknown clamp_mode {clamp_mode!r}")


def _pack(model: SplatModel, width: int, height: int):
    """Sort by (depth, index) and precompute per-splat kernel inputs."""
    n = len(model)
    order = np.lexsort((np.arange(n), model.depths))
    pos = np.ascontiguousarray(model.positions[order])
    log_scales = model.log_scales[order]
    rot = model.rotations[order]
    logits = model.opacity_logits[order]
    neg = model.sign_mask[order]

    for arr, name in ((pos, "positions"), (log_scales, "log scales"),
                      (rot, "rotations"), (logits, "opacity logits"),
                      (model.colors, "colors"), (model.background, "background")):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"model {name} must be finite")

    alpha = np.minimum(expit(logits), ALPHA_CEIL)
    sign = np.where(neg, -1.0, 1.0)
    ucolor = np.ascontiguousarray(model.colors[order] * sign[:, None])
    # inverse/forward principal variances; capped so degenerate scales
    # degrade to empty footprints instead of overflowing
    invl = np.minimum(np.exp(-2.0 * log_scales), 1e300)
    lvar = np.exp(2.0 * log_scales)
    cos_t = np.ascontiguousarray(np.cos(rot))
    sin_t = np.ascontiguousarray(np.sin(rot))
    # axis-aligned extents of the cutoff ellipse: 3 * sqrt(diag(Sigma))
    sxx = cos_t**2 * lvar[:, 0] + sin_t**2 * lvar[:, 1]
    syy = sin_t**2 * lvar[:, 0] + cos_t**2 * lvar[:, 1]
    ext_x = 3.0 * np.sqrt(sxx)
    ext_y = 3.0 * np.sqrt(syy)
    bbox = np.empty((n, 4), dtype=np.int32)
    with np.errstate(invalid="ignore"):
        bbox[:, 0] = np.clip(np.floor(pos[:, 0] - ext_x - 0.5), 0, width)
        bbox[:, 1] = np.clip(np.floor(pos[:, 0] + ext_x - 0.5) + 2, 0, width)
        bbox[:, 2] = np.clip(np.floor(pos[:, 1] - ext_y - 0.5), 0, height)
        bbox[:, 3] = np.clip(np.floor(pos[:, 1] + ext_y - 0.5) + 2, 0, height)
    return order, (
        pos,
        cos_t,
        sin_t,
        np.ascontiguousarray(invl[:, 0]),
        np.ascontiguousarray(invl[:, 1]),
        alpha,
        ucolor,
        bbox,
        np.ascontiguousarray(model.background),
    )


def render(
    model: SplatModel,
    width: int,
    height: int,
    *,
    clamp_mode: str = "clamp_to_unit",
    tile_size: int = 16,
    backend: str | None = None,
) -> RenderFrame:
    """Rasterize the model onto a width x height frame."""
    if width < 1 or height < 1:
        raise ValueError(f"frame size must be positive, got {width}x{height}")
    if tile_size < 1:
        raise ValueError("tile_size must be positive")
    _check_clamp_mode(clamp_mode)
    kernels = _get_kernels(backend)
    _, packed = _pack(model, width, height)
    pixels = kernels.forward(*packed, height, width, tile_size, CUTOFF_Q, T_STOP)
    return RenderFrame(width=width, height=height, pixels=pixels, clamp_mode=clamp_mode)


def backward(
    model: SplatModel,
    frame_grad: np.ndarray,
    frame: RenderFrame,
    *,
    tile_size: int = 16,
    backend: str | None = None,
) -> ParamGradients:
    """Exact derivatives of sum(frame_grad * clamped_pixels) per parameter.

    ``frame_grad`` is the loss derivative with respect to the frame's
    (clamped) output; the clamp contributes subgradient 0 wherever it was
    active, and the chain continues through the compositing equation.
    """
    frame_grad = np.asarray(frame_grad, dtype=np.float64)
    if frame_grad.shape != (frame.height, frame.width, 3):
        raise ValueError(
            f"frame_grad shape {frame_grad.shape} does not match "
            f"frame ({frame.height}, {frame.width}, 3)"
        )
    if frame.clamp_mode == "clamp_to_unit":
        inactive = (frame.pixels >= 0.0) & (frame.pixels <= 1.0)
        masked = np.ascontiguousarray(np.where(inactive, frame_grad, 0.0))
    else:
        masked = np.ascontiguousarray(frame_grad)
    kernels = _get_kernels(backend)
    order, packed = _pack(model, frame.width, frame.height)
    d_pos, d_ls, d_rot, d_logit, d_uc = kernels.backward(
        *packed, masked, frame.height, frame.width, tile_size, CUTOFF_Q, T_STOP
    )
    n = len(model)
    grads = ParamGradients(
        position=np.empty((n, 2)),
        log_scales=np.empty((n, 2)),
        rotation=np.empty(n),
        opacity_logit=np.empty(n),
        color=np.empty((n, 3)),
    )
    grads.position[order] = d_pos
    grads.log_scales[order] = d_ls
    grads.rotation[order] = d_rot
    grads.opacity_logit[order] = d_logit
    grads.color[order] = d_uc
    # stored colors are nonnegative; the mask sign enters the chain here
    grads.color[model.sign_mask] *= -1.0
    return grads


def _inv_variance(log_scale: float) -> float:
    return 1e300 if log_scale < -345.0 else math.exp(-2.0 * log_scale)


def pixel_response(s: Splat2D, pixel) -> float:
    """Opacity-weighted Gaussian response of one splat at one point."""
    px, py = float(pixel[0]), float(pixel[1])
    dx = px - float(s.position[0])
    dy = py - float(s.position[1])
    c, sn = math.cos(s.rotation), math.sin(s.rotation)
    e0 = c * dx + sn * dy
    e1 = -sn * dx + c * dy
    q = e0 * e0 * _inv_variance(float(s.log_scales[0])) + e1 * e1 * _inv_variance(
        float(s.log_scales[1])
    )
    if q > CUTOFF_Q:
        return 0.0
    alpha = min(float(expit(s.opacity_logit)), ALPHA_CEIL)
    return alpha * math.exp(-0.5 * q)
