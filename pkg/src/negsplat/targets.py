"""Deterministic procedural fitting targets.

Four patterns exercising the structures negative splats are meant to help
with: a bright annulus on dark ground (ring), a crescent (moon), a
high-frequency checkerboard (checker), and thin glyph-like strokes
(text-like).  All are seeded and reproducible.
"""

from __future__ import annotations

import numpy as np

__all__ = ["TARGET_NAMES", "make_target"]

TARGET_NAMES = ("ring", "moon", "checker", "text-like")

_DARK = np.array([0.08, 0.08, 0.10])
_BRIGHT = np.array([0.90, 0.88, 0.75])
_PAPER = np.array([0.85, 0.84, 0.80])
_INK = np.array([0.10, 0.10, 0.12])


def _pixel_grid(width: int, height: int):
    ys = np.arange(height, dtype=np.float64) + 0.5
    xs = np.arange(width, dtype=np.float64) + 0.5
    return np.meshgrid(xs, ys)


def _lerp(bg, fg, t):
    return bg + (fg - bg) * t[..., None]


def _ring(width, height):
    gx, gy = _pixel_grid(width, height)
    cx, cy = width / 2.0, height / 2.0
    r = np.hypot(gx - cx, gy - cy)
    scale = min(width, height)
    r_mid = 0.30 * scale
    half_width = 0.07 * scale
    edge = 1.5  # antialias width in pixels
    t = np.clip((half_width - np.abs(r - r_mid)) / edge + 0.5, 0.0, 1.0)
    return _lerp(_DARK, _BRIGHT, t)


def _moon(width, height):
    gx, gy = _pixel_grid(width, height)
    scale = min(width, height)
    cx, cy = width / 2.0, height / 2.0
    edge = 1.5
    outer = np.hypot(gx - cx, gy - cy)
    inner = np.hypot(gx - (cx + 0.14 * scale), gy - cy)
    in_outer = np.clip((0.34 * scale - outer) / edge + 0.5, 0.0, 1.0)
    in_inner = np.clip((0.30 * scale - inner) / edge + 0.5, 0.0, 1.0)
    t = np.clip(in_outer - in_inner, 0.0, 1.0)
    return _lerp(_DARK, _BRIGHT, t)


def _checker(width, height, cell):
    gx, gy = np.meshgrid(np.arange(width), np.arange(height))
    parity = ((gx // cell) + (gy // cell)) % 2
    colors = np.where(parity[..., None] == 0, _BRIGHT, _DARK)
    return colors.astype(np.float64)


def _textlike(width, height, seed):
    rng = np.random.default_rng(seed)
    img = np.tile(_PAPER, (height, width, 1))
    gx, gy = _pixel_grid(width, height)
    scale = min(width, height)
    n_strokes = 6
    stroke_half_width = max(0.011 * scale, 0.6)
    edge = 0.8
    for _ in range(n_strokes):
        start = rng.uniform(0.15, 0.85, size=2) * (width, height)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        length = rng.uniform(0.15, 0.4) * scale
        p0 = start
        p1 = start + length * np.array([np.cos(angle), np.sin(angle)])
        seg = p1 - p0
        seg_len2 = float(seg @ seg)
        t = ((gx - p0[0]) * seg[0] + (gy - p0[1]) * seg[1]) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(gx - (p0[0] + t * seg[0]), gy - (p0[1] + t * seg[1]))
        cover = np.clip((stroke_half_width - dist) / edge + 0.5, 0.0, 1.0)
        img = _lerp(img, _INK, cover)
    return img


def make_target(name: str, width: int, height: int, seed: int = 0, cell: int = 8):
    """Build a named (H, W, 3) target image in [0, 1]."""
    if width < 1 or height < 1:
        raise ValueError(f"target size must be positive, got {width}x{height}")
    if name == "ring":
        return _ring(width, height)
    if name == "moon":
        return _moon(width, height)
    if name == "checker":
        if cell < 1:
            raise ValueError("cell must be positive")
        return _checker(width, height, cell)
    if name == "text-like":
        return _textlike(width, height, seed)
    raise ValueError(f"unknown target {name!r} (expected one of {TARGET_NAMES})")
