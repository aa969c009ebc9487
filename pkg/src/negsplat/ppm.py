"""Binary netpbm image I/O: P6 (RGB) and P5 (grayscale).

Writing quantizes linear [0, 1] values to 8-bit with round-half-up; reading
accepts 8- and 16-bit rasters and returns floats in [0, 1].  The byte layout
of written files is exact (golden-file testable).
"""

from __future__ import annotations

import numpy as np

__all__ = ["PpmError", "read_ppm", "read_image", "write_ppm", "write_pgm"]


class PpmError(Exception):
    """Raised for malformed netpbm files."""


def _to_bytes(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return np.floor(255.0 * np.clip(image, 0.0, 1.0) + 0.5).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as binary P6, maxval 255."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_to_bytes(image).tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Write an (H, W) float image in [0, 1] as binary P5, maxval 255."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected an HxW image, got shape {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_to_bytes(image).tobytes())


def _read_tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens, honoring comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one (start of the raster).
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] != ord("\n"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i] != ord("#"):
            i += 1
        if start == i:
            raise PpmError("truncated header")
        tokens.append(data[start:i])
        if len(tokens) == count:
            if i >= n or not data[i : i + 1].isspace():
                raise PpmError("missing whitespace after header")
            i += 1
    return tokens, i


def read_ppm(path) -> np.ndarray:
    """Read binary P6/P5; returns (H, W, 3) or (H, W) floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P5", b"P6"):
        raise PpmError(f"unsupported magic {data[:2]!r} (expected P5 or P6)")
    channels = 3 if data[:2] == b"P6" else 1
    (_, w_tok, h_tok, max_tok), offset = _read_tokens(data, 4)
    try:
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ValueError as exc:
        raise PpmError(f"non-numeric header field: {exc}") from exc
    if width < 1 or height < 1:
        raise PpmError(f"invalid size {width}x{height}")
    if not 0 < maxval < 65536:
        raise PpmError(f"invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    raster = data[offset : offset + expected]
    if len(raster) != expected:
        raise PpmError(
            f"raster has {len(raster)} bytes, expected {expected} "
            f"for {width}x{height} maxval {maxval}"
        )
    values = np.frombuffer(raster, dtype=dtype).astype(np.float64) / maxval
    if channels == 3:
        return values.reshape(height, width, 3)
    return values.reshape(height, width)


def read_image(path) -> np.ndarray:
    """Read P6/P5 and always return (H, W, 3); grayscale is replicated."""
    img = read_ppm(path)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return img
