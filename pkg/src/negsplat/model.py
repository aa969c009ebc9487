"""Renderable 2D splat scenes: signed-color Gaussian primitives.

A scene is an ordered collection of 2D splats plus a binary sign mask that
partitions them into positive and negative components.  Each splat stores its
covariance as rotation + log-scales, its opacity as a logit, and a
nonnegative RGB color; the sign mask alone decides whether the color is added
or subtracted during compositing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Splat2D",
    "SplatModel",
    "CheckpointError",
    "build_covariance",
    "signed_color",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Raised for malformed or inconsistent checkpoint files."""


@dataclass
class Splat2D:
    """One renderable primitive.

    position      pixel coordinates of the center
    log_scales    log of the principal standard deviations (pixels)
    rotation      angle of the principal frame (radians)
    opacity_logit unbounded opacity; logistic() maps it into (0, 1)
    color         nonnegative linear RGB; sign lives in the model mask
    depth         compositing order key, smaller renders first
    """

    position: np.ndarray
    log_scales: np.ndarray
    rotation: float
    opacity_logit: float
    color: np.ndarray
    depth: float


def build_covariance(s: Splat2D) -> np.ndarray:
    """Effective covariance R S S^T R^T of a splat (2x2, SPD)."""
    ls = np.asarray(s.log_scales, dtype=np.float64)
    if not (
        np.all(np.isfinite(ls))
        and math.isfinite(s.rotation)
        and np.all(np.isfinite(np.asarray(s.position, dtype=np.float64)))
    ):
        raise ValueError("splat fields must be finite")
    c, sn = math.cos(s.rotation), math.sin(s.rotation)
    rot = np.array([[c, -sn], [sn, c]])
    scale = np.diag(np.exp(ls))
    half = rot @ scale
    return half @ half.T


@dataclass
class SplatModel:
    """Ordered splats + sign mask + background color, stored column-wise.

    The arrays are the authoritative state (the optimizer updates them in
    place); ``__getitem__`` materializes a single ``Splat2D`` view copy.
    """

    positions: np.ndarray      # (n, 2) float64
    log_scales: np.ndarray     # (n, 2) float64
    rotations: np.ndarray      # (n,)   float64
    opacity_logits: np.ndarray  # (n,)  float64
    colors: np.ndarray         # (n, 3) float64, nonnegative
    depths: np.ndarray         # (n,)   float64
    sign_mask: np.ndarray      # (n,)   bool, True = negative component
    background: np.ndarray     # (3,)   float64 in [0, 1]

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64)).reshape(-1, 2)
        self.log_scales = np.atleast_2d(np.asarray(self.log_scales, dtype=np.float64)).reshape(-1, 2)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(-1)
        self.colors = np.atleast_2d(np.asarray(self.colors, dtype=np.float64)).reshape(-1, 3)
        self.depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        self.sign_mask = np.asarray(self.sign_mask, dtype=bool).reshape(-1)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        n = self.positions.shape[0]
        for name in ("log_scales", "rotations", "opacity_logits", "colors", "depths"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} length {getattr(self, name).shape[0]} != splat count {n}")
        if self.sign_mask.shape[0] != n:
            raise ValueError(
                f"sign mask length {self.sign_mask.shape[0]} != splat count {n}"
            )
        if np.any(self.colors < 0):
            raise ValueError("stored colors must be nonnegative")

    # -- collection interface -------------------------------------------------

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> Splat2D:
        i = int(i)
        if not 0 <= i < len(self):
            raise IndexError(f"splat index {i} out of range [0, {len(self)})")
        return Splat2D(
            position=self.positions[i].copy(),
            log_scales=self.log_scales[i].copy(),
            rotation=float(self.rotations[i]),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i].copy(),
            depth=float(self.depths[i]),
        )

    @property
    def splats(self) -> list[Splat2D]:
        return [self[i] for i in range(len(self))]

    @property
    def n_negative(self) -> int:
        return int(self.sign_mask.sum())

    @property
    def n_positive(self) -> int:
        return len(self) - self.n_negative

    @classmethod
    def from_splats(cls, splats, sign_mask, background) -> "SplatModel":
        splats = list(splats)
        mask = np.asarray(sign_mask, dtype=bool).reshape(-1)
        if mask.shape[0] != len(splats):
            raise ValueError(
                f"sign mask length {mask.shape[0]} != splat count {len(splats)}"
            )
        n = len(splats)
        return cls(
            positions=np.array([s.position for s in splats], dtype=np.float64).reshape(n, 2),
            log_scales=np.array([s.log_scales for s in splats], dtype=np.float64).reshape(n, 2),
            rotations=np.array([s.rotation for s in splats], dtype=np.float64),
            opacity_logits=np.array([s.opacity_logit for s in splats], dtype=np.float64),
            colors=np.array([s.color for s in splats], dtype=np.float64).reshape(n, 3),
            depths=np.array([s.depth for s in splats], dtype=np.float64),
            sign_mask=mask,
            background=background,
        )

    @classmethod
    def empty(cls, background=(0.0, 0.0, 0.0)) -> "SplatModel":
        return cls(
            positions=np.zeros((0, 2)),
            log_scales=np.zeros((0, 2)),
            rotations=np.zeros(0),
            opacity_logits=np.zeros(0),
            colors=np.zeros((0, 3)),
            depths=np.zeros(0),
            sign_mask=np.zeros(0, dtype=bool),
            background=background,
        )

    def copy(self) -> "SplatModel":
        return SplatModel(
            positions=self.positions.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            opacity_logits=self.opacity_logits.copy(),
            colors=self.colors.copy(),
            depths=self.depths.copy(),
            sign_mask=self.sign_mask.copy(),
            background=self.background.copy(),
        )


def signed_color(model: SplatModel, i: int) -> np.ndarray:
    """Color of splat ``i`` with the mask sign applied."""
    i = int(i)
    if not 0 <= i < len(model):
        raise ValueError(f"splat index {i} out of range [0, {len(model)})")
    sign = -1.0 if model.sign_mask[i] else 1.0
    return sign * model.colors[i]


# -- checkpoint serialization -------------------------------------------------
#
# Structured text (JSON) with every float printed at 17 significant digits,
# which round-trips IEEE doubles exactly.


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_vec(v) -> str:
    return "[" + ", ".join(_fmt(x) for x in np.asarray(v, dtype=np.float64)) + "]"


def save_checkpoint(model: SplatModel, path) -> None:
    """Write the model as a checkpoint file; exact round-trip guaranteed."""
    arrays = (
        model.positions, model.log_scales, model.rotations,
        model.opacity_logits, model.colors, model.depths, model.background,
    )
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValueError("cannot checkpoint a model with non-finite fields")
    lines = ["{", f'  "version": {CHECKPOINT_VERSION},']
    lines.append(f'  "background": {_fmt_vec(model.background)},')
    lines.append('  "splats": [')
    n = len(model)
    for i in range(n):
        rec = (
            "    {"
            f'"pos": {_fmt_vec(model.positions[i])}, '
            f'"log_scales": {_fmt_vec(model.log_scales[i])}, '
            f'"rotation": {_fmt(model.rotations[i])}, '
            f'"opacity_logit": {_fmt(model.opacity_logits[i])}, '
            f'"color": {_fmt_vec(model.colors[i])}, '
            f'"depth": {_fmt(model.depths[i])}, '
            f'"negative": {"true" if model.sign_mask[i] else "false"}'
            "}"
        )
        lines.append(rec + ("," if i < n - 1 else ""))
    lines.append("  ]")
    lines.append("}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _require(record, key, index=None):
    if key not in record:
        where = "checkpoint" if index is None else f"splat record {index}"
        raise CheckpointError(f"missing field '{key}' in {where}")
    return record[key]


def _vec(value, length, key, index=None):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (length,):
        where = "checkpoint" if index is None else f"splat record {index}"
        raise CheckpointError(f"field '{key}' in {where} must have {length} numbers")
    return arr


def load_checkpoint(path) -> SplatModel:
    """Load a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(
            f"malformed checkpoint at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint root must be an object")
    version = _require(doc, "version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    background = _vec(_require(doc, "background"), 3, "background")
    records = _require(doc, "splats")
    if not isinstance(records, list):
        raise CheckpointError("'splats' must be a list")

    n = len(records)
    positions = np.zeros((n, 2))
    log_scales = np.zeros((n, 2))
    rotations = np.zeros(n)
    opacity_logits = np.zeros(n)
    colors = np.zeros((n, 3))
    depths = np.zeros(n)
    mask = np.zeros(n, dtype=bool)
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise CheckpointError(f"splat record {i} must be an object")
        positions[i] = _vec(_require(rec, "pos", i), 2, "pos", i)
        log_scales[i] = _vec(_require(rec, "log_scales", i), 2, "log_scales", i)
        rotations[i] = float(_require(rec, "rotation", i))
        opacity_logits[i] = float(_require(rec, "opacity_logit", i))
        colors[i] = _vec(_require(rec, "color", i), 3, "color", i)
        depths[i] = float(_require(rec, "depth", i))
        negative = _require(rec, "negative", i)
        if not isinstance(negative, bool):
            raise CheckpointError(f"field 'negative' in splat record {i} must be a bool")
        mask[i] = negative
    try:
        return SplatModel(
            positions=positions,
            log_scales=log_scales,
            rotations=rotations,
            opacity_logits=opacity_logits,
            colors=colors,
            depths=depths,
            sign_mask=mask,
            background=background,
        )
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
