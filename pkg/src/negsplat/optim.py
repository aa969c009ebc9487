"""Gradient-based fitting of a splat model to a target image.

The loop is render -> loss -> analytic backward -> Adam step, with periodic
densify/prune control flow: low-opacity splats are removed, splats with a
large accumulated positional gradient are cloned (with seeded jitter, sign
inherited), and the model never grows past 4x its initial size.  Everything
is deterministic per seed.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from . import metrics
from .model import SplatModel, save_checkpoint
from .renderer import ParamGradients, backward, render

__all__ = [
    "FitConfig",
    "FitReport",
    "AdamState",
    "FitNumericError",
    "init_model",
    "loss_and_grad",
    "step",
    "densify_prune",
    "fit",
    "run_sweep",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# parameter group -> (model array, ParamGradients array, FitConfig rate)
_GROUPS = (
    ("positions", "position", "lr_position"),
    ("log_scales", "log_scales", "lr_log_scales"),
    ("rotations", "rotation", "lr_rotation"),
    ("opacity_logits", "opacity_logit", "lr_opacity_logit"),
    ("colors", "color", "lr_color"),
)

MAX_GROWTH = 4  # model size cap, in multiples of n_splats_init


class FitNumericError(RuntimeError):
    """Non-finite loss or gradient encountered during fitting."""


@dataclass
class FitConfig:
    iterations: int = 2000
    n_splats_init: int = 64
    neg_fraction: float = 0.2
    seed: int = 0
    lr_position: float = 0.15
    lr_log_scales: float = 0.02
    lr_rotation: float = 0.01
    lr_opacity_logit: float = 0.05
    lr_color: float = 0.02
    ssim_weight: float = 0.2
    densify_interval: int = 100
    prune_opacity_threshold: float = 0.005
    init_opacity: float = 0.1
    init_neg_color: float = 0.1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.n_splats_init < 1:
            raise ValueError("n_splats_init must be at least 1")
        if not 0.0 <= self.neg_fraction <= 1.0:
            raise ValueError(f"neg_fraction must lie in [0, 1], got {self.neg_fraction}")
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise ValueError("ssim_weight must lie in [0, 1]")
        if self.densify_interval < 1:
            raise ValueError("densify_interval must be at least 1")
        if not 0.0 < self.prune_opacity_threshold < 1.0:
            raise ValueError("prune_opacity_threshold must lie in (0, 1)")
        for name in ("lr_position", "lr_log_scales", "lr_rotation",
                     "lr_opacity_logit", "lr_color"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass
class FitReport:
    losses: np.ndarray                     # one entry per iteration
    psnr_trace: list[tuple[int, float]]    # (iteration, psnr) every 100 iters
    final_psnr: float
    final_ssim: float
    n_positive: int
    n_negative: int
    wall_clock_s: float

    def to_text(self) -> str:
        """Serialized report; excludes wall clock so reruns are bit-identical."""
        psnr_at = dict(self.psnr_trace)
        lines = []
        for i, loss in enumerate(self.losses, start=1):
            row = f"iter={i} loss={loss:.17g}"
            if i in psnr_at:
                row += f" psnr={psnr_at[i]:.17g}"
            lines.append(row)
        lines.append(f"final_psnr={self.final_psnr:.17g}")
        lines.append(f"final_ssim={self.final_ssim:.17g}")
        lines.append(f"positive={self.n_positive}")
        lines.append(f"negative={self.n_negative}")
        return "\n".join(lines) + "\n"


def init_model(target: np.ndarray, cfg: FitConfig) -> SplatModel:
    """Seeded initialization over the target image.

    Positions are uniform over the frame; round(neg_fraction * n) splats are
    flagged negative.  Positive splats start from the local target color,
    negative ones from a small uniform color.  Scales are isotropic from the
    mean nearest-neighbor distance, opacity starts at ``init_opacity``, and
    depths are uniform in [0, 1].
    """
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 3 or target.shape[2] != 3 or target.size == 0:
        raise ValueError("target must be a nonempty HxWx3 image")
    height, width = target.shape[:2]
    n = cfg.n_splats_init
    rng = np.random.default_rng(cfg.seed)
    positions = rng.uniform((0.0, 0.0), (width, height), size=(n, 2))
    depths = rng.uniform(0.0, 1.0, size=n)

    n_neg = int(round(cfg.neg_fraction * n))
    mask = np.zeros(n, dtype=bool)
    mask[:n_neg] = True

    px = np.clip(positions[:, 0].astype(int), 0, width - 1)
    py = np.clip(positions[:, 1].astype(int), 0, height - 1)
    colors = target[py, px].copy()
    colors[mask] = cfg.init_neg_color

    if n >= 2:
        diff = positions[:, None, :] - positions[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(dist, np.inf)
        nn_mean = float(dist.min(axis=1).mean())
    else:
        nn_mean = min(width, height) / 4.0
    log_scales = np.full((n, 2), math.log(max(nn_mean, 1e-3)))

    return SplatModel(
        positions=positions,
        log_scales=log_scales,
        rotations=np.zeros(n),
        opacity_logits=np.full(n, float(logit(cfg.init_opacity))),
        colors=colors,
        depths=depths,
        sign_mask=mask,
        background=np.zeros(3),
    )


def loss_and_grad(image: np.ndarray, target: np.ndarray, ssim_weight: float):
    """(1 - w) * L1 + w * (1 - SSIM) and its derivative w.r.t. ``image``."""
    image = np.asarray(image, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if image.shape != target.shape:
        raise ValueError(f"shape mismatch: {image.shape} vs {target.shape}")
    diff = image - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - ssim_weight) * np.sign(diff) / diff.size
    value = (1.0 - ssim_weight) * l1
    if ssim_weight > 0.0:
        s_val, s_grad = metrics.ssim_and_grad(image, target)
        value += ssim_weight * (1.0 - s_val)
        grad -= ssim_weight * s_grad
    return value, grad


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_model(cls, model: SplatModel) -> "AdamState":
        m = {g[0]: np.zeros_like(getattr(model, g[0])) for g in _GROUPS}
        v = {g[0]: np.zeros_like(getattr(model, g[0])) for g in _GROUPS}
        return cls(m=m, v=v)

    def remap(self, keep: np.ndarray, n_clones: int) -> None:
        """Drop pruned rows and append zeroed rows for clones."""
        for d in (self.m, self.v):
            for key, arr in d.items():
                kept = arr[keep]
                pad = np.zeros((n_clones,) + arr.shape[1:])
                d[key] = np.concatenate([kept, pad], axis=0)


def step(model: SplatModel, grads: ParamGradients, state: AdamState, cfg: FitConfig):
    """One Adam update per parameter group; mask and depths untouched."""
    for model_attr, grad_attr, lr_attr in _GROUPS:
        g = getattr(grads, grad_attr)
        if not np.all(np.isfinite(g)):
            bad = int(np.nonzero(~np.isfinite(g).reshape(len(model), -1).all(axis=1))[0][0])
            raise FitNumericError(
                f"non-finite gradient for '{grad_attr}' at splat {bad}"
            )
    state.t += 1
    bias1 = 1.0 - ADAM_BETA1**state.t
    bias2 = 1.0 - ADAM_BETA2**state.t
    for model_attr, grad_attr, lr_attr in _GROUPS:
        g = getattr(grads, grad_attr)
        lr = getattr(cfg, lr_attr)
        m = state.m[model_attr]
        v = state.v[model_attr]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        param = getattr(model, model_attr)
        param -= update
    # stored colors stay nonnegative; the sign mask is the only sign source
    np.maximum(model.colors, 0.0, out=model.colors)
    return model, state


@dataclass
class DensifyResult:
    keep: np.ndarray        # bool mask over the pre-call model
    clone_parents: np.ndarray  # indices into the post-prune model


def densify_prune(model: SplatModel, grads_accum: np.ndarray, cfg: FitConfig, rng):
    """Prune low-opacity splats, clone high-gradient ones (capped at 4x init).

    Returns the new model and a :class:`DensifyResult` describing the row
    remapping, so optimizer state can follow.
    """
    grads_accum = np.asarray(grads_accum, dtype=np.float64)
    if grads_accum.shape != (len(model),):
        raise ValueError("grads_accum must have one entry per splat")
    alpha = expit(model.opacity_logits)
    keep = alpha >= cfg.prune_opacity_threshold
    acc = grads_accum[keep]

    kept = SplatModel(
        positions=model.positions[keep],
        log_scales=model.log_scales[keep],
        rotations=model.rotations[keep],
        opacity_logits=model.opacity_logits[keep],
        colors=model.colors[keep],
        depths=model.depths[keep],
        sign_mask=model.sign_mask[keep],
        background=model.background,
    )

    parents = np.zeros(0, dtype=int)
    if len(kept) > 0 and acc.size > 0:
        p90 = np.percentile(acc, 90.0)
        candidates = np.nonzero(acc > p90)[0]
        budget = MAX_GROWTH * cfg.n_splats_init - len(kept)
        if candidates.size > budget:
            by_need = candidates[np.argsort(-acc[candidates], kind="stable")]
            candidates = np.sort(by_need[:max(budget, 0)])
        parents = candidates
    if parents.size:
        jitter_sigma = np.exp(kept.log_scales[parents]) / 4.0
        jitter = rng.standard_normal((parents.size, 2)) * jitter_sigma
        new = SplatModel(
            positions=np.concatenate([kept.positions, kept.positions[parents] + jitter]),
            log_scales=np.concatenate([kept.log_scales, kept.log_scales[parents]]),
            rotations=np.concatenate([kept.rotations, kept.rotations[parents]]),
            opacity_logits=np.concatenate([kept.opacity_logits, kept.opacity_logits[parents]]),
            colors=np.concatenate([kept.colors, kept.colors[parents]]),
            depths=np.concatenate([kept.depths, kept.depths[parents]]),
            sign_mask=np.concatenate([kept.sign_mask, kept.sign_mask[parents]]),
            background=kept.background,
        )
    else:
        new = kept
    return new, DensifyResult(keep=keep, clone_parents=parents)


def fit(target: np.ndarray, cfg: FitConfig, checkpoint_dir=None, backend=None):
    """Run the full fitting loop; returns (model, report)."""
    target = np.asarray(target, dtype=np.float64)
    t_start = time.perf_counter()
    model = init_model(target, cfg)
    height, width = target.shape[:2]
    state = AdamState.for_model(model)
    grads_accum = np.zeros(len(model))
    jitter_rng = np.random.default_rng([cfg.seed, 1])

    losses = np.zeros(cfg.iterations)
    psnr_trace = []
    for it in range(1, cfg.iterations + 1):
        frame = render(model, width, height, backend=backend)
        loss_val, dpix = loss_and_grad(frame.clamped, target, cfg.ssim_weight)
        if not math.isfinite(loss_val):
            raise FitNumericError(f"non-finite loss at iteration {it}")
        losses[it - 1] = loss_val
        if it % 100 == 0:
            psnr_trace.append(
                (it, metrics.psnr(metrics.quantize(frame.clamped), target))
            )
        grads = backward(model, dpix, frame)
        grads_accum += np.hypot(grads.position[:, 0], grads.position[:, 1])
        step(model, grads, state, cfg)
        if it % cfg.densify_interval == 0:
            model, info = densify_prune(model, grads_accum, cfg, jitter_rng)
            state.remap(info.keep, info.clone_parents.size)
            grads_accum = np.zeros(len(model))
        if checkpoint_dir is not None and it % 1000 == 0 and it < cfg.iterations:
            save_checkpoint(model, f"{checkpoint_dir}/checkpoint_{it:06d}.json")

    final = render(model, width, height, backend=backend)
    quantized = metrics.quantize(final.clamped)
    can_ssim = min(height, width) >= metrics.WINDOW_SIZE
    report = FitReport(
        losses=losses,
        psnr_trace=psnr_trace,
        final_psnr=metrics.psnr(quantized, target),
        final_ssim=metrics.ssim(quantized, target) if can_ssim else math.nan,
        n_positive=model.n_positive,
        n_negative=model.n_negative,
        wall_clock_s=time.perf_counter() - t_start,
    )
    if checkpoint_dir is not None:
        save_checkpoint(model, f"{checkpoint_dir}/checkpoint.json")
    return model, report


def run_sweep(target: np.ndarray, cfg: FitConfig, fractions, seeds, backend=None):
    """Fit once per (fraction, seed); returns one aggregate row per fraction."""
    rows = []
    for fraction in fractions:
        runs = []
        for seed in seeds:
            run_cfg = dataclasses.replace(
                cfg, neg_fraction=float(fraction), seed=int(seed)
            )
            _, report = fit(target, run_cfg, backend=backend)
            runs.append(report)
        rows.append(
            {
                "neg_fraction": float(fraction),
                "psnr_mean": float(np.mean([r.final_psnr for r in runs])),
                "ssim_mean": float(np.mean([r.final_ssim for r in runs])),
                "positive_mean": float(np.mean([r.n_positive for r in runs])),
                "negative_mean": float(np.mean([r.n_negative for r in runs])),
                "total_mean": float(
                    np.mean([r.n_positive + r.n_negative for r in runs])
                ),
                "per_seed_psnr": [r.final_psnr for r in runs],
                "per_seed_total": [r.n_positive + r.n_negative for r in runs],
            }
        )
    return rows
