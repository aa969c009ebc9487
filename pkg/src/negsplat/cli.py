"""Command-line interface.

Subcommands: ``fit`` (optimize splats against a PPM target), ``ablate``
(sweep the negative fraction over seeds), ``density`` / ``sample``
(Diff-Gaussian heatmaps, plots, and draws), ``render`` (rasterize a
checkpoint), and ``targets`` (emit the procedural test images).

Exit codes: 0 success, 1 usage error, 2 input error, 3 numeric failure.
Every command echoes its effective configuration for reproducibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import diffgauss
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .optim import FitConfig, FitNumericError, fit, run_sweep
from .ppm import PpmError, read_image, write_pgm, write_ppm
from .renderer import render
from .targets import TARGET_NAMES, make_target

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _InputError(Exception):
    pass


def _echo_config(command: str, values: dict) -> None:
    safe = {k: (list(v) if isinstance(v, tuple) else v) for k, v in values.items()}
    print(f"# config {command} " + json.dumps(safe, sort_keys=True))


def _parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        width, height = int(w), int(h)
    except ValueError:
        raise _UsageError(f"--size expects WxH, got {text!r}")
    if width < 1 or height < 1:
        raise _UsageError(f"--size must be positive, got {text!r}")
    return width, height


def _parse_floats(text: str, flag: str):
    try:
        return [float(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise _UsageError(f"{flag} expects comma-separated numbers, got {text!r}")


def _parse_ints(text: str, flag: str):
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise _UsageError(f"{flag} expects comma-separated integers, got {text!r}")


def _ensure_outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _add_fit_flags(p: argparse.ArgumentParser):
    p.add_argument("--iters", type=int, default=2000, help="optimization iterations")
    p.add_argument("--splats", type=int, default=64, help="initial splat count")
    p.add_argument("--neg-fraction", type=float, default=0.2,
                   help="fraction of splats initialized negative")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="ssim_weight", type=float, default=0.2,
                   help="SSIM weight in the loss")
    p.add_argument("--prune-threshold", type=float, default=0.005)
    p.add_argument("--densify-interval", type=int, default=100)
    p.add_argument("--out", default="out", help="output directory")


def _fit_config(args) -> FitConfig:
    try:
        return FitConfig(
            iterations=args.iters,
            n_splats_init=args.splats,
            neg_fraction=args.neg_fraction,
            seed=args.seed,
            ssim_weight=args.ssim_weight,
            prune_opacity_threshold=args.prune_threshold,
            densify_interval=args.densify_interval,
        )
    except ValueError as exc:
        raise _UsageError(str(exc))


def _load_target(path: str) -> np.ndarray:
    try:
        return read_image(path)
    except FileNotFoundError:
        raise _InputError(f"target image not found: {path}")
    except PpmError as exc:
        raise _InputError(f"cannot read target {path}: {exc}")


# -- distribution spec flags ---------------------------------------------------


def _add_dist_flags(p: argparse.ArgumentParser):
    p.add_argument("--m0", default="0,0", help="mean of the positive component")
    p.add_argument("--m1", default="0,0", help="mean of the negative component")
    p.add_argument("--cov0", default="1,0,1",
                   help="covariance of g0: 'v' (1D) or 'a,b,c' for [[a,b],[b,c]]")
    p.add_argument("--cov1", default="0.25,0,0.25", help="covariance of g1 (same form)")
    p.add_argument("--c", default="max",
                   help="balance coefficient, or 'max' for the admissible bound")
    p.add_argument("--bounds", default="auto",
                   help="evaluation box: 'auto', 'lo,hi' (1D) or 'lo,hi,lo,hi' (2D)")
    p.add_argument("--size", default="256x256", help="raster size WxH")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")


def _cov_from_tokens(vals, flag):
    if len(vals) == 1:
        return np.array([[vals[0]]])
    if len(vals) == 3:
        return np.array([[vals[0], vals[1]], [vals[1], vals[2]]])
    raise _UsageError(f"{flag} expects 1 value (1D) or 3 values (2D symmetric)")


def _build_diffgaussian(args):
    m0 = _parse_floats(args.m0, "--m0")
    m1 = _parse_floats(args.m1, "--m1")
    if len(m0) != len(m1):
        raise _UsageError("--m0 and --m1 must have the same dimension")
    if len(m0) not in (1, 2):
        raise _UsageError("only 1D and 2D specs are supported")
    cov0 = _cov_from_tokens(_parse_floats(args.cov0, "--cov0"), "--cov0")
    cov1 = _cov_from_tokens(_parse_floats(args.cov1, "--cov1"), "--cov1")
    if cov0.shape[0] != len(m0) or cov1.shape[0] != len(m1):
        raise _UsageError("covariance arity does not match mean dimension")
    try:
        g0 = diffgauss.GaussianParams(mean=m0, covariance=cov0)
        g1 = diffgauss.GaussianParams(mean=m1, covariance=cov1)
    except ValueError as exc:
        raise _InputError(f"invalid component: {exc}")
    c_max = diffgauss.max_admissible_c(g0, g1)
    if args.c == "max":
        c = min(c_max, 1.0 - 1e-9)
    else:
        try:
            c = float(args.c)
        except ValueError:
            raise _UsageError(f"--c expects a number or 'max', got {args.c!r}")
        if not 0.0 <= c < 1.0:
            raise _UsageError(f"--c must lie in [0, 1), got {c}")
        if c > c_max + 1e-12:
            raise _InputError(
                f"c={c:.12g} exceeds the admissible bound c_max={c_max:.12g}"
            )
    return diffgauss.DiffGaussian(g0=g0, g1=g1, c=c), c_max


def _plot_levels(height: int) -> np.ndarray:
    """Column fill levels for function plots: row 0 on top, midpoint levels."""
    return (height - np.arange(height)[:, None] - 0.5) / height


def _resolve_bounds(args, d):
    if args.bounds != "auto":
        vals = _parse_floats(args.bounds, "--bounds")
        if len(vals) == 2 and d.dim == 1:
            box = np.array([vals])
        elif len(vals) == 4 and d.dim == 2:
            box = np.array([vals[:2], vals[2:]])
        else:
            raise _UsageError("--bounds arity does not match the spec dimension")
        if np.any(box[:, 1] <= box[:, 0]):
            raise _UsageError("--bounds must satisfy lo < hi per axis")
        return box
    sigma = float(np.sqrt(np.diag(d.g0.covariance).max()))
    half = 4.0 * sigma
    center = d.g0.mean
    return np.stack([center - half, center + half], axis=1)


# -- subcommand bodies ----------------------------------------------------------


def cmd_fit(args) -> int:
    cfg = _fit_config(args)
    target = _load_target(args.target)
    out = _ensure_outdir(args.out)
    _echo_config("fit", {**cfg.__dict__, "target": args.target, "out": out})
    model, report = fit(target, cfg, checkpoint_dir=out)
    frame = render(model, target.shape[1], target.shape[0])
    write_ppm(os.path.join(out, "render.ppm"), frame.clamped)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(report.to_text())
    print(
        f"fit: psnr={report.final_psnr:.3f} dB ssim={report.final_ssim:.5f} "
        f"splats={report.n_positive}+{report.n_negative} "
        f"({report.wall_clock_s:.2f} s)"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _fit_config(args)
    fractions = _parse_floats(args.fractions, "--fractions")
    seeds = _parse_ints(args.seeds, "--seeds")
    if not fractions:
        raise _UsageError("--fractions must list at least one value")
    if not seeds:
        raise _UsageError("--seeds must list at least one value")
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise _UsageError(f"fractions must lie in [0, 1], got {f}")
    target = _load_target(args.target)
    out = _ensure_outdir(args.out)
    _echo_config("ablate", {**cfg.__dict__, "target": args.target, "out": out,
                            "fractions": fractions, "seeds": seeds})
    rows = run_sweep(target, cfg, fractions, seeds)
    header = f"{'neg_frac':>8} {'psnr':>8} {'ssim':>8} {'pos':>7} {'neg':>7} {'total':>7}"
    print(header)
    for row in rows:
        print(
            f"{row['neg_fraction']:>8.2f} {row['psnr_mean']:>8.3f} "
            f"{row['ssim_mean']:>8.5f} {row['positive_mean']:>7.1f} "
            f"{row['negative_mean']:>7.1f} {row['total_mean']:>7.1f}"
        )
    tsv = os.path.join(out, "ablate.tsv")
    with open(tsv, "w") as fh:
        fh.write(
            "neg_fraction\tpsnr_mean\tssim_mean\tpositive_mean\tnegative_mean"
            "\ttotal_mean\tper_seed_psnr\tper_seed_total\n"
        )
        for row in rows:
            fh.write(
                f"{row['neg_fraction']:.17g}\t{row['psnr_mean']:.17g}\t"
                f"{row['ssim_mean']:.17g}\t{row['positive_mean']:.17g}\t"
                f"{row['negative_mean']:.17g}\t{row['total_mean']:.17g}\t"
                + ",".join(f"{x:.17g}" for x in row["per_seed_psnr"]) + "\t"
                + ",".join(str(x) for x in row["per_seed_total"]) + "\n"
            )
    print(f"wrote {tsv}")
    return EXIT_OK


def cmd_density(args) -> int:
    d, c_max = _build_diffgaussian(args)
    width, height = _parse_size(args.size)
    box = _resolve_bounds(args, d)
    out = _ensure_outdir(args.out)
    _echo_config("density", {"m0": args.m0, "m1": args.m1, "cov0": args.cov0,
                             "cov1": args.cov1, "c": d.c, "c_max": c_max,
                             "bounds": box.tolist(), "size": args.size, "out": out})
    path = os.path.join(out, "density.pgm")
    if d.dim == 1:
        xs = np.linspace(box[0, 0], box[0, 1], width)
        vals = np.maximum(diffgauss.diff_pdf(d, xs[:, None]), 0.0)
        peak = float(vals.max())
        curve = vals / peak if peak > 0 else vals
        img = (_plot_levels(height) <= curve[None, :]).astype(np.float64)
        write_pgm(path, img)
    else:
        xs = box[0, 0] + (np.arange(width) + 0.5) * (box[0, 1] - box[0, 0]) / width
        ys = box[1, 0] + (np.arange(height) + 0.5) * (box[1, 1] - box[1, 0]) / height
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        vals = np.maximum(diffgauss.diff_pdf(d, pts), 0.0).reshape(height, width)
        peak = float(vals.max())
        write_pgm(path, vals / peak if peak > 0 else vals)
    print(f"wrote {path} (c={d.c:.12g}, c_max={c_max:.12g})")
    return EXIT_OK


def cmd_sample(args) -> int:
    d, c_max = _build_diffgaussian(args)
    if args.n < 0:
        raise _UsageError("--n must be nonnegative")
    width, height = _parse_size(args.size)
    box = _resolve_bounds(args, d)
    out = _ensure_outdir(args.out)
    _echo_config("sample", {"m0": args.m0, "m1": args.m1, "cov0": args.cov0,
                            "cov1": args.cov1, "c": d.c, "c_max": c_max,
                            "n": args.n, "seed": args.seed,
                            "bounds": box.tolist(), "size": args.size, "out": out})
    pts = diffgauss.sample(d, seed=args.seed, n=args.n)
    txt = os.path.join(out, "samples.txt")
    with open(txt, "w") as fh:
        for row in pts:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")
    if d.dim == 1:
        hist, _ = np.histogram(pts[:, 0], bins=width, range=tuple(box[0]))
        peak = hist.max() if pts.size else 0
        curve = hist / peak if peak > 0 else hist.astype(float)
        img = (_plot_levels(height) <= curve[None, :]).astype(np.float64)
    else:
        hist, _, _ = np.histogram2d(
            pts[:, 1], pts[:, 0], bins=(height, width),
            range=(tuple(box[1]), tuple(box[0])),
        )
        peak = hist.max() if pts.size else 0
        img = hist / peak if peak > 0 else hist
    scatter = os.path.join(out, "scatter.pgm")
    write_pgm(scatter, img)
    print(f"wrote {txt} and {scatter} ({len(pts)} points)")
    return EXIT_OK


def cmd_render(args) -> int:
    width, height = _parse_size(args.size)
    try:
        model = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise _InputError(f"checkpoint not found: {args.checkpoint}")
    except CheckpointError as exc:
        raise _InputError(f"cannot load checkpoint {args.checkpoint}: {exc}")
    out = _ensure_outdir(args.out)
    _echo_config("render", {"checkpoint": args.checkpoint, "size": args.size, "out": out})
    frame = render(model, width, height)
    path = os.path.join(out, "render.ppm")
    write_ppm(path, frame.clamped)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_targets(args) -> int:
    width, height = _parse_size(args.size)
    if args.cell < 1:
        raise _UsageError("--cell must be positive")
    out = _ensure_outdir(args.out)
    _echo_config("targets", {"name": args.name, "size": args.size,
                             "seed": args.seed, "cell": args.cell, "out": out})
    img = make_target(args.name, width, height, seed=args.seed, cell=args.cell)
    path = os.path.join(out, f"{args.name}.ppm")
    write_ppm(path, img)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="negsplat",
                     description="Signed 2D Gaussian splatting toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit splats to a PPM target image")
    p.add_argument("target", help="P6/P5 target image")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ablate", help="sweep the negative fraction")
    p.add_argument("target")
    p.add_argument("--fractions", default="0,0.1,0.2,0.3,0.5")
    p.add_argument("--seeds", default="0,1,2,3,4")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("density", help="render a Diff-Gaussian density")
    _add_dist_flags(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("sample", help="draw points from a Diff-Gaussian")
    _add_dist_flags(p)
    p.add_argument("--n", type=int, default=10000)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("render", help="rasterize a saved checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--size", default="64x64")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("targets", help="emit a procedural target image")
    p.add_argument("name", choices=TARGET_NAMES)
    p.add_argument("--size", default="64x64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cell", type=int, default=8, help="checker cell size")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_targets)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FitNumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
