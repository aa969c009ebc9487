"""Acceptance suite: one test per criterion, each printing PASS/FAIL.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings.
"""

import math
import time

import numpy as np
import pytest

from negsplat.cli import main as cli_main
from negsplat.diffgauss import (
    DiffGaussian,
    GaussianParams,
    diff_pdf,
    gaussian_pdf,
    integrate_grid,
    max_admissible_c,
    sample,
    witness_points,
)
from negsplat.metrics import quantize
from negsplat.model import SplatModel
from negsplat.optim import FitConfig, fit
from negsplat.ppm import write_ppm
from negsplat.renderer import backward, pixel_response, render
from negsplat.targets import make_target

from conftest import random_psd_difference_pair, ratio_min_grid_1d, ratio_min_grid_2d
from test_model import make_splat
from test_renderer import assert_grads_close, fd_gradient


def report(criterion, name, elapsed, limit):
    status = "PASS" if elapsed < limit else f"OVER TIME LIMIT ({limit}s)"
    print(f"ACCEPTANCE {criterion} ({name}): {status} [{elapsed:.1f}s]")
    assert elapsed < limit, f"criterion {criterion} exceeded {limit}s ({elapsed:.1f}s)"


def test_criterion_1_distribution_correctness():
    start = time.time()
    rng = np.random.default_rng(101)
    for trial in range(100):
        dim = 1 + trial % 2
        g0, g1 = random_psd_difference_pair(rng, dim)
        c_max = max_admissible_c(g0, g1)
        oracle = (
            ratio_min_grid_1d(g0, g1)[0] if dim == 1 else ratio_min_grid_2d(g0, g1)[0]
        )
        assert abs(c_max - oracle) < 1e-4, f"instance {trial}: {c_max} vs {oracle}"

        roots = witness_points(g0, g1)
        assert roots.exists
        w = roots.base_point
        d = DiffGaussian(g0=g0, g1=g1, c=c_max)
        assert abs(diff_pdf(d, w)) <= 1e-10 * gaussian_pdf(g0, w)

        if dim == 1:
            total = integrate_grid(d, (-16.0, 16.0), 4096)
            assert abs(total - 1.0) <= 1e-6, f"instance {trial}: 1D integral {total}"
        else:
            total = integrate_grid(d, ((-16.0, 16.0), (-16.0, 16.0)), 512)
            assert abs(total - 1.0) <= 1e-4, f"instance {trial}: 2D integral {total}"
    report(1, "distribution correctness", time.time() - start, 60.0)


def test_criterion_2_corollary_suite():
    start = time.time()
    rng = np.random.default_rng(202)
    # case (i): strictly shrunk variances, coordinate-wise witness formula
    for _ in range(50):
        dim = int(rng.integers(1, 4))
        sig = rng.uniform(0.5, 1.5, size=dim)
        h = rng.uniform(0.2, 0.9, size=dim)
        m0 = rng.uniform(-1.5, 1.5, size=dim)
        m1 = rng.uniform(-1.5, 1.5, size=dim)
        g0 = GaussianParams(mean=m0, covariance=np.diag(sig**2))
        g1 = GaussianParams(mean=m1, covariance=np.diag(h * sig**2))
        roots = witness_points(g0, g1)
        assert roots.exists and roots.directions.shape[0] == 0
        formula = (m1 - h * m0) / (1.0 - h)
        assert np.max(np.abs(roots.base_point - formula)) < 1e-12
    # case (ii): one unit ratio with matching means leaves a free direction
    # along which the optimal density vanishes
    for _ in range(10):
        sig = rng.uniform(0.5, 1.5, size=2)
        h0 = rng.uniform(0.2, 0.8)
        shared = rng.uniform(-1, 1)
        m0 = np.array([rng.uniform(-1, 1), shared])
        m1 = np.array([rng.uniform(-1, 1), shared])
        g0 = GaussianParams(mean=m0, covariance=np.diag(sig**2))
        g1 = GaussianParams(mean=m1, covariance=np.diag([h0 * sig[0] ** 2, sig[1] ** 2]))
        roots = witness_points(g0, g1)
        assert roots.exists and roots.directions.shape == (1, 2)
        c = max_admissible_c(g0, g1)
        d = DiffGaussian(g0=g0, g1=g1, c=c)
        probes = roots.points(np.linspace(-3, 3, 100)[:, None])
        assert np.max(np.abs(diff_pdf(d, probes))) < 1e-10
    report(2, "diagonal witness formulas", time.time() - start, 10.0)


DONUT = DiffGaussian(
    g0=GaussianParams(mean=[0.0, 0.0], covariance=np.eye(2)),
    g1=GaussianParams(mean=[0.0, 0.0], covariance=0.25 * np.eye(2)),
    c=0.25,
)


def test_criterion_3_sampler():
    start = time.time()
    # acceptance rate over 1e5 proposals within 3 binomial standard errors
    g0 = GaussianParams(mean=[0.0], covariance=[[1.0]])
    g1 = GaussianParams(mean=[0.0], covariance=[[0.25]])
    c = 0.5
    n_prop = 100_000
    rng = np.random.default_rng(303)
    x = rng.standard_normal((n_prop, 1))
    p = 1.0 - c * np.exp(g1.log_pdf(x) - g0.log_pdf(x))
    rate = float(np.mean(rng.random(n_prop) < p))
    se = math.sqrt((1 - c) * c / n_prop)
    assert abs(rate - (1.0 - c)) < 3.0 * se

    # donut hole: expected mass from the quadrature oracle + 3 sigma slack
    pts = sample(DONUT, seed=304, n=10_000)
    inside = float(np.mean(np.linalg.norm(pts, axis=1) < 0.3))
    grid = 601
    xs = np.linspace(-0.3, 0.3, grid)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    probe = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    vals = diff_pdf(DONUT, probe)
    disc = (probe**2).sum(axis=1) < 0.09
    mass = float(np.sum(vals[disc]) * (0.6 / (grid - 1)) ** 2)
    sigma = math.sqrt(mass * (1.0 - mass) / 10_000)
    assert inside <= mass + 3.0 * sigma + 1e-4
    assert inside < 0.01
    report(3, "rejection sampler", time.time() - start, 30.0)


def test_criterion_4_renderer():
    start = time.time()
    rng = np.random.default_rng(404)
    # tiling invariance, bitwise
    from test_model import random_model

    for _ in range(3):
        m = random_model(rng, 24)
        frames = [render(m, 56, 40, tile_size=t).pixels for t in (8, 16, 32)]
        assert np.array_equal(frames[0], frames[1])
        assert np.array_equal(frames[0], frames[2])

    # matched +/- pair: exact residual c * a^2 (all-dyadic construction)
    base = dict(position=np.array([8.5, 8.5]), log_scales=np.zeros(2),
                rotation=0.0, color=np.array([1.0, 1.0, 1.0]))
    twins = SplatModel.from_splats(
        [make_splat(**base, opacity_logit=0.0, depth=0.5),
         make_splat(**base, opacity_logit=0.0, depth=0.5)],
        [False, True],
        background=(0.0, 0.0, 0.0),
    )
    frame = render(twins, 17, 17, clamp_mode="none")
    assert frame.pixels[8, 8, 0] == 0.25  # a = 1/2 exactly at the mean
    resp = pixel_response(twins[0], (9.5, 8.5))
    assert frame.pixels[8, 9, 0] == pytest.approx(resp * resp, rel=1e-12)

    # analytic vs central finite differences on 50 random 8x8 scenes
    for trial in range(50):
        m = SplatModel(
            positions=rng.uniform(1, 7, size=(5, 2)),
            log_scales=rng.uniform(-0.5, 0.8, size=(5, 2)),
            rotations=rng.uniform(-2, 2, size=5),
            opacity_logits=rng.uniform(-1.5, 1.0, size=5),
            colors=rng.uniform(0.1, 0.9, size=(5, 3)),
            depths=rng.uniform(0, 1, size=5),
            sign_mask=rng.random(5) < 0.4,
            background=rng.uniform(0, 1, size=3),
        )
        frame_grad = rng.standard_normal((8, 8, 3))
        frame = render(m, 8, 8)
        analytic = backward(m, frame_grad, frame)
        numeric = fd_gradient(m, frame_grad, 8, 8)
        assert_grads_close(analytic, numeric, rtol=1e-4, floor=1e-6)
    report(4, "renderer forward/backward", time.time() - start, 120.0)


def test_criterion_5_fitting_sanity():
    start = time.time()
    cfg = FitConfig(iterations=200, n_splats_init=1, neg_fraction=0.0, seed=0)
    _, rep = fit(np.full((64, 64, 3), 0.5), cfg)
    assert rep.final_psnr > 30.0, f"constant-target PSNR {rep.final_psnr:.2f} <= 30"
    report(5, "fitting sanity", time.time() - start, 10.0)


@pytest.fixture(scope="module")
def sweep_results(tmp_path_factory):
    """Full ablation sweep on ring and checker via the CLI (criteria 6+7)."""
    root = tmp_path_factory.mktemp("sweep")
    start = time.time()
    results = {}
    for name in ("ring", "checker"):
        assert cli_main(["targets", name, "--size", "64x64", "--out", str(root)]) == 0
        out = root / f"ablate_{name}"
        code = cli_main([
            "ablate", str(root / f"{name}.ppm"),
            "--fractions", "0,0.1,0.2,0.3,0.5",
            "--seeds", "0,1,2,3,4",
            "--iters", "2000", "--splats", "64",
            "--out", str(out),
        ])
        assert code == 0
        rows = {}
        lines = (out / "ablate.tsv").read_text().splitlines()
        header = lines[0].split("\t")
        for line in lines[1:]:
            rec = dict(zip(header, line.split("\t")))
            rows[float(rec["neg_fraction"])] = rec
        results[name] = rows
    return results, time.time() - start


def test_criterion_6_negative_gaussian_benefit(sweep_results):
    results, elapsed = sweep_results
    for name in ("ring", "checker"):
        rows = results[name]
        assert set(rows) == {0.0, 0.1, 0.2, 0.3, 0.5}
        base = float(rows[0.0]["psnr_mean"])
        with_neg = float(rows[0.2]["psnr_mean"])
        print(f"  {name}: mean PSNR neg=0.0 -> {base:.2f} dB, neg=0.2 -> {with_neg:.2f} dB")
        assert with_neg >= base - 0.1, (
            f"{name}: PSNR at neg_fraction 0.2 ({with_neg:.2f}) fell more than "
            f"0.1 dB below the baseline ({base:.2f})"
        )
    report(6, "negative-splat benefit sweep", elapsed, 900.0)


def test_criterion_7_component_count_report(sweep_results):
    results, _ = sweep_results
    for name in ("ring", "checker"):
        rows = results[name]
        print(f"  {name} final splat totals by fraction:")
        for frac in (0.0, 0.1, 0.2, 0.3, 0.5):
            rec = rows[frac]
            per_seed = [int(x) for x in rec["per_seed_total"].split(",")]
            assert len(per_seed) == 5
            print(f"    neg={frac:.1f}: mean={rec['total_mean']}, per-seed={per_seed}")
    report(7, "component-count report", 0.0, 1.0)


def test_criterion_8_determinism(tmp_path):
    start = time.time()
    target = tmp_path / "flat.ppm"
    write_ppm(target, np.full((64, 64, 3), 0.5))
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / f"fit_{run}"
        code = cli_main([
            "fit", str(target), "--iters", "200", "--splats", "1",
            "--neg-fraction", "0", "--seed", "0", "--out", str(out),
        ])
        assert code == 0
        outputs.append({
            "report": (out / "report.txt").read_bytes(),
            "render": (out / "render.ppm").read_bytes(),
            "ckpt": (out / "checkpoint.json").read_bytes(),
        })
    assert outputs[0] == outputs[1]

    for run in ("a", "b"):
        assert cli_main([
            "sample", "--m0", "0,0", "--m1", "0,0", "--cov0", "1,0,1",
            "--cov1", "0.25,0,0.25", "--c", "max", "--n", "5000", "--seed", "5",
            "--out", str(tmp_path / f"s_{run}"),
        ]) == 0
        assert cli_main([
            "density", "--m0", "0,0", "--m1", "0,0", "--cov0", "1,0,1",
            "--cov1", "0.25,0,0.25", "--c", "max",
            "--out", str(tmp_path / f"d_{run}"),
        ]) == 0
    assert (tmp_path / "s_a/samples.txt").read_bytes() == (
        tmp_path / "s_b/samples.txt"
    ).read_bytes()
    assert (tmp_path / "s_a/scatter.pgm").read_bytes() == (
        tmp_path / "s_b/scatter.pgm"
    ).read_bytes()
    assert (tmp_path / "d_a/density.pgm").read_bytes() == (
        tmp_path / "d_b/density.pgm"
    ).read_bytes()

    # repeated small ablation cell, byte-identical table
    ring = tmp_path / "ring.ppm"
    write_ppm(ring, make_target("ring", 48, 48))
    for run in ("a", "b"):
        assert cli_main([
            "ablate", str(ring), "--fractions", "0,0.2", "--seeds", "0",
            "--iters", "50", "--splats", "8", "--out", str(tmp_path / f"ab_{run}"),
        ]) == 0
    assert (tmp_path / "ab_a/ablate.tsv").read_bytes() == (
        tmp_path / "ab_b/ablate.tsv"
    ).read_bytes()
    report(8, "determinism", time.time() - start, 120.0)
