"""Shared oracles and instance generators for the test suite."""

import numpy as np
import pytest

from negsplat.diffgauss import GaussianParams, gaussian_pdf


def ratio_min_grid_1d(g0, g1, lo=-10.0, hi=10.0, step=1e-4):
    """Brute-force minimum of f0/f1 on a 1D grid (independent oracle)."""
    x = np.arange(lo, hi + step, step)[:, None]
    r = np.exp(g0.log_pdf(x) - g1.log_pdf(x))
    i = int(np.argmin(r))
    return float(r[i]), float(x[i, 0])


def ratio_min_grid_2d(g0, g1, lo=-10.0, hi=10.0, coarse=401, stages=4):
    """Brute-force minimum of f0/f1 over a 2D box: coarse grid + local zoom."""
    lo_xy = np.array([lo, lo], dtype=np.float64)
    hi_xy = np.array([hi, hi], dtype=np.float64)
    best_val, best_xy = np.inf, None
    for _ in range(stages):
        xs = np.linspace(lo_xy[0], hi_xy[0], coarse)
        ys = np.linspace(lo_xy[1], hi_xy[1], coarse)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        r = np.exp(g0.log_pdf(pts) - g1.log_pdf(pts))
        i = int(np.argmin(r))
        if r[i] < best_val:
            best_val, best_xy = float(r[i]), pts[i]
        span = (hi_xy - lo_xy) / (coarse - 1)
        lo_xy = pts[i] - 2.0 * span
        hi_xy = pts[i] + 2.0 * span
    return best_val, best_xy


def random_gaussian(rng, dim, eig_lo=0.3, eig_hi=2.0, mean_scale=2.0):
    """Random PD Gaussian with eigenvalues in [eig_lo, eig_hi]."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = rng.uniform(eig_lo, eig_hi, size=dim)
    cov = q @ np.diag(eigs) @ q.T
    mean = rng.uniform(-mean_scale, mean_scale, size=dim)
    return GaussianParams(mean=mean, covariance=cov)


def random_psd_difference_pair(rng, dim):
    """(g0, g1) with cov0 - cov1 PSD and the ratio minimizer inside [-10, 10].

    The minimizer location is found with a local least-squares solve (kept
    independent of the implementation under test) purely to reject instances
    whose minimum would fall outside the grid oracle's box.
    """
    while True:
        g1 = random_gaussian(rng, dim, eig_lo=0.3, eig_hi=1.2)
        bump = rng.standard_normal((dim, dim)) * rng.uniform(0.4, 1.0)
        cov0 = g1.covariance + bump @ bump.T + 0.05 * np.eye(dim)
        m0 = g1.mean + rng.uniform(-1.5, 1.5, size=dim)
        inv0 = np.linalg.inv(cov0)
        inv1 = np.linalg.inv(g1.covariance)
        w, *_ = np.linalg.lstsq(inv1 - inv0, inv1 @ g1.mean - inv0 @ m0, rcond=None)
        if np.all(np.abs(w) <= 6.0):
            return GaussianParams(mean=m0, covariance=cov0), g1


def scalar_normal_pdf(mean, var, x):
    """Independent scalar normal density (no library reuse)."""
    return np.exp(-((x - mean) ** 2) / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
