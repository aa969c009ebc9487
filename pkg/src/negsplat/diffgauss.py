"""Diff-Gaussian distributions: signed differences of two Gaussian densities.

A Diff-Gaussian is the function

    f_c(x) = (f0(x) - c * f1(x)) / (1 - c),    0 <= c < 1,

built from the densities f0, f1 of a positive and a negative Gaussian
component.  For c below an admissibility bound, f_c is itself a probability
density (nonnegative, integrates to 1).  The largest admissible c equals the
infimum of the ratio f0/f1; when cov0 - cov1 is positive semi-definite the
infimum is attained, and its minimizers form an affine set on which the
optimal density vanishes (the "witness" points).

The module provides density evaluation, the admissibility bound with its
witness set, validation, rejection sampling, and a midpoint-rule quadrature
oracle used by the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "GaussianParams",
    "DiffGaussian",
    "AffineRootSet",
    "ValidationReport",
    "gaussian_pdf",
    "diff_pdf",
    "max_admissible_c",
    "witness_points",
    "validate",
    "sample",
    "integrate_grid",
]

# Eigenvalues of cov0 - cov1 down to this value still count as PSD
# (symmetric eigensolvers routinely return tiny negatives).
PSD_EIG_TOL = -1e-10

# Singular values below this fraction of the largest are treated as zero
# when solving the witness system.
SV_REL_TOL = 1e-10

# Slack on c <= c_max in validation.
C_SLACK = 1e-12

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianParams:
    """Mean vector and SPD covariance of one n-dimensional Gaussian."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.array(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.array(self.covariance, dtype=np.float64))
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {cov.shape}")
        scale = np.abs(cov).max()
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-12 * max(scale, 1.0)):
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        # Fail fast on non-PD covariance; also seeds the Cholesky cache.
        self._chol

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def _chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive-definite") from exc

    @cached_property
    def _chol_inv(self) -> np.ndarray:
        # dim <= 3 in practice; explicit triangular inverse is fine.
        return np.linalg.inv(self._chol)

    @cached_property
    def _log_norm(self) -> float:
        # -d/2 log(2 pi) - 1/2 log det(cov)
        return -0.5 * self.dim * _LOG_2PI - float(
            np.log(np.diag(self._chol)).sum()
        )

    def log_pdf(self, x: np.ndarray) -> np.ndarray | float:
        """Log density at ``x``; ``x`` may be one point or a (..., dim) batch."""
        x = np.asarray(x, dtype=np.float64)
        scalar = x.ndim == 1
        if x.shape[-1] != self.dim:
            raise ValueError(f"point has dimension {x.shape[-1]}, expected {self.dim}")
        z = (x - self.mean) @ self._chol_inv.T
        q = np.einsum("...i,...i->...", z, z)
        out = self._log_norm - 0.5 * q
        return float(out) if scalar else out


@dataclass(frozen=True)
class DiffGaussian:
    """Positive component ``g0``, negative component ``g1``, balance ``c``."""

    g0: GaussianParams
    g1: GaussianParams
    c: float = 0.0

    def __post_init__(self):
        if self.g0.dim != self.g1.dim:
            raise ValueError("components must have matching dimension")
        if not (0.0 <= self.c < 1.0):
            raise ValueError(f"c must lie in [0, 1), got {self.c}")

    @property
    def dim(self) -> int:
        return self.g0.dim


@dataclass(frozen=True)
class AffineRootSet:
    """Affine solution set of the witness equation: base point + span."""

    base_point: np.ndarray
    directions: np.ndarray  # (k, dim), orthonormal rows; k may be 0
    exists: bool

    def points(self, coeffs: np.ndarray) -> np.ndarray:
        """Points base + coeffs @ directions; ``coeffs`` is (..., k)."""
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
        return self.base_point + coeffs @ self.directions


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    c_max: float
    witnesses: AffineRootSet


def gaussian_pdf(g: GaussianParams, x: np.ndarray) -> np.ndarray | float:
    """Multivariate normal density of ``g`` at ``x`` (point or batch)."""
    lp = g.log_pdf(x)
    return math.exp(lp) if np.isscalar(lp) else np.exp(lp)


def diff_pdf(d: DiffGaussian, x: np.ndarray) -> np.ndarray | float:
    """Diff-Gaussian density (f0 - c*f1) / (1 - c) at ``x`` (point or batch)."""
    f0 = gaussian_pdf(d.g0, x)
    if d.c == 0.0:
        return f0
    f1 = gaussian_pdf(d.g1, x)
    return (f0 - d.c * f1) / (1.0 - d.c)


def _difference_is_psd(g0: GaussianParams, g1: GaussianParams) -> bool:
    eigs = np.linalg.eigvalsh(g0.covariance - g1.covariance)
    return bool(eigs.min() >= PSD_EIG_TOL)


def witness_points(g0: GaussianParams, g1: GaussianParams) -> AffineRootSet:
    """Solve the witness system (cov1^-1 - cov0^-1) w = cov1^-1 m1 - cov0^-1 m0.

    Returns the full affine solution set: minimum-norm base point plus an
    orthonormal null-space basis.  ``exists`` is False when the system is
    inconsistent (the ratio f0/f1 then has infimum 0 and no minimizer) or
    when cov0 - cov1 is not positive semi-definite.
    """
    if g0.dim != g1.dim:
        raise ValueError("components must have matching dimension")
    dim = g0.dim
    empty = AffineRootSet(np.zeros(dim), np.zeros((0, dim)), exists=False)
    if not _difference_is_psd(g0, g1):
        return empty

    inv0 = np.linalg.inv(g0.covariance)
    inv1 = np.linalg.inv(g1.covariance)
    a_mat = inv1 - inv0
    b = inv1 @ g1.mean - inv0 @ g0.mean

    u, s, vt = np.linalg.svd(a_mat)
    s_max = s[0] if s.size else 0.0
    keep = s > SV_REL_TOL * s_max if s_max > 0.0 else np.zeros(s.shape, dtype=bool)

    beta = u.T @ b
    base = vt[keep].T @ (beta[keep] / s[keep]) if keep.any() else np.zeros(dim)
    residual = float(np.linalg.norm(a_mat @ base - b))
    scale = float(np.linalg.norm(b)) + s_max * float(np.linalg.norm(base))
    if residual > 1e-8 * max(scale, 1e-300):
        return empty
    directions = vt[~keep]
    return AffineRootSet(base_point=base, directions=directions, exists=True)


def max_admissible_c(g0: GaussianParams, g1: GaussianParams) -> float:
    """Largest c for which (f0 - c*f1)/(1-c) stays nonnegative.

    Equals the infimum of f0/f1.  When cov0 - cov1 is positive semi-definite
    and the witness system is consistent this is f0(w)/f1(w) at any witness
    w; otherwise the infimum is 0.
    """
    roots = witness_points(g0, g1)
    if not roots.exists:
        return 0.0
    w = roots.base_point
    c = math.exp(g0.log_pdf(w) - g1.log_pdf(w))
    return min(c, 1.0)


def validate(d: DiffGaussian) -> ValidationReport:
    """Check c against the admissibility bound; reports bound and witnesses."""
    roots = witness_points(d.g0, d.g1)
    if not roots.exists:
        c_max = 0.0
    else:
        c_max = min(math.exp(d.g0.log_pdf(roots.base_point) - d.g1.log_pdf(roots.base_point)), 1.0)
    return ValidationReport(valid=d.c <= c_max + C_SLACK, c_max=c_max, witnesses=roots)


def sample(d: DiffGaussian, seed: int, n: int) -> np.ndarray:
    """Draw ``n`` points from a validated Diff-Gaussian by rejection.

    Proposals come from the positive component g0; a proposal x is accepted
    with probability 1 - c*f1(x)/f0(x).  That probability equals
    (1-c)*f_c(x)/f0(x), so accepted points follow f_c, and it lies in [0, 1]
    exactly when c is admissible.  Deterministic for a fixed seed.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    report = validate(d)
    if not report.valid:
        raise ValueError(
            f"invalid Diff-Gaussian: c={d.c} exceeds c_max={report.c_max}"
        )
    rng = np.random.default_rng(seed)
    dim = d.dim
    chol0 = d.g0._chol
    out = np.empty((n, dim))
    filled = 0
    while filled < n:
        batch = max(1024, int(1.25 * (n - filled) / max(1.0 - d.c, 0.01)))
        z = rng.standard_normal((batch, dim))
        x = d.g0.mean + z @ chol0.T
        if d.c == 0.0:
            accepted = x
        else:
            log_ratio = d.g1.log_pdf(x) - d.g0.log_pdf(x)
            p_accept = 1.0 - d.c * np.exp(log_ratio)
            accepted = x[rng.random(batch) < p_accept]
        take = min(n - filled, accepted.shape[0])
        out[filled : filled + take] = accepted[:take]
        filled += take
    return out


def integrate_grid(d: DiffGaussian, bounds, resolution: int) -> float:
    """Midpoint-rule integral of the density over an axis-aligned box.

    ``bounds`` is one (lo, hi) pair per axis (a single pair is accepted for
    one dimension).  Grid quadrature only; limited to dim <= 3.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    dim = d.dim
    if dim > 3:
        raise ValueError("grid quadrature supports dim <= 3 only")
    box = np.asarray(bounds, dtype=np.float64)
    if box.ndim == 1:
        box = box[None, :]
    if box.shape != (dim, 2):
        raise ValueError(f"bounds must be {dim} (lo, hi) pairs")
    if np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("each bound must satisfy lo < hi")

    steps = (box[:, 1] - box[:, 0]) / resolution
    axes = [
        box[k, 0] + (np.arange(resolution) + 0.5) * steps[k] for k in range(dim)
    ]
    cell = float(np.prod(steps))
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)

    total = 0.0
    chunk = 1 << 20
    for start in range(0, points.shape[0], chunk):
        total += float(np.sum(diff_pdf(d, points[start : start + chunk])))
    return total * cell
