"""Signed 2D Gaussian splatting and the Diff-Gaussian distribution family."""

from .diffgauss import (
    AffineRootSet,
    DiffGaussian,
    GaussianParams,
    diff_pdf,
    gaussian_pdf,
    integrate_grid,
    max_admissible_c,
    sample,
    validate,
    witness_points,
)
from .model import (
    CheckpointError,
    Splat2D,
    SplatModel,
    build_covariance,
    load_checkpoint,
    save_checkpoint,
    signed_color,
)
from .renderer import (
    ParamGradients,
    RenderFrame,
    available_backends,
    backward,
    default_backend,
    pixel_response,
    render,
)

__version__ = "0.1.0"
