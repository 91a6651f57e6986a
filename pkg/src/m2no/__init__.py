"""Multiwavelet filter banks, wavelet-multigrid solvers, and a trainable
multiwavelet-multigrid operator for elliptic problems on dyadic grids."""

__version__ = "0.1.0"

from .basis import (
    FilterBank,
    PiecewisePoly,
    build_multiwavelets,
    build_scaling_basis,
    derive_filter_bank,
)
from .estimators import M2NORegressor, MultiwaveletTransform
from .grids import Field, StencilOperator, apply_operator, make_dataset, poisson_operator, residual
from .io import load_checkpoint, read_field, read_pyramid, save_checkpoint, write_field, write_pyramid
from .krylov import Preconditioner, gmres, make_preconditioner, precondition_with_model
from .model import (
    CycleParams,
    ModelParams,
    Tape,
    backward,
    evaluate_superres,
    forward,
    init_params,
    learnable_mg_cycle,
    loss,
    loss_with_tape,
)
from .multigrid import MgHierarchy, build_hierarchy, prolong, restrict, smooth_operator, solve, v_cycle
from .spectral import Spectrum, average_spectrum, fft2, radial_spectrum
from .traces import ResidualTrace
from .training import TrainConfig, relative_l2, train
from .transforms import (
    CoeffPyramid,
    build_2d_filters,
    decompose,
    forward_1d,
    inverse_1d,
    reconstruct,
)

__all__ = [
    "CoeffPyramid",
    "CycleParams",
    "Field",
    "FilterBank",
    "M2NORegressor",
    "MgHierarchy",
    "ModelParams",
    "MultiwaveletTransform",
    "PiecewisePoly",
    "Preconditioner",
    "ResidualTrace",
    "Spectrum",
    "StencilOperator",
    "Tape",
    "TrainConfig",
    "apply_operator",
    "average_spectrum",
    "backward",
    "build_2d_filters",
    "build_hierarchy",
    "build_multiwavelets",
    "build_scaling_basis",
    "decompose",
    "derive_filter_bank",
    "evaluate_superres",
    "fft2",
    "forward",
    "forward_1d",
    "gmres",
    "init_params",
    "inverse_1d",
    "learnable_mg_cycle",
    "load_checkpoint",
    "loss",
    "loss_with_tape",
    "make_dataset",
    "make_preconditioner",
    "poisson_operator",
    "precondition_with_model",
    "prolong",
    "radial_spectrum",
    "read_field",
    "read_pyramid",
    "reconstruct",
    "relative_l2",
    "residual",
    "restrict",
    "save_checkpoint",
    "smooth_operator",
    "solve",
    "train",
    "v_cycle",
    "write_field",
    "write_pyramid",
    "__version__",
]
