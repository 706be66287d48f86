"""mpifield: a multiplane-image light-field engine.

Reconstructs an MPI scene representation from posed, appearance-varying
photo collections, synthesizes novel views under interpolatable
appearance, and exports baked assets for an interactive viewer.
"""

from . import autodiff, defaults, geometry, metrics, mpi, psv, synthetic
from .appearance import AppearanceModel, interpolate_appearance, render_4d
from .errors import (
    DataError,
    DivergenceError,
    GeometryError,
    MpiFieldError,
    NumericalError,
    ShapeError,
)
from .mpi import MultiplaneImage, PlaneRenderer, composite, compositing_weights
from .stage1 import Stage1Reconstructor, evaluate_mpi, recon_loss

__version__ = "0.1.0"

__all__ = [
    "AppearanceModel",
    "DataError",
    "DivergenceError",
    "GeometryError",
    "MpiFieldError",
    "MultiplaneImage",
    "NumericalError",
    "PlaneRenderer",
    "ShapeError",
    "Stage1Reconstructor",
    "__version__",
    "autodiff",
    "composite",
    "compositing_weights",
    "defaults",
    "evaluate_mpi",
    "geometry",
    "interpolate_appearance",
    "metrics",
    "mpi",
    "psv",
    "recon_loss",
    "render_4d",
    "synthetic",
]
