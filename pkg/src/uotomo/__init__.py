"""Ultrasound modulated optical tomography in two dimensions.

Forward simulation of modulated diffusion measurements on a Q1 finite
element grid, reconstruction of the absorption by fixed-point iteration, and
checks of the linearized problem.
"""
__version__ = "0.1.0"

from .grid_fem import NodalField, RegularGrid, build_grid  # noqa: E402
from .optics_model import OpticalCoefficients, ScanGrid, UltrasoundShape, make_phantom  # noqa: E402
from .forward_sim import MeasurementSet, SourceSpec, measure_adjoint, measure_direct  # noqa: E402
from .recon import Background, ReconConfig, run_reconstruction  # noqa: E402

__all__ = [
    "NodalField", "RegularGrid", "build_grid", "OpticalCoefficients", "ScanGrid",
    "UltrasoundShape", "make_phantom", "MeasurementSet", "SourceSpec", "measure_adjoint",
    "measure_direct", "Background", "ReconConfig", "run_reconstruction",
]
