"""Thermoacoustic imaging in attenuating media: kernels, forward data, inversion, reconstruction."""
from .attenuation import (
    AttenuationLaw,
    CausalityReport,
    FrequencyGrid,
    LawKind,
    alpha_star,
    causality_diagnostic,
    complex_power,
    fig1_curves,
    k1_hat,
    wavenumber,
)
from .errors import (
    ConfigError,
    DomainError,
    GridResolutionError,
    LossyTatError,
    QuadratureError,
    SolverError,
)
from .forward import (
    PressureSignal,
    ProjectionSignal,
    add_noise,
    attenuated_line_data,
    attenuated_planar_data,
    attenuated_point_data,
    green_forward,
    ideal_point_pressure,
)
from .inverse import Regularizer, VolterraInverter, deattenuate, discrepancy_select, solve_projection
from .kernels import (
    KernelKind,
    KernelMatrix,
    Pulse,
    TimeGrid,
    convolve_pulse,
    m_hat,
    m_matrix,
    n_line,
    n_planar,
    n_point,
)
from .projections import (
    Ball,
    DetectorSet,
    Phantom,
    circular_projection,
    line_integral,
    planar_projection,
    spherical_projection,
)
from .recon import RadonRecord, VolumeGrid, planar_projection_recovery, spherical_backprojection

__version__ = "0.1.0"

__all__ = [
    "AttenuationLaw",
    "Ball",
    "CausalityReport",
    "ConfigError",
    "DetectorSet",
    "DomainError",
    "FrequencyGrid",
    "GridResolutionError",
    "KernelKind",
    "KernelMatrix",
    "LawKind",
    "LossyTatError",
    "Phantom",
    "PressureSignal",
    "ProjectionSignal",
    "Pulse",
    "QuadratureError",
    "RadonRecord",
    "Regularizer",
    "SolverError",
    "TimeGrid",
    "VolterraInverter",
    "VolumeGrid",
    "add_noise",
    "alpha_star",
    "attenuated_line_data",
    "attenuated_planar_data",
    "attenuated_point_data",
    "causality_diagnostic",
    "circular_projection",
    "complex_power",
    "convolve_pulse",
    "deattenuate",
    "discrepancy_select",
    "fig1_curves",
    "green_forward",
    "ideal_point_pressure",
    "k1_hat",
    "line_integral",
    "m_hat",
    "m_matrix",
    "n_line",
    "n_planar",
    "n_point",
    "planar_projection",
    "planar_projection_recovery",
    "solve_projection",
    "spherical_backprojection",
    "spherical_projection",
    "wavenumber",
]
