"""Galerkin boundary elements for the Helmholtz transmission problem."""

from .operators import (
    RESOLUTION_LIMIT,
    CalderonBlocks,
    ResolutionError,
    assemble_calderon,
    check_resolution,
    mass_matrix,
    potential_matrices,
)
from .quadrature import QuadratureConfig
from .solver import (
    CauchyTraces,
    ExteriorFactorization,
    FactorizedSystem,
    FieldPointError,
    SingularSystemError,
    TransmissionSolver,
    complex_wavenumber,
    evaluate_representation,
    factorization_count,
    factorize,
    factorize_exterior,
    IncidentMoments,
    plane_wave_moments,
    plane_wave_traces,
    point_source_moments,
    point_source_traces,
    scattered_field_point_source,
    solve_transmission,
)

__all__ = [
    "RESOLUTION_LIMIT",
    "CalderonBlocks",
    "CauchyTraces",
    "ExteriorFactorization",
    "FactorizedSystem",
    "FieldPointError",
    "IncidentMoments",
    "QuadratureConfig",
    "ResolutionError",
    "SingularSystemError",
    "TransmissionSolver",
    "assemble_calderon",
    "check_resolution",
    "complex_wavenumber",
    "evaluate_representation",
    "factorization_count",
    "factorize",
    "factorize_exterior",
    "mass_matrix",
    "plane_wave_moments",
    "plane_wave_traces",
    "point_source_moments",
    "point_source_traces",
    "potential_matrices",
    "scattered_field_point_source",
    "solve_transmission",
]
