"""Numerical laboratory for three-body bound states near the zero-energy threshold."""

from .model import (
    MassConfig,
    JacobiFrame,
    PairPotential,
    SystemSpec,
    build_jacobi_frame,
    separation_distances,
    moment_integrals,
    admissibility_check,
    load_system,
    dump_system,
)

__version__ = "0.1.0"

__all__ = [
    "MassConfig",
    "JacobiFrame",
    "PairPotential",
    "SystemSpec",
    "build_jacobi_frame",
    "separation_distances",
    "moment_integrals",
    "admissibility_check",
    "load_system",
    "dump_system",
    "__version__",
]
