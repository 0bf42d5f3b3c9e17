"""Sparse marching-cubes extraction with topology-disambiguated case tables."""

from .audit import WatertightReport, verify_watertight
from .march import Grid, march, march_cell
from .sparse import (
    march_lattice,
    ActiveCellSet,
    ExtractionConfig,
    ExtractionStats,
    dense_extract,
    expand_active,
    extract,
    subdivide_active,
)

__all__ = [
    "ActiveCellSet",
    "ExtractionConfig",
    "ExtractionStats",
    "Grid",
    "WatertightReport",
    "dense_extract",
    "expand_active",
    "extract",
    "march",
    "march_cell",
    "march_lattice",
    "subdivide_active",
    "verify_watertight",
]
