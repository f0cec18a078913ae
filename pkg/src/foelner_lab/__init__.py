"""Følner defects of structured operators: computation, constructions, probes."""

__version__ = "0.1.0"

from .defect import DefectReport, hs_defect, opnorm_defect, phi, trace_defect
from .errors import (CertificationError, LabError, PreconditionError, ResourceError,
                     SortMismatchError, ValidationError)
from .opmodel import build_family, build_operator, truncate
from .projlib import Coordinate, Frame, coordinate_projection, join, overlap_norm, hs_distance

__all__ = [
    "__version__", "DefectReport", "hs_defect", "opnorm_defect", "phi", "trace_defect",
    "CertificationError", "LabError", "PreconditionError", "ResourceError", "SortMismatchError",
    "ValidationError", "build_family", "build_operator", "truncate", "Coordinate", "Frame",
    "coordinate_projection", "join", "overlap_norm", "hs_distance",
]
