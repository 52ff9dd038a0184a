"""Mirror bodies invisible from a point, built from confocal ellipse and
hyperbola arcs, with a billiard tracer and numerical invisibility checks."""

from .billiard import Tolerances, Trajectory, trace2d, trace2d_batch, trace3d, trace3d_batch, trace3d_oracle
from .construction import (Body2D, Body3D, BodyKind, BoundaryArc, ConstructionError, ConstructionParams,
                           DegenerateParameters, InvalidEccentricity, InvalidInclinations, InvalidScale,
                           build_body2d, build_body3d, derive_params)
from .geom2d import FrameMap, Ray2, reflect_direction
from .verify import (InvisibilityReport, RayClass, classify_ray, connectivity_probe, negative_control,
                     verify_invisibility)

__version__ = "0.1.0"

__all__ = [
    "Body2D", "Body3D", "BodyKind", "BoundaryArc", "ConstructionError", "ConstructionParams",
    "DegenerateParameters", "FrameMap", "InvalidEccentricity", "InvalidInclinations", "InvalidScale",
    "InvisibilityReport", "Ray2", "RayClass", "Tolerances", "Trajectory", "build_body2d", "build_body3d",
    "classify_ray", "connectivity_probe", "derive_params", "negative_control", "reflect_direction",
    "trace2d", "trace2d_batch", "trace3d", "trace3d_batch", "trace3d_oracle", "verify_invisibility",
]
