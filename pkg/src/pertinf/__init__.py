"""Local influence analysis on perturbation manifolds."""

from ._accel import BACKEND
from .geometry import (
    AppropriatenessVerdict,
    GeodesicPath,
    GeometryAtPoint,
    PerturbedModel,
    ThetaLink,
    appropriateness_report,
    geodesic_trace,
    geometry_at,
    path_distance,
    rescale_perturbation,
    tangent_length,
)
from .measures import (
    InfluenceReport,
    ObjectiveProbe,
    classical_curvatures,
    covariant_hessian,
    eigen_influence,
    fi_maximizer,
    first_order_influence,
    influence_report,
    second_order_influence,
    standardized_si,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AppropriatenessVerdict",
    "GeodesicPath",
    "GeometryAtPoint",
    "InfluenceReport",
    "ObjectiveProbe",
    "PerturbedModel",
    "ThetaLink",
    "appropriateness_report",
    "classical_curvatures",
    "covariant_hessian",
    "eigen_influence",
    "fi_maximizer",
    "first_order_influence",
    "geodesic_trace",
    "geometry_at",
    "influence_report",
    "path_distance",
    "rescale_perturbation",
    "second_order_influence",
    "standardized_si",
    "tangent_length",
]
