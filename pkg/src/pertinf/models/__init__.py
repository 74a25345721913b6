from .covariance import (
    CompoundSymmetry,
    CovarianceStructure,
    ScaledIdentity,
    VarianceFunctionLinearAR,
    get_structure,
)
from .data import Cluster, ClusteredDataset
from .families import get_density
from .fit import ModelFit, fit_model
from .lmm import DeltaMatrix, LMMEngine, lmm_cluster_shift_scheme, lmm_covariance_scheme, lmm_mean_shift_scheme
from .probes import (
    displacement_matrix,
    for_model,
    ld_probe,
    ld_value,
    loglik_ratio_probe,
    push_probe,
    rss_probe,
    rss_value,
)
from .schemes import (
    case_weight_scheme,
    explanatory_scheme,
    location_scale_schemes,
    loglinear_scheme,
    regression_variance_scheme,
)

__all__ = [
    "Cluster",
    "ClusteredDataset",
    "CompoundSymmetry",
    "CovarianceStructure",
    "DeltaMatrix",
    "LMMEngine",
    "ModelFit",
    "ScaledIdentity",
    "VarianceFunctionLinearAR",
    "case_weight_scheme",
    "displacement_matrix",
    "explanatory_scheme",
    "fit_model",
    "for_model",
    "get_density",
    "get_structure",
    "ld_probe",
    "ld_value",
    "lmm_cluster_shift_scheme",
    "lmm_covariance_scheme",
    "lmm_mean_shift_scheme",
    "location_scale_schemes",
    "loglik_ratio_probe",
    "loglinear_scheme",
    "push_probe",
    "regression_variance_scheme",
    "rss_probe",
    "rss_value",
]
