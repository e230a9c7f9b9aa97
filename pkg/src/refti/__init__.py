"""Bayesian model evidence by referenced thermodynamic integration."""

__version__ = "0.1.0"

from refti.density import Density, ParamSpace, TemperedDensity, contains, log_ratio, log_tempered  # noqa: E402
from refti.estimators import (  # noqa: E402
    bayes_factor_matrix,
    laplace_evidence,
    model_switch_ti,
    power_posterior_evidence,
)
from refti.reference import (  # noqa: E402
    GaussianReference,
    log_zref,
    reference_diagonal_orthant,
    reference_from_mode,
    reference_from_samples,
    reference_variational,
)
from refti.sampler import SamplerConfig, compute_rhat, expectation_of_log_ratio, sample  # noqa: E402
from refti.ti import (  # noqa: E402
    EvidenceResult,
    LambdaSchedule,
    TelescopicSchedule,
    referenced_ti,
    spline_integral,
    telescopic_ti,
)

__all__ = [
    "Density", "ParamSpace", "TemperedDensity", "contains", "log_ratio", "log_tempered",
    "SamplerConfig", "sample", "compute_rhat", "expectation_of_log_ratio",
    "GaussianReference", "log_zref", "reference_from_mode", "reference_from_samples",
    "reference_diagonal_orthant", "reference_variational",
    "LambdaSchedule", "EvidenceResult", "TelescopicSchedule", "referenced_ti", "telescopic_ti",
    "spline_integral", "laplace_evidence", "power_posterior_evidence", "model_switch_ti",
    "bayes_factor_matrix",
]
