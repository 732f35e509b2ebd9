"""Disentangling correlated factors by conditional-mutual-information minimization.

Closed-form linear-Gaussian encoders, exact discrete information theory,
adversarial latent-subspace-shuffling training, and correlation-shift
robustness evaluation.
"""

from .estimator import SubspaceEncoderClassifier
from .evaluation import (
    accuracy_sweep,
    gaussian_total_correlation,
    metric_report,
    mig,
    sap,
)
from .infotheory import (
    DiscreteJoint,
    conditional_mi,
    entropy,
    independence_counterexample_search,
    interaction_information,
    mutual_information,
)
from .linear_gaussian import (
    LinearGaussianModel,
    base_solution,
    cmi_constrained_solution,
    make_correlated_covariance,
    mi_constrained_solution,
    sweep_test_correlation,
    variance_explained,
)
from .presets import fit_toy_objective, get_preset
from .training import (
    SubspaceLayout,
    TrainConfig,
    encode,
    load_models,
    predict,
    save_models,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "DiscreteJoint",
    "LinearGaussianModel",
    "SubspaceEncoderClassifier",
    "SubspaceLayout",
    "TrainConfig",
    "accuracy_sweep",
    "base_solution",
    "cmi_constrained_solution",
    "conditional_mi",
    "encode",
    "entropy",
    "fit_toy_objective",
    "gaussian_total_correlation",
    "get_preset",
    "independence_counterexample_search",
    "interaction_information",
    "load_models",
    "metric_report",
    "mi_constrained_solution",
    "mig",
    "make_correlated_covariance",
    "mutual_information",
    "predict",
    "sap",
    "save_models",
    "sweep_test_correlation",
    "train",
    "variance_explained",
]
