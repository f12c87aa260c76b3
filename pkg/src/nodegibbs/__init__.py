"""Minibatch node-blocked Gibbs sampling of MLP posteriors."""

from nodegibbs.mlp import (
    ActivationKind,
    GaussianPrior,
    LabeledDataset,
    MlpArchitecture,
    ParameterLayout,
    param_count,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationKind",
    "GaussianPrior",
    "LabeledDataset",
    "MlpArchitecture",
    "ParameterLayout",
    "param_count",
    "__version__",
]
