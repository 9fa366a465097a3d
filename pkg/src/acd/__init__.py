"""Joint community detection and edge-anomaly detection in networks.

A network's regular edges follow a mixed-membership Poisson community model;
a global Poisson branch with a Bernoulli prior generates anomalous edges.  EM
inference returns both the memberships and a dense posterior probability that
each node pair is anomalous.
"""

from .em import FitOptions, FitResult, QMatrix, classify_anomalies, fit
from .graph import (
    Network,
    PairLabeling,
    add_pairs,
    inject_anomalies,
    load_edgelist,
    remove_pairs,
    save_edgelist,
)
from .model import Hyperparams, ModelParams
from .sampler import PlantedConfig, calibrate_sparsity, plant_parameters, sample_network

__all__ = [
    "FitOptions",
    "FitResult",
    "Hyperparams",
    "ModelParams",
    "Network",
    "PairLabeling",
    "PlantedConfig",
    "QMatrix",
    "add_pairs",
    "calibrate_sparsity",
    "classify_anomalies",
    "fit",
    "inject_anomalies",
    "load_edgelist",
    "plant_parameters",
    "remove_pairs",
    "sample_network",
    "save_edgelist",
]

__version__ = "0.1.0"
